// Copyright (c) 2026 The retroroof Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include "retroroof/pipeline/config.hpp"
#include "retroroof/pipeline/dataset.hpp"
#include "retroroof/pipeline/experiment.hpp"
#include "retroroof/pipeline/review.hpp"
#include "retroroof/pipeline/synthetic.hpp"
