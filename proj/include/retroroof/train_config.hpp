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

#include <cstdint>

#include <nlohmann/json.hpp>

namespace retroroof {

/// Settings shared by every trainer. Module-specific trainers extend it.
struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  std::uint64_t seed = 0;
  double val_fraction = 0.125;  // share of samples held out for validation
  bool verbose = false;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},   {"batch_size", c.batch_size},     {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},     {"seed", c.seed},                 {"val_fraction", c.val_fraction},
       {"verbose", c.verbose}};
}

/// Missing keys keep the values already in `c`, so module-specific defaults
/// survive a partial config.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.seed = j.value("seed", c.seed);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.verbose = j.value("verbose", c.verbose);
}

}  // namespace retroroof
