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

#include <stdexcept>
#include <string>

namespace retroroof {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A raster carried the wrong channel layout for the operation.
class ChannelMismatch : public Error {
 public:
  using Error::Error;
};

/// Two operands disagree on their spatial or sample dimensions.
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity appeared in an activation or loss.
class NumericFault : public Error {
 public:
  using Error::Error;
};

class TilingError : public Error {
 public:
  using Error::Error;
};

/// Stitching was asked to assemble a mosaic with missing tiles.
class CoverageError : public Error {
 public:
  using Error::Error;
};

/// Dataset or file content failed a structural check. The message names the
/// offending record.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss and was aborted.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage failed; `stage()` names it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace retroroof
