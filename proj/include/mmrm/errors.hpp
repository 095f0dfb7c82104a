// Copyright 2026 The mmrm-lab Authors.
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

namespace mmrm {

// Every error thrown by the library derives from LabError so the CLI can map
// it to an exit code in one place.
class LabError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public LabError {
 public:
  using LabError::LabError;
};

class ConfigError : public LabError {
 public:
  using LabError::LabError;
};

class DomainError : public LabError {
 public:
  using LabError::LabError;
};

// Raised when an optimizer is stepped past its configured schedule.
class RunCompleteError : public LabError {
 public:
  using LabError::LabError;
};

class GenerationError : public LabError {
 public:
  using LabError::LabError;
};

// A metric whose inputs make it undefined (empty subset, zero variance).
class UndefinedMetricError : public LabError {
 public:
  using LabError::LabError;
};

class IoError : public LabError {
 public:
  using LabError::LabError;
};

// A command ran before the artifacts it consumes were produced.
class OrderingError : public LabError {
 public:
  using LabError::LabError;
};

}  // namespace mmrm
