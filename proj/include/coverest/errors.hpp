// Copyright 2026 The CoverEst Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace coverest {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Window/raster dimensions that do not fit together.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values or malformed config files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures; messages carry the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed or version-incompatible on-disk data (CRAS, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite values during training or evaluation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward() without a recorded forward().
class UsageError : public Error {
 public:
  using Error::Error;
};

// Collects non-fatal conditions (constant channels, undersized tiles) so
// callers and tests can observe them without parsing log output.
struct Warnings {
  std::vector<std::string> messages;

  void add(std::string msg);
  bool empty() const { return messages.empty(); }
};

}  // namespace coverest
