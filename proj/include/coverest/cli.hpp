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

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace coverest {

inline constexpr const char* kToolVersion = "0.1.0";

// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumerical = 4,
};

// Entry point shared by the binary and the tests. args excludes argv[0].
int run_cli(const std::vector<std::string>& args);

// Content digest of a dataset directory: SHA-256 over the manifest and every
// raster/mask it references, in manifest order.
std::string dataset_digest(const std::filesystem::path& root);

// Reads and parses a JSON file; parse errors become ConfigError with the
// line/column, missing files IoError.
nlohmann::json read_json_config(const std::filesystem::path& path);

}  // namespace coverest
