// Copyright 2026 The rvqa Authors
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

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace rvqa {

/// Config-driven subcommands: completeness, probe-phone, probe-pitch,
/// probe-speaker, eer, finetune, rd-sweep, pca-export.
const std::vector<std::string>& experiment_commands();

/// Runs `command` on a JSON config. Relative paths in the config resolve
/// against `base_dir`. The whole config is validated before any data is read
/// and all data is read before any output is written. Reports go to the
/// configured output directory (RVQA_OUTPUT_DIR overrides it); the report of
/// the command is also returned.
///
/// rd-sweep keeps the rows that succeeded when others fail: the reports are
/// written with the failed rows marked, then the first failure is rethrown
/// with its original error class.
nlohmann::ordered_json run_experiment(const std::string& command, const nlohmann::json& config,
                                      const std::filesystem::path& base_dir = ".");

/// Reads the config file and runs it with base_dir set to the file's folder.
nlohmann::ordered_json run_experiment_file(const std::string& command,
                                           const std::filesystem::path& config_path);

}  // namespace rvqa
