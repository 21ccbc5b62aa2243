/*
 * Copyright 2026 The spa-kernels Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef SPA_CLI_HPP_
#define SPA_CLI_HPP_

#include <iosfwd>
#include <string_view>

#include "spa/propagation.hpp"

namespace spa {

inline constexpr std::string_view kVersion = "0.1.0";

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitValidationFailed = 1,
  kExitConfigError = 2,
  kExitNumericFailure = 3,
};

struct OutputControls {
  std::vector<Index> dump_blocks;   // block indices to write matrices for
  std::vector<std::string> metrics; // metric columns to emit
};

struct EvolveConfig {
  StackConfig stack;
  OutputControls output;
  std::string input_kernel = "sampled";  // sampled, identity, expected or a matrix file
};

/// Parses a kernel-evolve INI document. Sections [stack], [block], [block.N]
/// (overrides for 1-based block N) and [output]; keys mirror StackConfig and
/// BlockSpec field names. Unknown sections or keys throw kInvalidConfig.
EvolveConfig parse_evolve_config(std::string_view text);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

}  // namespace spa

#endif  // SPA_CLI_HPP_
