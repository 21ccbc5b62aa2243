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

#ifndef SPA_VALIDATION_HPP_
#define SPA_VALIDATION_HPP_

#include <string>
#include <string_view>
#include <vector>

namespace spa {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Suites: analytic, nonneg, telescope, exactness, corrections, all.
/// Throws kInvalidConfig for any other name.
std::vector<CheckResult> run_validation_suite(std::string_view suite);

std::vector<std::string_view> validation_suite_names();

}  // namespace spa

#endif  // SPA_VALIDATION_HPP_
