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

#ifndef SPA_ERROR_HPP_
#define SPA_ERROR_HPP_

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace spa {

enum class ErrorCode {
  kNotPositiveDefinite,
  kNotSymmetric,
  kSingularFactor,
  kInvalidMask,
  kRhoOutOfRange,
  kGammaOutOfRange,
  kOrderViolation,
  kNegativeAttention,
  kNotLowerTriangular,
  kZeroRowSum,
  kShortcutTooLarge,
  kDegenerateDiagonal,
  kDimensionMismatch,
  kExactnessViolated,
  kInvalidConfig,
};

std::string_view to_string(ErrorCode code);

/// True for errors caused by bad user input (CLI exit code 2) as opposed to
/// numerical breakdown during a computation (exit code 3).
bool is_config_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

  /// Block index the failure was raised in, when it came out of a stack run.
  std::optional<long> block() const noexcept { return block_; }
  Error with_block(long block) const;

 private:
  ErrorCode code_;
  std::optional<long> block_;
};

}  // namespace spa

#endif  // SPA_ERROR_HPP_
