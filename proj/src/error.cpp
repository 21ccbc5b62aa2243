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

#include "spa/error.hpp"

namespace spa {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::kNotSymmetric: return "NotSymmetric";
    case ErrorCode::kSingularFactor: return "SingularFactor";
    case ErrorCode::kInvalidMask: return "InvalidMask";
    case ErrorCode::kRhoOutOfRange: return "RhoOutOfRange";
    case ErrorCode::kGammaOutOfRange: return "GammaOutOfRange";
    case ErrorCode::kOrderViolation: return "OrderViolation";
    case ErrorCode::kNegativeAttention: return "NegativeAttention";
    case ErrorCode::kNotLowerTriangular: return "NotLowerTriangular";
    case ErrorCode::kZeroRowSum: return "ZeroRowSum";
    case ErrorCode::kShortcutTooLarge: return "ShortcutTooLarge";
    case ErrorCode::kDegenerateDiagonal: return "DegenerateDiagonal";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kExactnessViolated: return "ExactnessViolated";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

bool is_config_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kRhoOutOfRange:
    case ErrorCode::kGammaOutOfRange:
    case ErrorCode::kOrderViolation:
    case ErrorCode::kShortcutTooLarge:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kInvalidMask:
    case ErrorCode::kNotLowerTriangular:
      return true;
    default:
      return false;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

Error Error::with_block(long block) const {
  Error copy(*this);
  copy.block_ = block;
  return copy;
}

}  // namespace spa
