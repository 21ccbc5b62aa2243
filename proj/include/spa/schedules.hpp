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

#ifndef SPA_SCHEDULES_HPP_
#define SPA_SCHEDULES_HPP_

#include <vector>

#include "spa/kernel_families.hpp"

namespace spa {

inline constexpr double kDefaultGammaFinal = 0.005;
inline constexpr double kDefaultRhoFinal = 0.8;

/// Decay rates gamma_0 = inf > gamma_1 > ... > gamma_L, chosen so the E-SPA
/// attention diagonal a(gamma_l) / a(gamma_{l-1}) is the same in every block.
struct DecaySchedule {
  Index depth = 0;
  std::vector<DecayRate> gammas;  // depth + 1 entries
  std::vector<double> helper;     // a_l = a(gamma_l) = a_L^(l/L)

  DecayRate terminal() const { return gammas.back(); }
};

struct UniformSchedule {
  Index depth = 0;
  std::vector<double> rhos;  // depth + 1 entries, rhos[0] = repeated_fraction
  double repeated_fraction = 0.0;
};

/// Expected-diagonal corrections for repeated tokens, one vector per block.
struct DiagonalCorrection {
  std::vector<Vector> diagonals;  // diagonals[0] is all ones
};

DecaySchedule espa_schedule(Index depth, double gamma_final);

/// Linear interpolation from r to rho_final.
UniformSchedule uspa_schedule(Index depth, double rho_final, double repeated_fraction);

/// diag(L_l Sbar L_lᵀ) for the averaged input kernel Sbar = (1 - r) I + r 11ᵀ
/// with L_l the analytic exponential Cholesky factor of block l.
DiagonalCorrection repeated_token_corrections(const DecaySchedule& schedule, Index size,
                                              double repeated_fraction);

/// Block `block` (1-based) E-SPA attention rescaled to keep the expected
/// diagonal at one: Dbar_l^{-1/2} L_l L_{l-1}^{-1} Dbar_{l-1}^{1/2}.
AttentionOperator corrected_attention(Index block, const DecaySchedule& schedule,
                                      const DiagonalCorrection& correction, Index size,
                                      double neg_bias = kDefaultNegBias);

/// Outgoing decay rate that keeps the off-diagonal dilution of a normalised
/// skip block (shortcut weight alpha) equal to the skipless one.
///
/// With lambda_0 = a(target) / a(prev), the attention diagonal becomes
/// lambda_alpha = sqrt((lambda_0^2 - alpha^2) / (1 - alpha^2)) and the rate
/// is -log(1 - lambda_alpha^2 a(prev)^2) / 2. Throws kShortcutTooLarge when
/// lambda_0 <= alpha, since the resulting rate would not be positive.
DecayRate skip_adjusted_gamma(DecayRate gamma_prev, DecayRate gamma_target, double alpha);

/// U-SPA counterpart: the residual-branch target (rho_l - alpha^2 rho_{l-1}) / beta^2.
/// Throws kShortcutTooLarge unless it lies in [rho_{l-1}, 1).
double skip_adjusted_rho(double rho_prev, double rho_target, double alpha, double beta);

}  // namespace spa

#endif  // SPA_SCHEDULES_HPP_
