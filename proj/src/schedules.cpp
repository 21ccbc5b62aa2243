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

#include "spa/schedules.hpp"

#include <cmath>
#include <sstream>

#include "spa/error.hpp"

namespace spa {

namespace {

void require_depth(Index depth) {
  if (depth < 1) throw Error(ErrorCode::kInvalidConfig, "depth must be at least 1");
}

}  // namespace

DecaySchedule espa_schedule(Index depth, double gamma_final) {
  require_depth(depth);
  const DecayRate terminal = DecayRate::of(gamma_final);
  if (terminal.is_infinite()) throw Error(ErrorCode::kGammaOutOfRange, "final decay rate must be finite");

  const double a_final = decay_helper_a(terminal);
  DecaySchedule s;
  s.depth = depth;
  s.gammas.reserve(depth + 1);
  s.helper.reserve(depth + 1);
  s.gammas.push_back(DecayRate::infinite());
  s.helper.push_back(1.0);
  for (Index l = 1; l < depth; ++l) {
    const double a_l = std::pow(a_final, static_cast<double>(l) / static_cast<double>(depth));
    s.gammas.push_back(decay_rate_from_a(a_l));
    s.helper.push_back(a_l);
  }
  s.gammas.push_back(terminal);
  s.helper.push_back(a_final);
  return s;
}

UniformSchedule uspa_schedule(Index depth, double rho_final, double repeated_fraction) {
  require_depth(depth);
  if (!(repeated_fraction >= 0.0 && rho_final < 1.0 && repeated_fraction <= rho_final)) {
    std::ostringstream msg;
    msg << "need 0 <= r (" << repeated_fraction << ") <= rho_L (" << rho_final << ") < 1";
    throw Error(ErrorCode::kRhoOutOfRange, msg.str());
  }
  UniformSchedule s;
  s.depth = depth;
  s.repeated_fraction = repeated_fraction;
  s.rhos.reserve(depth + 1);
  for (Index l = 0; l < depth; ++l)
    s.rhos.push_back(repeated_fraction +
                     (rho_final - repeated_fraction) * static_cast<double>(l) / static_cast<double>(depth));
  s.rhos.push_back(rho_final);
  return s;
}

DiagonalCorrection repeated_token_corrections(const DecaySchedule& schedule, Index size,
                                              double repeated_fraction) {
  if (!(repeated_fraction >= 0.0 && repeated_fraction < 1.0))
    throw Error(ErrorCode::kRhoOutOfRange, "repeated-token fraction must lie in [0, 1)");
  DiagonalCorrection c;
  c.diagonals.reserve(schedule.gammas.size());
  c.diagonals.push_back(Vector::Ones(size));
  for (std::size_t l = 1; l < schedule.gammas.size(); ++l) {
    const Matrix factor = exp_cholesky_analytic(size, schedule.gammas[l]).matrix();
    // diag(L ((1-r) I + r 11ᵀ) Lᵀ) = (1-r) |row|^2 + r (row sum)^2
    const Vector norms = factor.rowwise().squaredNorm();
    const Vector sums = factor.rowwise().sum();
    c.diagonals.push_back((1.0 - repeated_fraction) * norms + repeated_fraction * sums.cwiseAbs2());
  }
  return c;
}

AttentionOperator corrected_attention(Index block, const DecaySchedule& schedule,
                                      const DiagonalCorrection& correction, Index size, double neg_bias) {
  if (block < 1 || block > schedule.depth)
    throw Error(ErrorCode::kInvalidConfig, "block index outside 1..L");
  if (static_cast<Index>(correction.diagonals.size()) != schedule.depth + 1)
    throw Error(ErrorCode::kDimensionMismatch, "correction does not match schedule depth");
  const Vector& d_out = correction.diagonals[block];
  const Vector& d_in = correction.diagonals[block - 1];
  if (d_out.size() != size || d_in.size() != size)
    throw Error(ErrorCode::kDimensionMismatch, "correction length differs from sequence length");

  const AttentionOperator base =
      espa_attention_analytic(size, schedule.gammas[block - 1], schedule.gammas[block], neg_bias);
  const Matrix scaled = d_out.cwiseSqrt().cwiseInverse().asDiagonal() * base.matrix *
                        d_in.cwiseSqrt().asDiagonal();
  return decompose_dpb(scaled, neg_bias);
}

DecayRate skip_adjusted_gamma(DecayRate gamma_prev, DecayRate gamma_target, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw Error(ErrorCode::kShortcutTooLarge, "shortcut weight must lie in [0, 1)");
  if (gamma_target.is_infinite())
    throw Error(ErrorCode::kGammaOutOfRange, "target decay rate must be finite");
  if (gamma_prev < gamma_target)
    throw Error(ErrorCode::kOrderViolation, "target decay rate exceeds the incoming one");
  if (alpha == 0.0) return gamma_target;

  const double a_prev = decay_helper_a(gamma_prev);
  const double lambda0 = decay_helper_a(gamma_target) / a_prev;
  if (!(lambda0 > alpha)) {
    std::ostringstream msg;
    msg << "attention diagonal " << lambda0 << " does not exceed shortcut weight " << alpha;
    throw Error(ErrorCode::kShortcutTooLarge, msg.str());
  }
  const double lambda_sq = (lambda0 * lambda0 - alpha * alpha) / (1.0 - alpha * alpha);
  return decay_rate_from_a(std::sqrt(lambda_sq) * a_prev);
}

double skip_adjusted_rho(double rho_prev, double rho_target, double alpha, double beta) {
  if (!(beta > 0.0)) throw Error(ErrorCode::kShortcutTooLarge, "residual weight must be positive");
  double adjusted = (rho_target - alpha * alpha * rho_prev) / (beta * beta);
  if (adjusted < rho_prev && adjusted >= rho_prev - kNegativeClampTolerance) adjusted = rho_prev;
  if (!(adjusted >= rho_prev && adjusted < 1.0)) {
    std::ostringstream msg;
    msg << "adjusted residual rho " << adjusted << " outside [" << rho_prev << ", 1)";
    throw Error(ErrorCode::kShortcutTooLarge, msg.str());
  }
  return adjusted;
}

}  // namespace spa
