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

#ifndef SPA_KERNEL_FAMILIES_HPP_
#define SPA_KERNEL_FAMILIES_HPP_

#include <string>
#include <string_view>

#include "spa/linalg.hpp"

namespace spa {

inline constexpr double kDefaultNegBias = 1e30;
inline constexpr double kNegativeClampTolerance = 1e-12;

/// Exponential decay rate gamma > 0, or the infinite rate whose kernel is the
/// identity. exp(-inf * 0) is taken to be 1 and exp(-inf * k) to be 0 for
/// k > 0, so no inf * 0 products ever reach the arithmetic.
class DecayRate {
 public:
  static DecayRate infinite() noexcept { return DecayRate(); }
  /// Throws kGammaOutOfRange unless gamma > 0. +inf maps to infinite().
  static DecayRate of(double gamma);
  /// Accepts "inf" (any case) or a decimal number.
  static DecayRate parse(std::string_view text);

  bool is_infinite() const noexcept { return infinite_; }
  /// +inf for the infinite rate.
  double value() const noexcept;
  /// exp(-gamma * lag) for lag >= 0.
  double decay(Index lag) const noexcept;
  std::string to_string() const;

  friend bool operator==(const DecayRate& a, const DecayRate& b) noexcept {
    return a.infinite_ == b.infinite_ && (a.infinite_ || a.gamma_ == b.gamma_);
  }
  friend bool operator<(const DecayRate& a, const DecayRate& b) noexcept {
    if (a.infinite_) return false;
    if (b.infinite_) return true;
    return a.gamma_ < b.gamma_;
  }
  friend bool operator<=(const DecayRate& a, const DecayRate& b) noexcept { return !(b < a); }

 private:
  DecayRate() noexcept : gamma_(0.0), infinite_(true) {}
  explicit DecayRate(double gamma) noexcept : gamma_(gamma), infinite_(false) {}

  double gamma_;
  bool infinite_;
};

/// a(gamma) = sqrt(1 - exp(-2 gamma)), with a(inf) = 1.
double decay_helper_a(DecayRate gamma);
/// Inverse of decay_helper_a: gamma(a) = -log(1 - a^2) / 2 for a in (0, 1].
DecayRate decay_rate_from_a(double a);

// Symmetric T x T location kernel.
class KernelMatrix {
 public:
  /// Throws kNotSymmetric if `entries` is not square and symmetric to 1e-12.
  explicit KernelMatrix(Matrix entries);

  const Matrix& matrix() const noexcept { return entries_; }
  Index size() const noexcept { return entries_.rows(); }
  double operator()(Index i, Index j) const { return entries_(i, j); }

 private:
  Matrix entries_;
};

// Lower-triangular factor with strictly positive diagonal.
class CholeskyFactor {
 public:
  explicit CholeskyFactor(Matrix lower);

  const Matrix& matrix() const noexcept { return lower_; }
  Index size() const noexcept { return lower_.rows(); }

 private:
  Matrix lower_;
};

/// A causal attention matrix together with the softmax parameterisation that
/// realises it: A = diag(D) P, P row-stochastic, B = log P with -neg_bias
/// standing in for log 0, and the causal mask M.
struct AttentionOperator {
  Matrix matrix;
  Vector rescale;
  Matrix stochastic;
  Matrix bias;
  Matrix mask;
  double neg_bias = kDefaultNegBias;

  Index size() const noexcept { return matrix.rows(); }
};

KernelMatrix uniform_kernel(Index size, double rho);
KernelMatrix exp_kernel(Index size, DecayRate gamma);

/// Closed-form Cholesky factor of exp_kernel: the first column is
/// exp(-gamma (i - 1)), every later column j carries a(gamma) exp(-gamma (i - j)).
CholeskyFactor exp_cholesky_analytic(Index size, DecayRate gamma);

/// E-SPA attention L(gamma_out) L(gamma_in)^-1 from its closed form. Requires
/// gamma_in >= gamma_out with gamma_out finite; throws kOrderViolation otherwise.
AttentionOperator espa_attention_analytic(Index size, DecayRate gamma_in, DecayRate gamma_out,
                                          double neg_bias = kDefaultNegBias);

/// U-SPA attention L(rho_out) L(rho_in)^-1 through numeric Cholesky and a
/// triangular solve. Requires 0 <= rho_in <= rho_out < 1.
AttentionOperator uspa_attention(Index size, double rho_in, double rho_out,
                                 double neg_bias = kDefaultNegBias);

enum class KernelFamily { kUniform, kExponential };

/// Bidirectional variant S_out S_in^-1 with S the symmetric square root. For
/// the exponential family the parameters are decay rates (+inf allowed for
/// param_in); for the uniform family they are off-diagonal values.
Matrix noncausal_spa_attention(Index size, KernelFamily family, double param_in, double param_out);

/// Splits a lower-triangular non-negative A into rescale, stochastic part and
/// bias. Entries in [-1e-12, 0) are clamped to zero first; anything more
/// negative throws kNegativeAttention. Rows summing to <= 1e-14 throw
/// kZeroRowSum.
AttentionOperator decompose_dpb(const Matrix& attention, double neg_bias = kDefaultNegBias);

/// Clamps round-off negatives in place; throws kNegativeAttention past the
/// tolerance.
void clamp_roundoff_negatives(Matrix& m, double tol = kNegativeClampTolerance);

}  // namespace spa

#endif  // SPA_KERNEL_FAMILIES_HPP_
