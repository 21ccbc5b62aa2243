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

#include "spa/kernel_families.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "spa/error.hpp"

namespace spa {

namespace {

void require_size(Index size) {
  if (size < 1) throw Error(ErrorCode::kDimensionMismatch, "sequence length must be at least 1");
}

void require_rho(double rho, const char* name) {
  if (!(rho >= 0.0 && rho < 1.0)) {
    std::ostringstream msg;
    msg << name << " = " << rho << " outside [0, 1)";
    throw Error(ErrorCode::kRhoOutOfRange, msg.str());
  }
}

}  // namespace

DecayRate DecayRate::of(double gamma) {
  if (std::isinf(gamma) && gamma > 0.0) return infinite();
  if (!(gamma > 0.0) || std::isnan(gamma)) {
    std::ostringstream msg;
    msg << "decay rate " << gamma << " must be positive";
    throw Error(ErrorCode::kGammaOutOfRange, msg.str());
  }
  return DecayRate(gamma);
}

DecayRate DecayRate::parse(std::string_view text) {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lowered == "inf" || lowered == "+inf" || lowered == "infinity") return infinite();
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw Error(ErrorCode::kGammaOutOfRange, "cannot parse decay rate '" + std::string(text) + "'");
  return of(value);
}

double DecayRate::value() const noexcept {
  return infinite_ ? std::numeric_limits<double>::infinity() : gamma_;
}

double DecayRate::decay(Index lag) const noexcept {
  if (lag == 0) return 1.0;
  if (infinite_) return 0.0;
  return std::exp(-gamma_ * static_cast<double>(lag));
}

std::string DecayRate::to_string() const {
  if (infinite_) return "inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), gamma_);
  return std::string(buf, res.ptr);
}

double decay_helper_a(DecayRate gamma) {
  if (gamma.is_infinite()) return 1.0;
  return std::sqrt(-std::expm1(-2.0 * gamma.value()));
}

DecayRate decay_rate_from_a(double a) {
  if (!(a > 0.0 && a <= 1.0)) {
    std::ostringstream msg;
    msg << "helper value " << a << " outside (0, 1]";
    throw Error(ErrorCode::kGammaOutOfRange, msg.str());
  }
  if (a == 1.0) return DecayRate::infinite();
  return DecayRate::of(-0.5 * std::log1p(-a * a));
}

KernelMatrix::KernelMatrix(Matrix entries) : entries_(std::move(entries)) {
  if (entries_.rows() == 0 || !is_symmetric(entries_))
    throw Error(ErrorCode::kNotSymmetric, "kernel matrix must be non-empty, square and symmetric");
}

CholeskyFactor::CholeskyFactor(Matrix lower) : lower_(std::move(lower)) {
  if (!is_lower_triangular(lower_))
    throw Error(ErrorCode::kNotLowerTriangular, "Cholesky factor must be lower triangular");
  for (Index i = 0; i < lower_.rows(); ++i)
    if (!(lower_(i, i) > 0.0))
      throw Error(ErrorCode::kSingularFactor, "Cholesky factor needs a positive diagonal");
}

KernelMatrix uniform_kernel(Index size, double rho) {
  require_size(size);
  require_rho(rho, "rho");
  Matrix m = Matrix::Constant(size, size, rho);
  m.diagonal().setOnes();
  return KernelMatrix(std::move(m));
}

KernelMatrix exp_kernel(Index size, DecayRate gamma) {
  require_size(size);
  Matrix m(size, size);
  for (Index i = 0; i < size; ++i)
    for (Index j = 0; j < size; ++j) m(i, j) = gamma.decay(std::abs(i - j));
  return KernelMatrix(std::move(m));
}

CholeskyFactor exp_cholesky_analytic(Index size, DecayRate gamma) {
  require_size(size);
  const double a = decay_helper_a(gamma);
  Matrix l = Matrix::Zero(size, size);
  for (Index i = 0; i < size; ++i) {
    l(i, 0) = gamma.decay(i);
    for (Index j = 1; j <= i; ++j) l(i, j) = a * gamma.decay(i - j);
  }
  return CholeskyFactor(std::move(l));
}

AttentionOperator espa_attention_analytic(Index size, DecayRate gamma_in, DecayRate gamma_out,
                                          double neg_bias) {
  require_size(size);
  if (gamma_out.is_infinite()) {
    if (!gamma_in.is_infinite())
      throw Error(ErrorCode::kOrderViolation, "gamma_out = inf exceeds finite gamma_in " + gamma_in.to_string());
  } else if (gamma_in < gamma_out) {
    throw Error(ErrorCode::kOrderViolation,
                "gamma_out (" + gamma_out.to_string() + ") > gamma_in (" + gamma_in.to_string() + ")");
  }

  // L(inf) = I, so the first block's attention is the factor itself.
  if (gamma_in.is_infinite()) return decompose_dpb(exp_cholesky_analytic(size, gamma_out).matrix(), neg_bias);

  const double ratio = decay_helper_a(gamma_out) / decay_helper_a(gamma_in);
  const double step_out = gamma_out.decay(1);
  const double step_in = gamma_in.decay(1);
  const double first_col = step_out - ratio * step_in;
  const double interior = ratio * (step_out - step_in);

  Matrix a = Matrix::Zero(size, size);
  a(0, 0) = 1.0;
  for (Index i = 1; i < size; ++i) {
    a(i, i) = ratio;
    a(i, 0) = first_col * gamma_out.decay(i - 1);
    for (Index j = 1; j < i; ++j) a(i, j) = interior * gamma_out.decay(i - j - 1);
  }
  return decompose_dpb(a, neg_bias);
}

AttentionOperator uspa_attention(Index size, double rho_in, double rho_out, double neg_bias) {
  require_size(size);
  require_rho(rho_in, "rho_in");
  require_rho(rho_out, "rho_out");
  if (rho_out < rho_in) {
    std::ostringstream msg;
    msg << "rho_out (" << rho_out << ") < rho_in (" << rho_in << ")";
    throw Error(ErrorCode::kOrderViolation, msg.str());
  }
  const Matrix l_out = cholesky(uniform_kernel(size, rho_out).matrix());
  const Matrix l_in = cholesky(uniform_kernel(size, rho_in).matrix());
  Matrix a = solve_lower_triangular_right(l_out, l_in);
  a.triangularView<Eigen::StrictlyUpper>().setZero();
  return decompose_dpb(a, neg_bias);
}

Matrix noncausal_spa_attention(Index size, KernelFamily family, double param_in, double param_out) {
  require_size(size);
  if (family == KernelFamily::kUniform) {
    require_rho(param_in, "rho_in");
    require_rho(param_out, "rho_out");
    if (param_out < param_in) throw Error(ErrorCode::kOrderViolation, "rho_out < rho_in");
    return symmetric_sqrt(uniform_kernel(size, param_out).matrix()) *
           inverse_symmetric_sqrt(uniform_kernel(size, param_in).matrix());
  }
  const DecayRate in = DecayRate::of(param_in);
  const DecayRate out = DecayRate::of(param_out);
  if (out.is_infinite() && !in.is_infinite())
    throw Error(ErrorCode::kOrderViolation, "gamma_out > gamma_in");
  if (in < out) throw Error(ErrorCode::kOrderViolation, "gamma_out > gamma_in");
  const Matrix s_out = symmetric_sqrt(exp_kernel(size, out).matrix());
  if (in.is_infinite()) return s_out;
  return s_out * inverse_symmetric_sqrt(exp_kernel(size, in).matrix());
}

void clamp_roundoff_negatives(Matrix& m, double tol) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (m(i, j) >= 0.0) continue;
      if (m(i, j) < -tol) {
        std::ostringstream msg;
        msg << "entry (" << i << ", " << j << ") = " << m(i, j) << " is below -" << tol;
        throw Error(ErrorCode::kNegativeAttention, msg.str());
      }
      m(i, j) = 0.0;
    }
  }
}

AttentionOperator decompose_dpb(const Matrix& attention, double neg_bias) {
  if (attention.rows() != attention.cols() || attention.rows() == 0)
    throw Error(ErrorCode::kDimensionMismatch, "attention matrix must be square");
  if (!(neg_bias > 0.0)) throw Error(ErrorCode::kInvalidConfig, "negative-bias constant must be positive");
  const Index n = attention.rows();
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      if (attention(i, j) != 0.0)
        throw Error(ErrorCode::kNotLowerTriangular, "attention matrix must be lower triangular");

  AttentionOperator op;
  op.matrix = attention;
  clamp_roundoff_negatives(op.matrix);
  op.neg_bias = neg_bias;
  op.mask = causal_mask(n);
  op.rescale = op.matrix.rowwise().sum();
  op.stochastic = Matrix::Zero(n, n);
  op.bias = Matrix::Constant(n, n, -neg_bias);
  for (Index i = 0; i < n; ++i) {
    const double d = op.rescale(i);
    if (!(d > kPivotTolerance)) {
      std::ostringstream msg;
      msg << "row " << i << " sums to " << d;
      throw Error(ErrorCode::kZeroRowSum, msg.str());
    }
    for (Index j = 0; j <= i; ++j) {
      const double p = op.matrix(i, j) / d;
      op.stochastic(i, j) = p;
      if (p > 0.0) op.bias(i, j) = std::log(p);
    }
  }
  return op;
}

}  // namespace spa
