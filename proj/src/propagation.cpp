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

#include "spa/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>

#include "spa/error.hpp"

namespace spa {

std::string_view to_string(AttentionMethod method) {
  switch (method) {
    case AttentionMethod::kEspa: return "espa";
    case AttentionMethod::kUspa: return "uspa";
    case AttentionMethod::kValueSkipInit: return "value_skipinit";
    case AttentionMethod::kSoftmaxAlibi: return "softmax_alibi";
  }
  return "unknown";
}

std::string_view to_string(NormPlacement placement) {
  switch (placement) {
    case NormPlacement::kNone: return "none";
    case NormPlacement::kPre: return "pre";
    case NormPlacement::kPost: return "post";
  }
  return "unknown";
}

AttentionMethod parse_attention_method(std::string_view text) {
  for (auto m : {AttentionMethod::kEspa, AttentionMethod::kUspa, AttentionMethod::kValueSkipInit,
                 AttentionMethod::kSoftmaxAlibi})
    if (to_string(m) == text) return m;
  throw Error(ErrorCode::kInvalidConfig, "unknown attention method '" + std::string(text) + "'");
}

NormPlacement parse_norm_placement(std::string_view text) {
  for (auto p : {NormPlacement::kNone, NormPlacement::kPre, NormPlacement::kPost})
    if (to_string(p) == text) return p;
  throw Error(ErrorCode::kInvalidConfig, "unknown norm placement '" + std::string(text) + "'");
}

void BlockSpec::validate() const {
  if (heads < 1) throw Error(ErrorCode::kInvalidConfig, "heads must be at least 1");
  if (!(shortcut_weight >= 0.0 && shortcut_weight <= 1.0))
    throw Error(ErrorCode::kInvalidConfig, "shortcut_weight must lie in [0, 1]");
  if (!(residual_weight >= 0.0) || !std::isfinite(residual_weight))
    throw Error(ErrorCode::kInvalidConfig, "residual_weight must be finite and non-negative");
  if (normalised_skip) {
    const double total = shortcut_weight * shortcut_weight + residual_weight * residual_weight;
    if (std::abs(total - 1.0) > 1e-12) {
      std::ostringstream msg;
      msg << "normalised skip needs alpha^2 + beta^2 = 1, got " << total;
      throw Error(ErrorCode::kInvalidConfig, msg.str());
    }
  }
}

void StackConfig::validate() const {
  if (depth < 1) throw Error(ErrorCode::kInvalidConfig, "depth must be at least 1");
  if (seq_len < 2) throw Error(ErrorCode::kInvalidConfig, "seq_len must be at least 2");
  if (!(repeated_fraction >= 0.0 && repeated_fraction < 1.0))
    throw Error(ErrorCode::kRhoOutOfRange, "repeated_fraction must lie in [0, 1)");
  if (input_kernel && (input_kernel->rows() != seq_len || input_kernel->cols() != seq_len))
    throw Error(ErrorCode::kDimensionMismatch, "input kernel size differs from seq_len");
  block.validate();
  for (const auto& [l, spec] : block_overrides) {
    if (l < 1 || l > depth) throw Error(ErrorCode::kInvalidConfig, "block override index outside 1..depth");
    spec.validate();
  }
  const bool corrected_espa = correct_repeated_tokens && repeated_fraction > 0.0;
  for (Index l = 1; l <= depth; ++l) {
    const BlockSpec& spec = block_at(l);
    if (spec.method == AttentionMethod::kEspa && corrected_espa && spec.normalised_skip &&
        spec.shortcut_weight > 0.0)
      throw Error(ErrorCode::kInvalidConfig,
                  "repeated-token corrections are defined for skipless E-SPA blocks only");
  }
}

const BlockSpec& StackConfig::block_at(Index l) const {
  const auto it = block_overrides.find(l);
  return it == block_overrides.end() ? block : it->second;
}

std::vector<std::uint64_t> sample_token_ids(Index size, double repeated_fraction, RngStream& rng) {
  if (!(repeated_fraction >= 0.0 && repeated_fraction < 1.0))
    throw Error(ErrorCode::kRhoOutOfRange, "repeated_fraction must lie in [0, 1)");
  std::vector<std::uint64_t> ids(static_cast<std::size_t>(size));
  if (repeated_fraction == 0.0) {
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    return ids;
  }
  const auto shared = static_cast<std::uint64_t>(std::floor(1.0 / repeated_fraction + 1e-9));
  const double p_each = std::sqrt(repeated_fraction / static_cast<double>(shared));
  std::uint64_t fresh = shared;
  for (auto& id : ids) {
    const double u = rng.uniform();
    if (u < static_cast<double>(shared) * p_each)
      id = std::min(static_cast<std::uint64_t>(u / p_each), shared - 1);
    else
      id = fresh++;
  }
  return ids;
}

KernelMatrix token_kernel(std::span<const std::uint64_t> ids) {
  const auto n = static_cast<Index>(ids.size());
  Matrix m(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) m(i, j) = ids[i] == ids[j] ? 1.0 : 0.0;
  return KernelMatrix(std::move(m));
}

KernelMatrix sample_input_kernel(Index size, double repeated_fraction, RngStream& rng) {
  const auto ids = sample_token_ids(size, repeated_fraction, rng);
  return token_kernel(ids);
}

KernelMatrix expected_input_kernel(Index size, double repeated_fraction) {
  Matrix m = Matrix::Constant(size, size, repeated_fraction);
  m.diagonal().setOnes();
  return KernelMatrix(std::move(m));
}

KernelMatrix attention_step(const KernelMatrix& sigma, const Matrix& attention) {
  if (attention.rows() != sigma.size() || attention.cols() != sigma.size())
    throw Error(ErrorCode::kDimensionMismatch, "attention and kernel sizes differ");
  return KernelMatrix(symmetrized(attention * sigma.matrix() * attention.transpose()));
}

KernelMatrix multihead_attention_step(const KernelMatrix& sigma, std::span<const Matrix> heads) {
  if (heads.empty()) throw Error(ErrorCode::kInvalidConfig, "at least one head is required");
  Matrix total = Matrix::Zero(sigma.size(), sigma.size());
  for (const Matrix& a : heads) {
    if (a.rows() != sigma.size() || a.cols() != sigma.size())
      throw Error(ErrorCode::kDimensionMismatch, "attention and kernel sizes differ");
    total.noalias() += a * sigma.matrix() * a.transpose();
  }
  total /= static_cast<double>(heads.size());
  return KernelMatrix(symmetrized(total));
}

std::vector<double> alibi_slopes(Index heads) {
  if (heads < 1) throw Error(ErrorCode::kInvalidConfig, "heads must be at least 1");
  std::vector<double> slopes;
  slopes.reserve(heads);
  for (Index n = 1; n <= heads; ++n)
    slopes.push_back(std::exp2(-8.0 * static_cast<double>(n) / static_cast<double>(heads)));
  return slopes;
}

std::vector<Matrix> alibi_attention_matrices(Index size, Index heads) {
  const Matrix mask = causal_mask(size);
  std::vector<Matrix> out;
  for (const double slope : alibi_slopes(heads)) {
    Matrix logits = Matrix::Zero(size, size);
    for (Index i = 0; i < size; ++i)
      for (Index j = 0; j <= i; ++j) logits(i, j) = -slope * static_cast<double>(i - j);
    out.push_back(masked_row_softmax(logits, mask, kDefaultNegBias));
  }
  return out;
}

KernelMatrix skip_step(const KernelMatrix& shortcut, double alpha, double beta, const KernelMatrix& residual) {
  if (shortcut.size() != residual.size())
    throw Error(ErrorCode::kDimensionMismatch, "shortcut and residual sizes differ");
  return KernelMatrix(alpha * alpha * shortcut.matrix() + beta * beta * residual.matrix());
}

KernelMatrix normalize_step(const KernelMatrix& sigma) {
  const Vector diag = sigma.matrix().diagonal();
  for (Index i = 0; i < diag.size(); ++i) {
    if (!(diag(i) > kPivotTolerance)) {
      std::ostringstream msg;
      msg << "diagonal entry " << i << " = " << diag(i);
      throw Error(ErrorCode::kDegenerateDiagonal, msg.str());
    }
  }
  const Vector inv = diag.cwiseSqrt().cwiseInverse();
  Matrix out = inv.asDiagonal() * sigma.matrix() * inv.asDiagonal();
  out.diagonal().setOnes();
  return KernelMatrix(symmetrized(out));
}

CollapseMetrics rank_collapse_metrics(const KernelMatrix& sigma) {
  const Matrix cosine = normalize_step(sigma).matrix();
  const Index n = sigma.size();
  CollapseMetrics m;
  m.max_diag = sigma.matrix().diagonal().maxCoeff();
  m.min_diag = sigma.matrix().diagonal().minCoeff();
  if (n < 2) return m;
  double sum = 0.0;
  double lowest = std::numeric_limits<double>::infinity();
  double distance = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      sum += cosine(i, j);
      lowest = std::min(lowest, cosine(i, j));
      distance = std::max(distance, std::abs(cosine(i, j) - 1.0));
    }
  }
  m.mean_offdiag_cosine = sum / static_cast<double>(n * (n - 1));
  m.min_offdiag_cosine = lowest;
  m.collapse_distance = distance;
  return m;
}

namespace {

using Branch = std::function<KernelMatrix(const KernelMatrix&)>;

KernelMatrix apply_residual_block(const KernelMatrix& sigma, const BlockSpec& spec, const Branch& branch) {
  const double alpha = spec.shortcut_weight;
  const double beta = spec.residual_weight;
  switch (spec.norm_placement) {
    case NormPlacement::kNone:
      return skip_step(sigma, alpha, beta, branch(sigma));
    case NormPlacement::kPre:
      return skip_step(sigma, alpha, beta, branch(normalize_step(sigma)));
    case NormPlacement::kPost:
      return normalize_step(skip_step(sigma, alpha, beta, branch(sigma)));
  }
  return sigma;
}

// Attention matrices for every method, built lazily from the stack's schedules.
class AttentionPlan {
 public:
  explicit AttentionPlan(const StackConfig& config) : config_(config) {}

  std::vector<Matrix> heads_for(Index l, const BlockSpec& spec) {
    const Index size = config_.seq_len;
    switch (spec.method) {
      case AttentionMethod::kValueSkipInit:
        return {Matrix::Identity(size, size)};
      case AttentionMethod::kSoftmaxAlibi: {
        auto it = alibi_.find(spec.heads);
        if (it == alibi_.end()) it = alibi_.emplace(spec.heads, alibi_attention_matrices(size, spec.heads)).first;
        return it->second;
      }
      case AttentionMethod::kEspa:
        return {espa_matrix(l, spec)};
      case AttentionMethod::kUspa:
        return {uspa_matrix(l, spec)};
    }
    return {};
  }

 private:
  bool corrected() const { return config_.correct_repeated_tokens && config_.repeated_fraction > 0.0; }

  Matrix espa_matrix(Index l, const BlockSpec& spec) {
    if (!decay_) decay_ = espa_schedule(config_.depth, config_.gamma_final);
    const DecayRate in = decay_->gammas[l - 1];
    if (spec.normalised_skip && spec.shortcut_weight > 0.0) {
      const DecayRate out = skip_adjusted_gamma(in, decay_->gammas[l], spec.shortcut_weight);
      return espa_attention_analytic(config_.seq_len, in, out, config_.neg_bias).matrix;
    }
    if (corrected()) {
      if (!correction_)
        correction_ = repeated_token_corrections(*decay_, config_.seq_len, config_.repeated_fraction);
      return corrected_attention(l, *decay_, *correction_, config_.seq_len, config_.neg_bias).matrix;
    }
    return espa_attention_analytic(config_.seq_len, in, decay_->gammas[l], config_.neg_bias).matrix;
  }

  Matrix uspa_matrix(Index l, const BlockSpec& spec) {
    if (!uniform_)
      uniform_ = uspa_schedule(config_.depth, config_.rho_final, corrected() ? config_.repeated_fraction : 0.0);
    const double in = uniform_->rhos[l - 1];
    double out = uniform_->rhos[l];
    if (spec.normalised_skip && spec.shortcut_weight > 0.0)
      out = skip_adjusted_rho(in, out, spec.shortcut_weight, spec.residual_weight);
    return uspa_attention(config_.seq_len, in, out, config_.neg_bias).matrix;
  }

  const StackConfig& config_;
  std::optional<DecaySchedule> decay_;
  std::optional<UniformSchedule> uniform_;
  std::optional<DiagonalCorrection> correction_;
  std::map<Index, std::vector<Matrix>> alibi_;
};

}  // namespace

PropagationTrace run_stack(const StackConfig& config) {
  config.validate();
  RngStream rng(config.seed);
  KernelMatrix sigma = config.input_kernel
                           ? KernelMatrix(*config.input_kernel)
                           : sample_input_kernel(config.seq_len, config.repeated_fraction, rng);

  PropagationTrace trace;
  auto record = [&trace](const KernelMatrix& s) {
    trace.kernels.push_back(s);
    trace.normalized.push_back(normalize_step(s));
    trace.metrics.push_back(rank_collapse_metrics(s));
  };
  try {
    record(sigma);
  } catch (const Error& e) {
    throw e.with_block(0);
  }

  AttentionPlan plan(config);
  const Branch identity = [](const KernelMatrix& s) { return s; };
  for (Index l = 1; l <= config.depth; ++l) {
    try {
      const BlockSpec& spec = config.block_at(l);
      const std::vector<Matrix> heads = plan.heads_for(l, spec);
      const Branch attend = [&heads](const KernelMatrix& s) {
        return heads.size() == 1 ? attention_step(s, heads.front()) : multihead_attention_step(s, heads);
      };
      sigma = apply_residual_block(sigma, spec, attend);
      if (config.mlp_blocks) sigma = apply_residual_block(sigma, spec, identity);
      record(sigma);
    } catch (const Error& e) {
      throw e.with_block(l);
    }
  }
  return trace;
}

}  // namespace spa
