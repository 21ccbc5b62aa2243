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

#include "spa/finite_width.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "spa/linalg.hpp"
#include "spa/schedules.hpp"

namespace spa {

namespace {

std::vector<Matrix> split_columns(const Matrix& m, Index heads) {
  const Index block = m.cols() / heads;
  std::vector<Matrix> out;
  out.reserve(heads);
  for (Index n = 0; n < heads; ++n) out.emplace_back(m.middleCols(n * block, block));
  return out;
}

Matrix concat_columns(const std::vector<Matrix>& blocks) {
  Index cols = 0;
  for (const Matrix& b : blocks) cols += b.cols();
  Matrix out(blocks.front().rows(), cols);
  Index at = 0;
  for (const Matrix& b : blocks) {
    out.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  return out;
}

void require_divisible(Index width, Index heads) {
  if (heads < 1 || width < 1 || width % heads != 0) {
    std::ostringstream msg;
    msg << "width " << width << " is not divisible by " << heads << " heads";
    throw Error(ErrorCode::kDimensionMismatch, msg.str());
  }
}

bool all_zero(const std::vector<Matrix>& blocks) {
  for (const Matrix& b : blocks)
    if (!b.isZero(0.0)) return false;
  return true;
}

Matrix square_weight(Index width, InitMode mode, RngStream& rng) {
  return mode == InitMode::kGaussian ? sample_gaussian_fan_in(width, width, rng) : sample_orthogonal(width, rng);
}

}  // namespace

Matrix AttentionLayerParams::value_concat() const { return concat_columns(value); }
Matrix ValueSkipInitParams::value_concat() const { return concat_columns(value); }

AttentionLayerParams build_attention_layer(const AttentionOperator& op, Index width, Index heads,
                                           InitSpec init, RngStream& rng) {
  require_divisible(width, heads);
  AttentionLayerParams p;
  p.op = op;
  p.heads = heads;
  p.width = width;
  p.head_dim = width / heads;

  switch (init.mode) {
    case InitMode::kOrthogonal:
    case InitMode::kGaussian:
      p.query.assign(heads, Matrix::Zero(width, p.head_dim));
      p.key = split_columns(square_weight(width, init.mode, rng), heads);
      break;
    case InitMode::kSmallQueryKey:
      if (!(init.qk_scale >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "query-key scale must be non-negative");
      p.query = split_columns(init.qk_scale * sample_gaussian_fan_in(width, width, rng), heads);
      p.key = split_columns(init.qk_scale * sample_gaussian_fan_in(width, width, rng), heads);
      break;
  }
  const InitMode value_mode = init.mode == InitMode::kGaussian ? InitMode::kGaussian : InitMode::kOrthogonal;
  p.value = split_columns(square_weight(width, value_mode, rng), heads);
  p.output = square_weight(width, value_mode, rng);
  return p;
}

AttentionLayerParams build_espa_layer(Index size, Index width, Index heads, DecayRate gamma_in,
                                      DecayRate gamma_out, InitSpec init, RngStream& rng) {
  require_divisible(width, heads);
  return build_attention_layer(espa_attention_analytic(size, gamma_in, gamma_out), width, heads, init, rng);
}

std::vector<Matrix> realized_attention(const AttentionLayerParams& params, const SequenceActivations& x) {
  if (x.width() != params.width || x.length() != params.op.size())
    throw Error(ErrorCode::kDimensionMismatch, "activations do not match the layer");
  const auto& op = params.op;
  std::vector<Matrix> out;
  out.reserve(params.heads);
  if (all_zero(params.query)) {
    // Zero queries: the logits inside the mask are exactly B for every head.
    const Matrix a = op.rescale.asDiagonal() * masked_row_softmax(op.bias, op.mask, op.neg_bias);
    out.assign(params.heads, a);
    return out;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.head_dim));
  for (Index n = 0; n < params.heads; ++n) {
    const Matrix q = x.values * params.query[n];
    const Matrix k = x.values * params.key[n];
    const Matrix logits = scale * q * k.transpose() + op.bias;
    out.push_back(op.rescale.asDiagonal() * masked_row_softmax(logits, op.mask, op.neg_bias));
  }
  return out;
}

SequenceActivations forward_attention(const AttentionLayerParams& params, const SequenceActivations& x) {
  const std::vector<Matrix> attention = realized_attention(params, x);
  Matrix mixed(x.values.rows(), params.width);
  for (Index n = 0; n < params.heads; ++n) {
    const Matrix values = x.values * params.value[n];
    mixed.middleCols(n * params.head_dim, params.head_dim).noalias() = attention[n] * values;
  }
  return {mixed * params.output};
}

std::pair<SequenceActivations, KernelMatrix> sample_embeddings(Index size, Index width,
                                                               double repeated_fraction, RngStream& rng) {
  if (width < 1) throw Error(ErrorCode::kDimensionMismatch, "width must be positive");
  const auto ids = sample_token_ids(size, repeated_fraction, rng);
  Matrix x(size, width);
  std::map<std::uint64_t, Index> first_seen;
  for (Index i = 0; i < size; ++i) {
    const auto [it, fresh] = first_seen.emplace(ids[i], i);
    if (fresh)
      x.row(i) = std::sqrt(static_cast<double>(width)) * sample_gaussian_fan_in(width, 1, rng).transpose();
    else
      x.row(i) = x.row(it->second);
  }
  return {SequenceActivations{std::move(x)}, token_kernel(ids)};
}

SequenceActivations orthonormal_inputs(Index size, Index width, RngStream& rng) {
  return {std::sqrt(static_cast<double>(width)) * sample_orthonormal_rows(size, width, rng)};
}

KernelMatrix empirical_kernel(const SequenceActivations& x) {
  Matrix k = x.values * x.values.transpose() / static_cast<double>(x.width());
  return KernelMatrix(symmetrized(k));
}

std::vector<KernelMatrix> run_attention_stack(const SequenceActivations& x,
                                              std::span<const AttentionOperator> ops, Index heads,
                                              InitSpec init, RngStream& rng) {
  std::vector<KernelMatrix> kernels;
  kernels.reserve(ops.size() + 1);
  kernels.push_back(empirical_kernel(x));
  SequenceActivations current = x;
  for (const AttentionOperator& op : ops) {
    const AttentionLayerParams layer = build_attention_layer(op, x.width(), heads, init, rng);
    current = forward_attention(layer, current);
    kernels.push_back(empirical_kernel(current));
  }
  return kernels;
}

ExactnessReport measure_espa_stack(Index size, Index width, Index heads, Index depth, double gamma_final,
                                   InitSpec init, RngStream& rng) {
  require_divisible(width, heads);
  if (size > width) throw Error(ErrorCode::kDimensionMismatch, "orthonormal inputs need width >= length");
  const DecaySchedule schedule = espa_schedule(depth, gamma_final);
  std::vector<AttentionOperator> ops;
  ops.reserve(depth);
  for (Index l = 1; l <= depth; ++l)
    ops.push_back(espa_attention_analytic(size, schedule.gammas[l - 1], schedule.gammas[l]));

  const SequenceActivations x0 = orthonormal_inputs(size, width, rng);
  const std::vector<KernelMatrix> kernels = run_attention_stack(x0, ops, heads, init, rng);

  ExactnessReport report;
  for (Index l = 0; l <= depth; ++l) {
    const double dev = max_abs(kernels[l].matrix() - exp_kernel(size, schedule.gammas[l]).matrix());
    report.block_deviation.push_back(dev);
    if (dev > report.max_deviation) {
      report.max_deviation = dev;
      report.worst_block = l;
    }
  }
  return report;
}

namespace {

std::string violation_message(Index block, double deviation) {
  std::ostringstream msg;
  msg << "block " << block << " deviates by " << deviation;
  return msg.str();
}

}  // namespace

ExactnessViolation::ExactnessViolation(Index block, double deviation)
    : Error(ErrorCode::kExactnessViolated, violation_message(block, deviation)),
      block_(block),
      deviation_(deviation) {}

ExactnessReport validate_exactness(Index size, Index width, Index heads, Index depth, double gamma_final,
                                   RngStream& rng, double tolerance) {
  ExactnessReport report =
      measure_espa_stack(size, width, heads, depth, gamma_final, InitSpec::orthogonal(), rng);
  if (report.max_deviation > tolerance) throw ExactnessViolation(report.worst_block, report.max_deviation);
  return report;
}

ValueSkipInitParams build_value_skipinit_layer(Index width, Index heads, InitSpec init, RngStream& rng) {
  require_divisible(width, heads);
  ValueSkipInitParams p;
  p.heads = heads;
  p.width = width;
  p.head_dim = width / heads;
  p.query = split_columns(sample_gaussian_fan_in(width, width, rng), heads);
  p.key = split_columns(sample_gaussian_fan_in(width, width, rng), heads);
  const InitMode value_mode = init.mode == InitMode::kGaussian ? InitMode::kGaussian : InitMode::kOrthogonal;
  p.value = split_columns(square_weight(width, value_mode, rng), heads);
  p.output = square_weight(width, value_mode, rng);
  return p;
}

SequenceActivations value_skipinit_forward(const ValueSkipInitParams& params, const SequenceActivations& x) {
  if (x.width() != params.width) throw Error(ErrorCode::kDimensionMismatch, "activations do not match the layer");
  const Matrix mask = causal_mask(x.length());
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.head_dim));
  Matrix mixed(x.length(), params.width);
  for (Index n = 0; n < params.heads; ++n) {
    const Matrix q = x.values * params.query[n];
    const Matrix k = x.values * params.key[n];
    const Matrix attention = masked_row_softmax(scale * q * k.transpose(), mask, kDefaultNegBias);
    const Matrix v = x.values * params.value[n];
    mixed.middleCols(n * params.head_dim, params.head_dim) = params.alpha * v + params.beta * (attention * v);
  }
  return {mixed * params.output};
}

}  // namespace spa
