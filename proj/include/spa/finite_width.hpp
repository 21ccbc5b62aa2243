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

#ifndef SPA_FINITE_WIDTH_HPP_
#define SPA_FINITE_WIDTH_HPP_

#include <span>
#include <utility>
#include <vector>

#include "spa/error.hpp"
#include "spa/kernel_families.hpp"
#include "spa/propagation.hpp"
#include "spa/rng.hpp"

namespace spa {

enum class InitMode { kOrthogonal, kGaussian, kSmallQueryKey };

struct InitSpec {
  InitMode mode = InitMode::kOrthogonal;
  double qk_scale = 0.0;  // only read by kSmallQueryKey

  static InitSpec orthogonal() { return {InitMode::kOrthogonal, 0.0}; }
  static InitSpec gaussian() { return {InitMode::kGaussian, 0.0}; }
  static InitSpec small_query_key(double scale) { return {InitMode::kSmallQueryKey, scale}; }
};

struct SequenceActivations {
  Matrix values;  // T x d, one representation vector per row

  Index length() const noexcept { return values.rows(); }
  Index width() const noexcept { return values.cols(); }
};

/// Weights of one modified masked attention layer.
///
/// Orthogonal mode draws one d x d orthogonal matrix and splits its columns
/// into the h value blocks, so the concatenated value map is orthogonal, and
/// draws an independent orthogonal output map. Keys are split the same way.
/// Gaussian mode draws every weight i.i.d. N(0, 1/d). Both zero the queries.
/// Small-query-key mode keeps orthogonal values and output but draws queries
/// and keys as N(0, qk_scale^2 / d).
struct AttentionLayerParams {
  std::vector<Matrix> query;  // h blocks of d x d_h
  std::vector<Matrix> key;
  std::vector<Matrix> value;
  Matrix output;              // d x d
  AttentionOperator op;
  Index heads = 1;
  Index head_dim = 1;
  Index width = 1;

  /// [W^V_1 ... W^V_h], d x d.
  Matrix value_concat() const;
};

AttentionLayerParams build_attention_layer(const AttentionOperator& op, Index width, Index heads,
                                           InitSpec init, RngStream& rng);

AttentionLayerParams build_espa_layer(Index size, Index width, Index heads, DecayRate gamma_in,
                                      DecayRate gamma_out, InitSpec init, RngStream& rng);

/// Per-head realised attention diag(D) softmax(M o (QKᵀ/sqrt(d_h) + B)).
std::vector<Matrix> realized_attention(const AttentionLayerParams& params, const SequenceActivations& x);

SequenceActivations forward_attention(const AttentionLayerParams& params, const SequenceActivations& x);

/// Token embeddings with repeated fraction r: each distinct token gets an
/// independent standard normal row (an N(0, 1/d) draw rescaled by sqrt(d)).
/// Returns the activations and the token-identity kernel.
std::pair<SequenceActivations, KernelMatrix> sample_embeddings(Index size, Index width,
                                                               double repeated_fraction, RngStream& rng);

/// sqrt(d) times T orthonormal rows, so the empirical kernel is exactly I.
SequenceActivations orthonormal_inputs(Index size, Index width, RngStream& rng);

KernelMatrix empirical_kernel(const SequenceActivations& x);

/// Runs x through one freshly initialised layer per operator and records the
/// empirical kernel after every layer (kernels[0] is the input's).
std::vector<KernelMatrix> run_attention_stack(const SequenceActivations& x,
                                              std::span<const AttentionOperator> ops, Index heads,
                                              InitSpec init, RngStream& rng);

struct ExactnessReport {
  std::vector<double> block_deviation;  // max-abs error per block, [0] is the input
  double max_deviation = 0.0;
  Index worst_block = 0;
};

/// Runs an E-SPA stack with the depth schedule for gamma_final from
/// orthonormal-row inputs and compares each empirical kernel with the
/// scheduled exponential kernel.
ExactnessReport measure_espa_stack(Index size, Index width, Index heads, Index depth, double gamma_final,
                                   InitSpec init, RngStream& rng);

inline constexpr double kExactnessTolerance = 1e-6;

class ExactnessViolation : public Error {
 public:
  ExactnessViolation(Index block, double deviation);
  Index offending_block() const noexcept { return block_; }
  double deviation() const noexcept { return deviation_; }

 private:
  Index block_;
  double deviation_;
};

/// Orthogonal-mode run of measure_espa_stack; throws ExactnessViolation if
/// any block deviates by more than `tolerance`.
ExactnessReport validate_exactness(Index size, Index width, Index heads, Index depth, double gamma_final,
                                   RngStream& rng, double tolerance = kExactnessTolerance);

/// Value-SkipInit layer: (alpha I + beta A(X)) V(X) per head, A(X) the plain
/// causal softmax attention.
struct ValueSkipInitParams {
  double alpha = 1.0;
  double beta = 0.0;
  std::vector<Matrix> query;
  std::vector<Matrix> key;
  std::vector<Matrix> value;
  Matrix output;
  Index heads = 1;
  Index head_dim = 1;
  Index width = 1;

  Matrix value_concat() const;
};

/// Queries and keys are fan-in Gaussian; values and output follow `init`
/// (kSmallQueryKey is treated as orthogonal).
ValueSkipInitParams build_value_skipinit_layer(Index width, Index heads, InitSpec init, RngStream& rng);

SequenceActivations value_skipinit_forward(const ValueSkipInitParams& params, const SequenceActivations& x);

}  // namespace spa

#endif  // SPA_FINITE_WIDTH_HPP_
