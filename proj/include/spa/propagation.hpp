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

#ifndef SPA_PROPAGATION_HPP_
#define SPA_PROPAGATION_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "spa/kernel_families.hpp"
#include "spa/rng.hpp"
#include "spa/schedules.hpp"

namespace spa {

enum class AttentionMethod { kEspa, kUspa, kValueSkipInit, kSoftmaxAlibi };
enum class NormPlacement { kNone, kPre, kPost };

std::string_view to_string(AttentionMethod method);
std::string_view to_string(NormPlacement placement);
AttentionMethod parse_attention_method(std::string_view text);
NormPlacement parse_norm_placement(std::string_view text);

struct BlockSpec {
  AttentionMethod method = AttentionMethod::kEspa;
  Index heads = 1;
  double shortcut_weight = 0.0;  // alpha
  double residual_weight = 1.0;  // beta
  NormPlacement norm_placement = NormPlacement::kNone;
  // Requires alpha^2 + beta^2 = 1 and switches SPA blocks to the
  // skip-adjusted schedules.
  bool normalised_skip = false;

  void validate() const;
};

struct StackConfig {
  Index depth = 1;
  Index seq_len = 2;
  BlockSpec block;
  std::map<Index, BlockSpec> block_overrides;  // keyed by 1-based block index
  double gamma_final = kDefaultGammaFinal;
  double rho_final = kDefaultRhoFinal;
  double repeated_fraction = 0.0;
  bool correct_repeated_tokens = true;
  // Adds an MLP block after every attention block; its kernel map is the identity.
  bool mlp_blocks = false;
  double neg_bias = kDefaultNegBias;
  std::uint64_t seed = 0;
  // Overrides the sampled input kernel when set.
  std::optional<Matrix> input_kernel;

  void validate() const;
  const BlockSpec& block_at(Index l) const;
};

struct CollapseMetrics {
  double mean_offdiag_cosine = 0.0;
  double min_offdiag_cosine = 0.0;
  double max_diag = 0.0;
  double min_diag = 0.0;
  double collapse_distance = 0.0;  // max |cosine - 1| over off-diagonal pairs
};

struct PropagationTrace {
  std::vector<KernelMatrix> kernels;     // depth + 1 entries, kernels[0] = input
  std::vector<KernelMatrix> normalized;  // cosine-similarity versions
  std::vector<CollapseMetrics> metrics;
};

/// Token ids for one sequence. Each location independently takes one of
/// K = floor(1/r) shared tokens with probability sqrt(r/K) each, otherwise a
/// fresh id, so two distinct locations share a token with probability exactly r.
std::vector<std::uint64_t> sample_token_ids(Index size, double repeated_fraction, RngStream& rng);

/// 0/1 Gram matrix of one-hot token ids.
KernelMatrix token_kernel(std::span<const std::uint64_t> ids);

KernelMatrix sample_input_kernel(Index size, double repeated_fraction, RngStream& rng);

/// Mean of sample_input_kernel: (1 - r) I + r 11ᵀ.
KernelMatrix expected_input_kernel(Index size, double repeated_fraction);

KernelMatrix attention_step(const KernelMatrix& sigma, const Matrix& attention);
KernelMatrix multihead_attention_step(const KernelMatrix& sigma, std::span<const Matrix> heads);

/// Geometric ALiBi slopes 2^(-8n/h), n = 1..h.
std::vector<double> alibi_slopes(Index heads);
/// Per-head softmax attention from ALiBi biases alone (zero query-key term).
std::vector<Matrix> alibi_attention_matrices(Index size, Index heads);

KernelMatrix skip_step(const KernelMatrix& shortcut, double alpha, double beta, const KernelMatrix& residual);
KernelMatrix normalize_step(const KernelMatrix& sigma);

CollapseMetrics rank_collapse_metrics(const KernelMatrix& sigma);

/// Infinite-width kernel evolution through an attention-only stack. Errors
/// raised inside block l are rethrown with Error::block() == l.
PropagationTrace run_stack(const StackConfig& config);

}  // namespace spa

#endif  // SPA_PROPAGATION_HPP_
