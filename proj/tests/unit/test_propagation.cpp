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

#include <cmath>
#include <set>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "oracles.hpp"
#include "spa/error.hpp"
#include "spa/kernel_families.hpp"
#include "spa/propagation.hpp"
#include "spa/rng.hpp"
#include "spa/schedules.hpp"

using spa::AttentionMethod;
using spa::DecayRate;
using spa::ErrorCode;
using spa::KernelMatrix;
using spa::Matrix;
using spa::NormPlacement;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const spa::Error& e) {
    return e.code();
  }
  FAIL("expected spa::Error");
  return ErrorCode::kInvalidConfig;
}

double min_eigenvalue(const Matrix& m) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

spa::StackConfig skipless(AttentionMethod method, long depth, long size) {
  spa::StackConfig c;
  c.depth = depth;
  c.seq_len = size;
  c.block.method = method;
  c.input_kernel = Matrix::Identity(size, size);
  return c;
}

}  // namespace

TEST_SUITE("propagation") {
  TEST_CASE("method and placement names round-trip") {
    for (auto m : {AttentionMethod::kEspa, AttentionMethod::kUspa, AttentionMethod::kValueSkipInit,
                   AttentionMethod::kSoftmaxAlibi})
      CHECK(spa::parse_attention_method(spa::to_string(m)) == m);
    for (auto p : {NormPlacement::kNone, NormPlacement::kPre, NormPlacement::kPost})
      CHECK(spa::parse_norm_placement(spa::to_string(p)) == p);
    CHECK(code_of([] { spa::parse_attention_method("rope"); }) == ErrorCode::kInvalidConfig);
    CHECK(code_of([] { spa::parse_norm_placement("middle"); }) == ErrorCode::kInvalidConfig);
  }

  TEST_CASE("token sampler with r = 0 gives the identity") {
    spa::RngStream rng(1);
    CHECK(spa::sample_input_kernel(10, 0.0, rng).matrix() == Matrix::Identity(10, 10));
  }

  TEST_CASE("token sampler hits the averaged kernel in expectation") {
    for (double r : {0.02, 0.05, 0.3}) {
      const long n = 30;
      constexpr int kSeeds = 4000;
      spa::RngStream rng(static_cast<std::uint64_t>(r * 1000));
      double sum = 0.0;
      double sum_sq = 0.0;
      for (int s = 0; s < kSeeds; ++s) {
        const Matrix k = spa::sample_input_kernel(n, r, rng).matrix();
        const double off = (k.sum() - n) / static_cast<double>(n * (n - 1));
        sum += off;
        sum_sq += off * off;
      }
      const double mean = sum / kSeeds;
      const double se = std::sqrt((sum_sq / kSeeds - mean * mean) / kSeeds);
      CHECK(std::abs(mean - r) <= 3.0 * se);
    }
  }

  TEST_CASE("token kernels are valid 0/1 Gram matrices") {
    spa::RngStream rng(4);
    for (int s = 0; s < 20; ++s) {
      const auto ids = spa::sample_token_ids(24, 0.2, rng);
      const Matrix k = spa::token_kernel(ids).matrix();
      CHECK(k.diagonal().isOnes(0.0));
      CHECK(((k.array() == 0.0) || (k.array() == 1.0)).all());
      CHECK(min_eigenvalue(k) >= -1e-12);
    }
    CHECK(spa::expected_input_kernel(3, 0.25)(0, 2) == 0.25);
    CHECK(code_of([&] { spa::sample_token_ids(4, 1.0, rng); }) == ErrorCode::kRhoOutOfRange);
  }

  TEST_CASE("attention step") {
    const KernelMatrix sigma = spa::expected_input_kernel(6, 0.3);
    CHECK(spa::attention_step(sigma, Matrix::Identity(6, 6)).matrix() == sigma.matrix());
    const KernelMatrix id(Matrix::Identity(10, 10));
    const Matrix l = oracle::closed_form_factor(10, 0.1);
    CHECK(oracle::max_abs(spa::attention_step(id, l).matrix() - oracle::exp_kernel(10, 0.1)) <= 1e-12);

    // Rank does not grow.
    spa::RngStream rng(3);
    const Matrix low = spa::token_kernel(std::vector<std::uint64_t>{0, 1, 0, 1, 2, 2, 0, 1}).matrix();
    const Matrix a = oracle::random_lower(8, 5);
    const Matrix out = spa::attention_step(KernelMatrix(low), a).matrix();
    auto rank = [](const Matrix& m) {
      Eigen::JacobiSVD<Matrix> svd(m);
      const auto s = svd.singularValues();
      return (s.array() > 1e-10 * s(0)).count();
    };
    CHECK(rank(out) <= rank(low));
    CHECK(code_of([&] { spa::attention_step(id, Matrix::Identity(3, 3)); }) == ErrorCode::kDimensionMismatch);
  }

  TEST_CASE("multi-head step averages per-head kernels") {
    const KernelMatrix sigma = spa::expected_input_kernel(8, 0.1);
    const Matrix a = oracle::closed_form_factor(8, 0.3);
    const std::vector<Matrix> same(4, a);
    CHECK(oracle::max_abs(spa::multihead_attention_step(sigma, same).matrix() -
                          spa::attention_step(sigma, a).matrix()) <= 1e-14);
    const std::vector<Matrix> one{a};
    CHECK(spa::multihead_attention_step(sigma, one).matrix() == spa::attention_step(sigma, a).matrix());
    const Matrix b = oracle::closed_form_factor(8, 0.05);
    const std::vector<Matrix> two{a, b};
    const Matrix expected = 0.5 * (a * sigma.matrix() * a.transpose() + b * sigma.matrix() * b.transpose());
    CHECK(oracle::max_abs(spa::multihead_attention_step(sigma, two).matrix() - expected) <= 1e-14);
  }

  TEST_CASE("ALiBi slopes and attention") {
    const auto slopes = spa::alibi_slopes(8);
    REQUIRE(slopes.size() == 8);
    for (int n = 0; n < 8; ++n) CHECK(slopes[n] == std::ldexp(1.0, -(n + 1)));
    const long size = 12;
    const auto heads = spa::alibi_attention_matrices(size, 8);
    for (int n = 0; n < 8; ++n) {
      CHECK(heads[n](0, 0) == 1.0);
      CHECK(heads[n].row(0).tail(size - 1).isZero(0.0));
      Matrix logits = Matrix::Zero(size, size);
      for (long i = 0; i < size; ++i)
        for (long j = 0; j <= i; ++j) logits(i, j) = -slopes[n] * static_cast<double>(i - j);
      CHECK(oracle::max_abs(heads[n] - oracle::causal_softmax(logits)) <= 1e-14);
    }
    // Sharper heads put more weight on the diagonal.
    for (int n = 1; n < 8; ++n) CHECK(heads[n - 1](size - 1, size - 1) > heads[n](size - 1, size - 1));
    // Very steep slopes approach one-hot rows.
    Matrix steep = Matrix::Zero(6, 6);
    for (long i = 0; i < 6; ++i)
      for (long j = 0; j <= i; ++j) steep(i, j) = -1e3 * static_cast<double>(i - j);
    CHECK(spa::masked_row_softmax(steep, spa::causal_mask(6), 1e30) == Matrix::Identity(6, 6));
  }

  TEST_CASE("skip step") {
    const KernelMatrix a = spa::uniform_kernel(5, 0.2);
    const KernelMatrix b = spa::uniform_kernel(5, 0.7);
    CHECK(spa::skip_step(a, 1.0, 0.0, b).matrix() == a.matrix());
    CHECK(spa::skip_step(a, 0.0, 1.0, b).matrix() == b.matrix());
    const double alpha = 0.6;
    const double beta = 0.8;
    const double rho = alpha * alpha * 0.2 + beta * beta * 0.7;
    CHECK(oracle::max_abs(spa::skip_step(a, alpha, beta, b).matrix() - oracle::uniform_kernel(5, rho)) <= 1e-15);
  }

  TEST_CASE("normalize step") {
    const KernelMatrix unit = spa::uniform_kernel(4, 0.3);
    CHECK(oracle::max_abs(spa::normalize_step(unit).matrix() - unit.matrix()) <= 1e-15);
    Matrix m(2, 2);
    m << 4, 2, 2, 1;
    CHECK(oracle::max_abs(spa::normalize_step(KernelMatrix(m)).matrix() - Matrix::Ones(2, 2)) <= 1e-15);
    const Matrix spd = oracle::random_spd(9, 2);
    const KernelMatrix once = spa::normalize_step(KernelMatrix(spd));
    CHECK(oracle::max_abs(spa::normalize_step(once).matrix() - once.matrix()) <= 1e-12);
    Matrix degenerate = Matrix::Identity(3, 3);
    degenerate(2, 2) = 0.0;
    CHECK(code_of([&] { spa::normalize_step(KernelMatrix(degenerate)); }) == ErrorCode::kDegenerateDiagonal);
  }

  TEST_CASE("rank-collapse metrics") {
    const auto id = spa::rank_collapse_metrics(KernelMatrix(Matrix::Identity(5, 5)));
    CHECK(id.mean_offdiag_cosine == 0.0);
    CHECK(id.min_offdiag_cosine == 0.0);
    CHECK(id.collapse_distance == 1.0);
    CHECK(id.max_diag == 1.0);
    CHECK(id.min_diag == 1.0);
    double previous = 0.0;
    for (double eps : {1.0, 1e-2, 1e-4, 1e-8}) {
      const Matrix near = Matrix::Ones(6, 6) + eps * Matrix::Identity(6, 6);
      const auto m = spa::rank_collapse_metrics(KernelMatrix(near));
      CHECK(m.mean_offdiag_cosine > previous);
      previous = m.mean_offdiag_cosine;
    }
    CHECK(previous > 1.0 - 1e-7);
    Matrix scaled = 2.0 * Matrix::Identity(3, 3);
    scaled(1, 1) = 0.5;
    const auto s = spa::rank_collapse_metrics(KernelMatrix(scaled));
    CHECK(s.max_diag == 2.0);
    CHECK(s.min_diag == 0.5);
  }

  TEST_CASE("skipless SPA stacks telescope exactly") {
    const long size = 100;
    const long depth = 36;
    auto espa = skipless(AttentionMethod::kEspa, depth, size);
    espa.gamma_final = 0.005;
    const auto trace = spa::run_stack(espa);
    REQUIRE(trace.kernels.size() == depth + 1);
    REQUIRE(trace.normalized.size() == depth + 1);
    REQUIRE(trace.metrics.size() == depth + 1);
    const auto gammas = spa::espa_schedule(depth, 0.005);
    for (long l = 0; l <= depth; ++l)
      CHECK(oracle::max_abs(trace.kernels[l].matrix() - oracle::exp_kernel(size, gammas.gammas[l].value())) <= 1e-9);
    const Matrix& last = trace.normalized[depth].matrix();
    for (long k = 1; k < size; k += 7) CHECK(std::abs(last(k, 0) - std::exp(-0.005 * k)) <= 1e-9);

    const auto uspa = spa::run_stack(skipless(AttentionMethod::kUspa, depth, size));
    const auto rhos = spa::uspa_schedule(depth, spa::kDefaultRhoFinal, 0.0);
    for (long l = 0; l <= depth; ++l)
      CHECK(oracle::max_abs(uspa.kernels[l].matrix() - oracle::uniform_kernel(size, rhos.rhos[l])) <= 1e-9);
  }

  TEST_CASE("Value-SkipInit preserves the kernel") {
    auto c = skipless(AttentionMethod::kValueSkipInit, 20, 16);
    c.input_kernel.reset();
    c.repeated_fraction = 0.1;
    c.seed = 9;
    const auto trace = spa::run_stack(c);
    for (const auto& k : trace.kernels) CHECK(k.matrix() == trace.kernels.front().matrix());
  }

  TEST_CASE("steps keep kernels symmetric and PSD") {
    spa::StackConfig c;
    c.depth = 12;
    c.seq_len = 48;
    c.repeated_fraction = 0.05;
    c.seed = 21;
    for (auto method : {AttentionMethod::kEspa, AttentionMethod::kUspa, AttentionMethod::kSoftmaxAlibi}) {
      for (auto placement : {NormPlacement::kNone, NormPlacement::kPre, NormPlacement::kPost}) {
        c.block.method = method;
        c.block.heads = method == AttentionMethod::kSoftmaxAlibi ? 8 : 1;
        c.block.norm_placement = placement;
        c.block.shortcut_weight = placement == NormPlacement::kNone ? 0.0 : 0.6;
        c.block.residual_weight = placement == NormPlacement::kNone ? 1.0 : 0.8;
        c.block.normalised_skip = placement != NormPlacement::kNone && method != AttentionMethod::kEspa;
        const auto trace = spa::run_stack(c);
        for (const auto& k : trace.kernels) {
          CHECK(spa::is_symmetric(k.matrix(), 1e-12));
          CHECK(min_eigenvalue(k.matrix()) >= -1e-9 * k.matrix().trace());
        }
      }
    }
  }

  TEST_CASE("corrected repeated-token runs keep the diagonal near one") {
    spa::StackConfig c;
    c.depth = 36;
    c.seq_len = 100;
    c.gamma_final = 0.02;
    c.repeated_fraction = 0.05;
    c.input_kernel = spa::expected_input_kernel(100, 0.05).matrix();
    const auto averaged = spa::run_stack(c);
    for (const auto& k : averaged.kernels)
      CHECK(oracle::max_abs(k.matrix().diagonal() - Eigen::VectorXd::Ones(100)) <= 1e-12);

    c.input_kernel.reset();
    constexpr int kSeeds = 100;
    double total = 0.0;
    for (int s = 0; s < kSeeds; ++s) {
      c.seed = static_cast<std::uint64_t>(s);
      const auto trace = spa::run_stack(c);
      total += trace.kernels.back().matrix().diagonal().mean();
    }
    CHECK(std::abs(total / kSeeds - 1.0) <= 1e-2);
  }

  TEST_CASE("baselines collapse and pre-norm does not") {
    spa::StackConfig c;
    c.depth = 100;
    c.seq_len = 100;
    c.repeated_fraction = 0.02;
    c.seed = 1;
    c.block.method = AttentionMethod::kSoftmaxAlibi;
    c.block.heads = 8;
    const auto plain = spa::run_stack(c);
    CHECK(plain.metrics[20].mean_offdiag_cosine >= 0.95);
    CHECK(plain.metrics[100].mean_offdiag_cosine >= 0.95);

    c.block.norm_placement = NormPlacement::kPost;
    c.block.shortcut_weight = 1.0;
    c.block.residual_weight = 1.0;
    CHECK(spa::run_stack(c).metrics[100].mean_offdiag_cosine >= 0.95);

    c.block.norm_placement = NormPlacement::kPre;
    c.block.shortcut_weight = 0.98;
    c.block.residual_weight = std::sqrt(1.0 - 0.98 * 0.98);
    c.block.normalised_skip = true;
    CHECK(spa::run_stack(c).metrics[100].mean_offdiag_cosine < 0.95);
  }

  TEST_CASE("normalised-skip E-SPA first block uses the adjusted rate") {
    spa::StackConfig c = skipless(AttentionMethod::kEspa, 8, 20);
    c.gamma_final = 0.3;
    const double alpha = 0.5;
    const double beta = std::sqrt(0.75);
    c.block.shortcut_weight = alpha;
    c.block.residual_weight = beta;
    c.block.normalised_skip = true;
    const auto trace = spa::run_stack(c);
    const auto s = spa::espa_schedule(8, 0.3);
    const DecayRate adjusted = spa::skip_adjusted_gamma(s.gammas[0], s.gammas[1], alpha);
    const Matrix expected = alpha * alpha * Matrix::Identity(20, 20) + beta * beta * oracle::exp_kernel(20, adjusted.value());
    CHECK(oracle::max_abs(trace.kernels[1].matrix() - expected) <= 1e-12);
  }

  TEST_CASE("per-block overrides and MLP blocks") {
    spa::StackConfig c = skipless(AttentionMethod::kEspa, 4, 10);
    spa::BlockSpec identity;
    identity.method = AttentionMethod::kValueSkipInit;
    c.block_overrides[3] = identity;
    const auto trace = spa::run_stack(c);
    CHECK(trace.kernels[3].matrix() == trace.kernels[2].matrix());
    CHECK_FALSE(trace.kernels[4].matrix() == trace.kernels[3].matrix());

    spa::StackConfig mlp = skipless(AttentionMethod::kEspa, 4, 10);
    const auto without = spa::run_stack(mlp);
    mlp.mlp_blocks = true;
    const auto with = spa::run_stack(mlp);
    for (long l = 0; l <= 4; ++l) CHECK(with.kernels[l].matrix() == without.kernels[l].matrix());
  }

  TEST_CASE("configuration errors") {
    spa::StackConfig c = skipless(AttentionMethod::kEspa, 4, 10);
    c.depth = 0;
    CHECK(code_of([&] { spa::run_stack(c); }) == ErrorCode::kInvalidConfig);
    c.depth = 4;
    c.seq_len = 1;
    CHECK(code_of([&] { spa::run_stack(c); }) == ErrorCode::kInvalidConfig);
    c.seq_len = 10;
    c.block.heads = 0;
    CHECK(code_of([&] { spa::run_stack(c); }) == ErrorCode::kInvalidConfig);
    c.block.heads = 1;
    c.block.normalised_skip = true;
    c.block.shortcut_weight = 0.5;
    c.block.residual_weight = 0.5;
    CHECK(code_of([&] { spa::run_stack(c); }) == ErrorCode::kInvalidConfig);
    c.block = {};
    c.block_overrides[9] = {};
    CHECK(code_of([&] { spa::run_stack(c); }) == ErrorCode::kInvalidConfig);
    c.block_overrides.clear();
    c.input_kernel = Matrix::Identity(3, 3);
    CHECK(code_of([&] { spa::run_stack(c); }) == ErrorCode::kDimensionMismatch);
  }

  TEST_CASE("numeric failures carry the block index") {
    spa::StackConfig c = skipless(AttentionMethod::kEspa, 2, 10);
    c.gamma_final = 0.005;
    c.block.shortcut_weight = 0.9;
    c.block.residual_weight = std::sqrt(1.0 - 0.81);
    c.block.normalised_skip = true;
    try {
      spa::run_stack(c);
      FAIL("expected ShortcutTooLarge");
    } catch (const spa::Error& e) {
      CHECK(e.code() == ErrorCode::kShortcutTooLarge);
      REQUIRE(e.block().has_value());
      CHECK(*e.block() == 1);
    }
  }

  TEST_CASE("run_stack is deterministic per seed") {
    spa::StackConfig c;
    c.depth = 5;
    c.seq_len = 30;
    c.repeated_fraction = 0.1;
    c.seed = 1234;
    CHECK(spa::run_stack(c).kernels.back().matrix() == spa::run_stack(c).kernels.back().matrix());
  }
}
