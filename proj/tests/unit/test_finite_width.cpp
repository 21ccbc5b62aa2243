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

#include "doctest.h"
#include "oracles.hpp"
#include "spa/error.hpp"
#include "spa/finite_width.hpp"
#include "spa/kernel_families.hpp"
#include "spa/linalg.hpp"
#include "spa/schedules.hpp"

using spa::DecayRate;
using spa::ErrorCode;
using spa::InitSpec;
using spa::Matrix;
using spa::SequenceActivations;

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

double relative_error(const Matrix& got, const Matrix& want) {
  return oracle::max_abs(got - want) / std::max(1.0, oracle::max_abs(want));
}

}  // namespace

TEST_SUITE("finite_width") {
  TEST_CASE("layer construction at init") {
    spa::RngStream rng(1);
    const auto layer = spa::build_espa_layer(16, 32, 4, DecayRate::of(0.4), DecayRate::of(0.1), InitSpec::orthogonal(), rng);
    CHECK(layer.heads == 4);
    CHECK(layer.head_dim == 8);
    REQUIRE(layer.query.size() == 4);
    for (const Matrix& q : layer.query) {
      CHECK(q.rows() == 32);
      CHECK(q.cols() == 8);
      CHECK(q.isZero(0.0));
    }
    const Matrix v = layer.value_concat();
    CHECK(oracle::max_abs(v.transpose() * v - Matrix::Identity(32, 32)) <= 1e-12);
    CHECK(oracle::max_abs(layer.output.transpose() * layer.output - Matrix::Identity(32, 32)) <= 1e-12);
    CHECK(oracle::max_abs(layer.op.matrix - spa::espa_attention_analytic(16, DecayRate::of(0.4), DecayRate::of(0.1)).matrix) == 0.0);

    const auto gauss = spa::build_espa_layer(16, 32, 4, DecayRate::of(0.4), DecayRate::of(0.1), InitSpec::gaussian(), rng);
    for (const Matrix& q : gauss.query) CHECK(q.isZero(0.0));
    CHECK_FALSE(gauss.key.front().isZero(0.0));

    CHECK(code_of([&] {
            spa::build_espa_layer(16, 30, 4, DecayRate::of(0.4), DecayRate::of(0.1), InitSpec::orthogonal(), rng);
          }) == ErrorCode::kDimensionMismatch);
    CHECK(code_of([&] {
            spa::build_espa_layer(16, 32, 4, DecayRate::of(0.1), DecayRate::of(0.4), InitSpec::orthogonal(), rng);
          }) == ErrorCode::kOrderViolation);
  }

  TEST_CASE("realised attention equals the operator at init and is shared by heads") {
    spa::RngStream rng(2);
    const long t = 20;
    const long d = 48;
    for (InitSpec init : {InitSpec::orthogonal(), InitSpec::gaussian()}) {
      const auto layer = spa::build_espa_layer(t, d, 6, DecayRate::of(0.3), DecayRate::of(0.05), init, rng);
      const SequenceActivations x{spa::sample_standard_normal(t, d, rng)};
      const auto heads = spa::realized_attention(layer, x);
      REQUIRE(heads.size() == 6);
      for (const Matrix& a : heads) {
        CHECK(oracle::max_abs(a - layer.op.matrix) <= 1e-12);
        CHECK(a == heads.front());
        CHECK(oracle::max_abs(a.rowwise().sum() - layer.op.rescale) <= 1e-12);
      }
    }
  }

  TEST_CASE("small query-key init perturbs attention, more so at larger scale") {
    const long t = 16;
    const long d = 64;
    double previous = 0.0;
    for (double scale : {0.1, 0.5, 2.0}) {
      spa::RngStream rng(3);
      const auto layer =
          spa::build_espa_layer(t, d, 4, DecayRate::of(0.5), DecayRate::of(0.1), InitSpec::small_query_key(scale), rng);
      CHECK_FALSE(layer.query.front().isZero(0.0));
      const SequenceActivations x{spa::sample_standard_normal(t, d, rng)};
      double deviation = 0.0;
      for (const Matrix& a : spa::realized_attention(layer, x))
        deviation = std::max(deviation, oracle::max_abs(a - layer.op.matrix));
      CHECK(deviation > previous);
      previous = deviation;
      // Rows still sum to the rescaling vector.
      for (const Matrix& a : spa::realized_attention(layer, x))
        CHECK(oracle::max_abs(a.rowwise().sum() - layer.op.rescale) <= 1e-12);
    }
    spa::RngStream rng(3);
    CHECK(code_of([&] {
            spa::build_espa_layer(t, d, 4, DecayRate::of(0.5), DecayRate::of(0.1), InitSpec::small_query_key(-1.0), rng);
          }) == ErrorCode::kInvalidConfig);
  }

  TEST_CASE("forward pass with zero queries is A X W_V W_O") {
    spa::RngStream rng(4);
    const long t = 12;
    const long d = 24;
    for (InitSpec init : {InitSpec::orthogonal(), InitSpec::gaussian()}) {
      const auto layer = spa::build_espa_layer(t, d, 3, DecayRate::of(1.0), DecayRate::of(0.2), init, rng);
      const SequenceActivations x{spa::sample_standard_normal(t, d, rng)};
      const Matrix expected = layer.op.matrix * x.values * layer.value_concat() * layer.output;
      CHECK(relative_error(spa::forward_attention(layer, x).values, expected) <= 1e-13);
    }
  }

  TEST_CASE("identity operator with orthogonal weights preserves row norms") {
    spa::RngStream rng(5);
    const auto layer = spa::build_espa_layer(10, 40, 4, DecayRate::of(0.2), DecayRate::of(0.2), InitSpec::orthogonal(), rng);
    const SequenceActivations x{spa::sample_standard_normal(10, 40, rng)};
    const Matrix y = spa::forward_attention(layer, x).values;
    CHECK(oracle::max_abs(y.rowwise().norm() - x.values.rowwise().norm()) <= 1e-12);
  }

  TEST_CASE("stacked layers compose into the product of attention and weights") {
    spa::RngStream rng(6);
    const long t = 16;
    const long d = 32;
    const long depth = 8;
    const auto s = spa::espa_schedule(depth, 0.05);
    SequenceActivations x{spa::sample_standard_normal(t, d, rng)};
    const Matrix x0 = x.values;
    Matrix pi = Matrix::Identity(t, t);
    Matrix w = Matrix::Identity(d, d);
    for (long l = 1; l <= depth; ++l) {
      const auto layer = spa::build_espa_layer(t, d, 4, s.gammas[l - 1], s.gammas[l], InitSpec::orthogonal(), rng);
      x = spa::forward_attention(layer, x);
      pi = layer.op.matrix * pi;
      w = w * layer.value_concat() * layer.output;
    }
    CHECK(oracle::max_abs(pi - oracle::closed_form_factor(t, 0.05)) <= 1e-9);
    CHECK(oracle::max_abs(w.transpose() * w - Matrix::Identity(d, d)) <= 1e-12);
    CHECK(relative_error(x.values, pi * x0 * w) <= 1e-12);
  }

  TEST_CASE("embeddings") {
    spa::RngStream rng(7);
    auto [x, sigma] = spa::sample_embeddings(40, 64, 0.3, rng);
    CHECK(x.length() == 40);
    CHECK(x.width() == 64);
    const Matrix k = spa::empirical_kernel(x).matrix();
    for (long i = 0; i < 40; ++i)
      for (long j = 0; j < i; ++j)
        if (sigma(i, j) == 1.0) {
          CHECK(x.values.row(i) == x.values.row(j));
          CHECK(k(i, j) == doctest::Approx(k(i, i)).epsilon(1e-14));
        }
    CHECK(code_of([&] { spa::sample_embeddings(4, 0, 0.1, rng); }) == ErrorCode::kDimensionMismatch);
  }

  TEST_CASE("embedding kernels concentrate on the token kernel") {
    const long d = 4096;
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      spa::RngStream rng(seed);
      auto [x, sigma] = spa::sample_embeddings(16, d, 0.1, rng);
      total += oracle::max_abs(spa::empirical_kernel(x).matrix() - sigma.matrix());
    }
    CHECK(total / 10.0 <= 5.0 / std::sqrt(static_cast<double>(d)));
  }

  TEST_CASE("embedding kernel mean matches the token kernel") {
    // Monte Carlo over fixed ids: the average of X Xᵀ / d approaches the 0/1 kernel.
    const long d = 8;
    constexpr int kDraws = 4000;
    Matrix sum = Matrix::Zero(6, 6);
    Matrix target;
    for (int s = 0; s < kDraws; ++s) {
      spa::RngStream rng(1000 + s);
      auto [x, sigma] = spa::sample_embeddings(6, d, 0.0, rng);
      sum += spa::empirical_kernel(x).matrix();
      target = sigma.matrix();
    }
    // Per-entry standard deviation is at most sqrt(2/d); allow 4 standard errors.
    CHECK(oracle::max_abs(sum / kDraws - target) <= 4.0 * std::sqrt(2.0 / d / kDraws));
  }

  TEST_CASE("empirical kernel") {
    const long d = 8;
    const SequenceActivations x{std::sqrt(static_cast<double>(d)) * Matrix::Identity(d, d)};
    CHECK(oracle::max_abs(spa::empirical_kernel(x).matrix() - Matrix::Identity(d, d)) <= 1e-15);
    spa::RngStream rng(8);
    const SequenceActivations o = spa::orthonormal_inputs(10, 30, rng);
    CHECK(oracle::max_abs(spa::empirical_kernel(o).matrix() - Matrix::Identity(10, 10)) <= 1e-13);
  }

  TEST_CASE("orthogonal-mode exactness") {
    spa::RngStream rng(9);
    const auto report = spa::validate_exactness(32, 64, 4, 8, 0.005, rng);
    CHECK(report.block_deviation.size() == 9);
    CHECK(report.max_deviation <= 1e-6);

    for (auto [t, d, h, depth] : {std::tuple{8L, 8L, 1L, 3L}, std::tuple{10L, 40L, 8L, 12L}, std::tuple{32L, 96L, 3L, 5L}}) {
      const auto r = spa::measure_espa_stack(t, d, h, depth, 0.01, InitSpec::orthogonal(), rng);
      CHECK(r.max_deviation <= 1e-6);
    }

    const auto single = spa::measure_espa_stack(32, 64, 4, 1, 0.005, InitSpec::orthogonal(), rng);
    CHECK(single.block_deviation.back() <= 1e-8);
  }

  TEST_CASE("exactness violations name the block") {
    spa::RngStream rng(10);
    try {
      spa::validate_exactness(8, 16, 2, 3, 0.1, rng, 0.0);
      FAIL("expected ExactnessViolation");
    } catch (const spa::ExactnessViolation& e) {
      CHECK(e.code() == ErrorCode::kExactnessViolated);
      CHECK(e.offending_block() >= 0);
      CHECK(e.offending_block() <= 3);
      CHECK(e.deviation() > 0.0);
    }
    CHECK(code_of([&] { spa::validate_exactness(8, 6, 2, 3, 0.1, rng); }) == ErrorCode::kDimensionMismatch);
    CHECK(code_of([&] { spa::validate_exactness(8, 16, 3, 3, 0.1, rng); }) == ErrorCode::kDimensionMismatch);
  }

  TEST_CASE("gaussian mode is only approximately exact") {
    spa::RngStream rng(11);
    const auto gauss = spa::measure_espa_stack(16, 64, 4, 4, 0.05, InitSpec::gaussian(), rng);
    CHECK(gauss.max_deviation > 1e-3);
    CHECK(std::isfinite(gauss.max_deviation));
  }

  TEST_CASE("Value-SkipInit layer") {
    spa::RngStream rng(12);
    const long t = 14;
    const long d = 32;
    auto layer = spa::build_value_skipinit_layer(d, 4, InitSpec::orthogonal(), rng);
    CHECK(layer.alpha == 1.0);
    CHECK(layer.beta == 0.0);
    const SequenceActivations x{spa::sample_standard_normal(t, d, rng)};
    const Matrix expected = x.values * layer.value_concat() * layer.output;
    CHECK(relative_error(spa::value_skipinit_forward(layer, x).values, expected) <= 1e-13);
    CHECK(oracle::max_abs(spa::empirical_kernel(spa::value_skipinit_forward(layer, x)).matrix() -
                          spa::empirical_kernel(x).matrix()) <= 1e-8);

    layer.alpha = 0.0;
    layer.beta = 1.0;
    const Matrix y = spa::value_skipinit_forward(layer, x).values;
    Matrix mixed(t, d);
    for (long n = 0; n < 4; ++n) {
      const Matrix q = x.values * layer.query[n];
      const Matrix k = x.values * layer.key[n];
      const Matrix a = oracle::causal_softmax(q * k.transpose() / std::sqrt(8.0));
      mixed.middleCols(n * 8, 8) = a * x.values * layer.value[n];
    }
    CHECK(relative_error(y, mixed * layer.output) <= 1e-12);
    CHECK(code_of([&] { spa::build_value_skipinit_layer(30, 4, InitSpec::orthogonal(), rng); }) ==
          ErrorCode::kDimensionMismatch);
  }

  TEST_CASE("corrected finite-width run keeps the mean diagonal in band") {
    const long t = 100;
    const long d = 512;
    const long depth = 36;
    const double r = 0.05;
    const auto s = spa::espa_schedule(depth, 0.02);
    const auto corr = spa::repeated_token_corrections(s, t, r);
    std::vector<spa::AttentionOperator> ops;
    for (long l = 1; l <= depth; ++l) ops.push_back(spa::corrected_attention(l, s, corr, t));
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      spa::RngStream rng(seed);
      auto [x, sigma] = spa::sample_embeddings(t, d, r, rng);
      const auto kernels = spa::run_attention_stack(x, ops, 4, InitSpec::orthogonal(), rng);
      const double mean_diag = kernels.back().matrix().diagonal().mean();
      CHECK(mean_diag >= 0.8);
      CHECK(mean_diag <= 1.2);
    }
  }
}
