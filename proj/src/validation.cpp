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

#include "spa/validation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "spa/error.hpp"
#include "spa/finite_width.hpp"
#include "spa/kernel_families.hpp"
#include "spa/linalg.hpp"
#include "spa/propagation.hpp"
#include "spa/rng.hpp"
#include "spa/schedules.hpp"

namespace spa {

namespace {

constexpr std::array<Index, 4> kGridSizes{2, 8, 64, 128};
constexpr std::array<double, 4> kGridRates{0.005, 0.02, 0.2, 2.0};

CheckResult check(std::string name, double value, double bound) {
  std::ostringstream detail;
  detail << "max error " << value << " (bound " << bound << ")";
  return {std::move(name), value <= bound, detail.str()};
}

std::vector<CheckResult> analytic_suite() {
  double factor_err = 0.0;
  double attention_err = 0.0;
  for (Index t : kGridSizes) {
    for (double g : kGridRates) {
      const DecayRate gamma = DecayRate::of(g);
      const Matrix numeric = cholesky(exp_kernel(t, gamma).matrix());
      factor_err = std::max(factor_err, max_abs(numeric - exp_cholesky_analytic(t, gamma).matrix()));
      for (double g_in : kGridRates) {
        if (g_in < g) continue;
        const DecayRate gamma_in = DecayRate::of(g_in);
        const Matrix solved =
            solve_lower_triangular_right(numeric, cholesky(exp_kernel(t, gamma_in).matrix()));
        attention_err =
            std::max(attention_err, max_abs(solved - espa_attention_analytic(t, gamma_in, gamma).matrix));
      }
    }
  }
  return {check("analytic cholesky factor", factor_err, 1e-10),
          check("analytic attention matrix", attention_err, 1e-10)};
}

double log_uniform(RngStream& rng, double lo, double hi) {
  return std::exp(std::log(lo) + rng.uniform() * (std::log(hi) - std::log(lo)));
}

std::vector<CheckResult> nonneg_suite() {
  RngStream rng(20240601);
  double espa_min = 0.0;
  double uspa_min = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index t = 2 + static_cast<Index>(rng.uniform_index(63));
    const double a = log_uniform(rng, 1e-3, 5.0);
    const double b = log_uniform(rng, 1e-3, 5.0);
    const DecayRate gamma_in = trial % 10 == 0 ? DecayRate::infinite() : DecayRate::of(std::max(a, b));
    const DecayRate gamma_out = DecayRate::of(std::min(a, b));
    const Matrix l_out = cholesky(exp_kernel(t, gamma_out).matrix());
    const Matrix l_in = cholesky(exp_kernel(t, gamma_in).matrix());
    espa_min = std::min(espa_min, solve_lower_triangular_right(l_out, l_in).minCoeff());

    const double r1 = 0.999 * rng.uniform();
    const double r2 = 0.999 * rng.uniform();
    const Matrix u_out = cholesky(uniform_kernel(t, std::max(r1, r2)).matrix());
    const Matrix u_in = cholesky(uniform_kernel(t, std::min(r1, r2)).matrix());
    uspa_min = std::min(uspa_min, solve_lower_triangular_right(u_out, u_in).minCoeff());
  }
  auto result = [](std::string name, double min_entry) {
    std::ostringstream detail;
    detail << "min entry " << min_entry << " (bound -1e-12)";
    return CheckResult{std::move(name), min_entry >= -1e-12, detail.str()};
  };
  return {result("exponential attention non-negative", espa_min),
          result("uniform attention non-negative", uspa_min)};
}

std::vector<CheckResult> telescope_suite() {
  constexpr Index kSize = 100;
  constexpr Index kDepth = 36;
  StackConfig config;
  config.depth = kDepth;
  config.seq_len = kSize;
  config.gamma_final = 0.005;
  config.input_kernel = Matrix::Identity(kSize, kSize);

  config.block.method = AttentionMethod::kEspa;
  const PropagationTrace espa = run_stack(config);
  const DecaySchedule gammas = espa_schedule(kDepth, config.gamma_final);
  double espa_err = 0.0;
  for (Index l = 0; l <= kDepth; ++l)
    espa_err = std::max(espa_err, max_abs(espa.kernels[l].matrix() - exp_kernel(kSize, gammas.gammas[l]).matrix()));

  config.block.method = AttentionMethod::kUspa;
  const PropagationTrace uspa = run_stack(config);
  const UniformSchedule rhos = uspa_schedule(kDepth, config.rho_final, 0.0);
  double uspa_err = 0.0;
  for (Index l = 0; l <= kDepth; ++l)
    uspa_err = std::max(uspa_err, max_abs(uspa.kernels[l].matrix() - uniform_kernel(kSize, rhos.rhos[l]).matrix()));

  return {check("exponential kernel telescopes", espa_err, 1e-9),
          check("uniform kernel telescopes", uspa_err, 1e-9)};
}

std::vector<CheckResult> exactness_suite() {
  std::vector<CheckResult> out;
  RngStream rng(7);
  const ExactnessReport deep = measure_espa_stack(32, 64, 4, 8, 0.005, InitSpec::orthogonal(), rng);
  out.push_back(check("finite-width orthogonal stack exact", deep.max_deviation, kExactnessTolerance));
  const ExactnessReport single = measure_espa_stack(32, 64, 4, 1, 0.005, InitSpec::orthogonal(), rng);
  out.push_back(check("finite-width single layer exact", single.max_deviation, 1e-8));
  return out;
}

std::vector<CheckResult> corrections_suite() {
  constexpr Index kSize = 100;
  constexpr double kRepeat = 0.05;
  StackConfig config;
  config.depth = 36;
  config.seq_len = kSize;
  config.gamma_final = 0.02;
  config.repeated_fraction = kRepeat;
  config.correct_repeated_tokens = true;
  config.input_kernel = expected_input_kernel(kSize, kRepeat).matrix();
  const PropagationTrace trace = run_stack(config);
  double err = 0.0;
  for (const KernelMatrix& k : trace.kernels)
    err = std::max(err, (k.matrix().diagonal().array() - 1.0).abs().maxCoeff());
  return {check("corrected averaged diagonal is one", err, 1e-12)};
}

}  // namespace

std::vector<std::string_view> validation_suite_names() {
  return {"analytic", "nonneg", "telescope", "exactness", "corrections"};
}

std::vector<CheckResult> run_validation_suite(std::string_view suite) {
  if (suite == "analytic") return analytic_suite();
  if (suite == "nonneg") return nonneg_suite();
  if (suite == "telescope") return telescope_suite();
  if (suite == "exactness") return exactness_suite();
  if (suite == "corrections") return corrections_suite();
  if (suite == "all") {
    std::vector<CheckResult> all;
    for (std::string_view name : validation_suite_names()) {
      auto part = run_validation_suite(name);
      all.insert(all.end(), part.begin(), part.end());
    }
    return all;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown validation suite '" + std::string(suite) + "'");
}

}  // namespace spa
