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

#ifndef SPA_LINALG_HPP_
#define SPA_LINALG_HPP_

#include <Eigen/Dense>

#include "spa/rng.hpp"

namespace spa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kSymmetryTolerance = 1e-12;
inline constexpr double kPivotTolerance = 1e-14;

double max_abs(const Matrix& m);
bool is_symmetric(const Matrix& m, double tol = kSymmetryTolerance);
bool is_lower_triangular(const Matrix& m);

/// Returns (m + mᵀ) / 2.
Matrix symmetrized(const Matrix& m);

/// Lower-triangular Cholesky factor with positive diagonal.
///
/// Throws kNotSymmetric when m deviates from symmetry by more than
/// 1e-12 (relative to max(1, |m|_max)) and kNotPositiveDefinite when a pivot
/// falls to 1e-14 or below. No jitter is ever added.
Matrix cholesky(const Matrix& m);

/// Solves X · l = a for X, with l lower triangular.
Matrix solve_lower_triangular_right(const Matrix& a, const Matrix& l);

/// Row-wise softmax over the entries where mask == 1.
///
/// Masked entries receive exactly zero probability: they are dropped from the
/// normalisation rather than pushed down by a finite -gamma_const, which is
/// only validated here so callers can keep the conventional masked-logit
/// interface. Every row must keep at least one unmasked entry.
Matrix masked_row_softmax(const Matrix& logits, const Matrix& mask, double gamma_const);

/// Causal mask M with M(i, j) = 1 iff i >= j.
Matrix causal_mask(Index n);

/// Symmetric PSD square root via eigendecomposition.
Matrix symmetric_sqrt(const Matrix& m);
/// Inverse of the symmetric square root; requires m positive definite.
Matrix inverse_symmetric_sqrt(const Matrix& m);

/// Haar-distributed orthogonal matrix: QR of a square Gaussian draw with the
/// signs of R's diagonal folded into Q.
Matrix sample_orthogonal(Index n, RngStream& rng);

/// `rows` orthonormal rows of length `cols` (rows <= cols), distributed as the
/// leading rows of a Haar orthogonal matrix. Avoids a full cols x cols QR.
Matrix sample_orthonormal_rows(Index rows, Index cols, RngStream& rng);

/// Entries i.i.d. N(0, 1/rows): fan-in is the input dimension under X · W.
Matrix sample_gaussian_fan_in(Index rows, Index cols, RngStream& rng);

/// Standard normal entries, filled row by row.
Matrix sample_standard_normal(Index rows, Index cols, RngStream& rng);

}  // namespace spa

#endif  // SPA_LINALG_HPP_
