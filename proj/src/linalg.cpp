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

#include "spa/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "spa/error.hpp"

namespace spa {

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

bool is_symmetric(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, max_abs(m));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < i; ++j)
      if (std::abs(m(i, j) - m(j, i)) > tol * scale) return false;
  return true;
}

bool is_lower_triangular(const Matrix& m) {
  if (m.rows() != m.cols()) return false;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = i + 1; j < m.cols(); ++j)
      if (m(i, j) != 0.0) return false;
  return true;
}

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

Matrix cholesky(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0)
    throw Error(ErrorCode::kDimensionMismatch, "cholesky needs a non-empty square matrix");
  if (!is_symmetric(m)) throw Error(ErrorCode::kNotSymmetric, "cholesky input is not symmetric");

  const Index n = m.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    double pivot = m(j, j);
    for (Index k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot > kPivotTolerance)) {
      std::ostringstream msg;
      msg << "pivot " << pivot << " at index " << j;
      throw Error(ErrorCode::kNotPositiveDefinite, msg.str());
    }
    const double diag = std::sqrt(pivot);
    l(j, j) = diag;
    for (Index i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / diag;
    }
  }
  return l;
}

Matrix solve_lower_triangular_right(const Matrix& a, const Matrix& l) {
  if (l.rows() != l.cols() || a.cols() != l.rows())
    throw Error(ErrorCode::kDimensionMismatch, "solve_lower_triangular_right shape mismatch");
  for (Index i = 0; i < l.rows(); ++i)
    if (!(std::abs(l(i, i)) > kPivotTolerance))
      throw Error(ErrorCode::kSingularFactor, "zero diagonal in triangular factor");
  return l.triangularView<Eigen::Lower>().solve<Eigen::OnTheRight>(a);
}

Matrix masked_row_softmax(const Matrix& logits, const Matrix& mask, double gamma_const) {
  if (logits.rows() != mask.rows() || logits.cols() != mask.cols())
    throw Error(ErrorCode::kDimensionMismatch, "logits and mask differ in shape");
  if (!(gamma_const > 0.0))
    throw Error(ErrorCode::kInvalidMask, "masking constant must be positive");

  Matrix out = Matrix::Zero(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    double row_max = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (Index j = 0; j < logits.cols(); ++j) {
      const double mij = mask(i, j);
      if (mij != 0.0 && mij != 1.0) throw Error(ErrorCode::kInvalidMask, "mask entries must be 0 or 1");
      if (mij == 1.0) {
        any = true;
        row_max = std::max(row_max, logits(i, j));
      }
    }
    if (!any) {
      std::ostringstream msg;
      msg << "row " << i << " is fully masked";
      throw Error(ErrorCode::kInvalidMask, msg.str());
    }
    double total = 0.0;
    for (Index j = 0; j < logits.cols(); ++j) {
      if (mask(i, j) == 1.0) {
        out(i, j) = std::exp(logits(i, j) - row_max);
        total += out(i, j);
      }
    }
    out.row(i) /= total;
  }
  return out;
}

Matrix causal_mask(Index n) {
  Matrix m = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j <= i; ++j) m(i, j) = 1.0;
  return m;
}

namespace {

Matrix spectral_map(const Matrix& m, double (*f)(double), bool require_pd) {
  if (!is_symmetric(m)) throw Error(ErrorCode::kNotSymmetric, "spectral function needs a symmetric matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  Vector values = eig.eigenvalues();
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  for (Index i = 0; i < values.size(); ++i) {
    if (require_pd && !(values(i) > kPivotTolerance * scale))
      throw Error(ErrorCode::kNotPositiveDefinite, "matrix is not positive definite");
    // Round-off can leave tiny negative eigenvalues on PSD input.
    values(i) = f(std::max(values(i), 0.0));
  }
  return symmetrized(eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose());
}

}  // namespace

Matrix symmetric_sqrt(const Matrix& m) {
  return spectral_map(m, [](double v) { return std::sqrt(v); }, false);
}

Matrix inverse_symmetric_sqrt(const Matrix& m) {
  return spectral_map(m, [](double v) { return 1.0 / std::sqrt(v); }, true);
}

Matrix sample_standard_normal(Index rows, Index cols, RngStream& rng) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> draws(rows, cols);
  double* data = draws.data();
  for (Index k = 0; k < rows * cols; ++k) data[k] = rng.normal();
  return draws;
}

namespace {

// Q factor of a tall Gaussian draw with sign correction, so the columns are
// Haar distributed.
Matrix haar_columns(Index rows, Index cols, RngStream& rng) {
  const Matrix g = sample_standard_normal(rows, cols, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
  const Matrix& r = qr.matrixQR();
  for (Index j = 0; j < cols; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

}  // namespace

Matrix sample_orthogonal(Index n, RngStream& rng) {
  if (n < 1) throw Error(ErrorCode::kDimensionMismatch, "orthogonal size must be positive");
  return haar_columns(n, n, rng);
}

Matrix sample_orthonormal_rows(Index rows, Index cols, RngStream& rng) {
  if (rows < 1 || rows > cols)
    throw Error(ErrorCode::kDimensionMismatch, "need 1 <= rows <= cols for orthonormal rows");
  return haar_columns(cols, rows, rng).transpose();
}

Matrix sample_gaussian_fan_in(Index rows, Index cols, RngStream& rng) {
  if (rows < 1 || cols < 1) throw Error(ErrorCode::kDimensionMismatch, "matrix shape must be positive");
  return sample_standard_normal(rows, cols, rng) / std::sqrt(static_cast<double>(rows));
}

}  // namespace spa
