#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Eigenvalues>

#include "common.hpp"

namespace sparcd {

/// L = I - C^{-1/2} W C^{-1/2} together with the degrees diag(C).
struct NormalizedLaplacian {
  Matrix L;
  Vector degrees;
};

/// Ascending eigenvalues with orthonormal eigenvectors in the columns.
struct EigenBasis {
  Vector values;
  Matrix vectors;
};

inline constexpr double kSymmetryTolerance = 1e-8;
inline constexpr double kEigengapTolerance = 1e-8;

/// Row sums of W; every node must have strictly positive degree.
inline Vector degree_vector(const Matrix& w) {
  detail::require(w.rows() == w.cols(), "weight matrix must be square");
  detail::require(detail::max_asymmetry(w) <= kSymmetryTolerance, "weight matrix must be symmetric");
  detail::require((w.array() >= 0.0).all(), "weight matrix must be nonnegative");
  Vector degrees = w.rowwise().sum();
  for (Eigen::Index r = 0; r < degrees.size(); ++r) {
    if (!(degrees(r) > 0.0)) {
      throw ValidationError("node " + std::to_string(r) + " has zero degree (isolated node)");
    }
  }
  return degrees;
}

inline NormalizedLaplacian normalized_laplacian(const Matrix& w) {
  NormalizedLaplacian out;
  out.degrees = degree_vector(w);
  const Vector inv_root = out.degrees.array().rsqrt();
  const Eigen::Index n = w.rows();
  out.L.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      out.L(i, j) = (i == j ? 1.0 : 0.0) - inv_root(i) * w(i, j) * inv_root(j);
    }
  }
  // Exact symmetry regardless of evaluation order.
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j + 1; i < n; ++i) out.L(j, i) = out.L(i, j);
  }
  return out;
}

// Makes the entry of largest magnitude positive in every column (ties -> lowest index).
inline void fix_signs(Matrix& vectors) {
  for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
      const double a = std::abs(vectors(r, c));
      if (a > best_abs) {
        best_abs = a;
        best = r;
      }
    }
    if (vectors(best, c) < 0.0) vectors.col(c) = -vectors.col(c);
  }
}

/// Full symmetric eigendecomposition, ascending, with deterministic signs.
inline EigenBasis symmetric_eigen(const Matrix& m) {
  detail::require(m.rows() == m.cols(), "eigendecomposition needs a square matrix");
  detail::require(detail::max_asymmetry(m) <= kSymmetryTolerance,
                  "eigendecomposition needs a symmetric matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) throw Error("symmetric eigensolver did not converge");
  EigenBasis out{solver.eigenvalues(), solver.eigenvectors()};
  fix_signs(out.vectors);
  return out;
}

// True when truncating after the K smallest eigenvalues splits a (near-)repeated
// eigenvalue, so the removed subspace is not uniquely defined.
inline bool eigengap_tie(const EigenBasis& basis, std::size_t k) {
  const auto kk = static_cast<Eigen::Index>(k);
  if (kk <= 0 || kk >= basis.values.size()) return false;
  return std::abs(basis.values(kk) - basis.values(kk - 1)) < kEigengapTolerance;
}

}  // namespace sparcd
