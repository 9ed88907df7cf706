#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include "common.hpp"
#include "graphspec.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "tensorio.hpp"

namespace sparcd {

/// Q = I - sum_{k<=K} v_k v_k' over the K smallest-eigenvalue eigenvectors.
struct SpectralProjector {
  Matrix Q;
  std::size_t K = 0;
};

struct LeadingEigen {
  Vector v;
  double lambda = 0.0;
  bool degenerate = false;  // operator is numerically zero, v = e_1
  bool near_tie = false;    // runner-up eigenvalue is within kEigengapTolerance
};

/// Everything produced by the spectral differencing steps for one K.
struct SpectralDiffResult {
  std::size_t K_used = 0;
  Matrix lt_x;  // Q_Y (I - L_X) Q_Y
  Matrix lt_y;  // Q_X (I - L_Y) Q_X
  Matrix ld;    // lt_y - lt_x
  Vector v_d;
  double lambda = 0.0;
  Vector scores;
  double eta = 0.0;
  bool degenerate = false;
  bool eigengap_tie = false;
  bool leading_tie = false;
  std::vector<double> eta_curve;  // filled when K was chosen from data
  std::size_t k_lo = 0;
};

struct KSelection {
  std::size_t K = 0;
  std::size_t lo = 0;
  std::vector<double> eta_curve;  // eta_curve[i] is eta(lo + i)
};

struct SpectralOptions {
  LeadingMode leading = LeadingMode::largest_magnitude;
  std::size_t threads = 1;  // K-sweep fan-out
};

// Below this largest |eigenvalue| the differential operator counts as zero.
inline constexpr double kDegenerateOperator = 1e-10;

inline SpectralProjector projector(const EigenBasis& basis, std::size_t k) {
  const auto r = basis.vectors.rows();
  detail::require(k >= 1 && static_cast<Eigen::Index>(k) < r,
                  "projector rank K must satisfy 1 <= K < R (K=" + std::to_string(k) + ")");
  const auto lead = basis.vectors.leftCols(static_cast<Eigen::Index>(k));
  SpectralProjector out;
  out.K = k;
  out.Q = Matrix::Identity(r, r);
  out.Q.noalias() -= lead * lead.transpose();
  for (Eigen::Index j = 0; j < r; ++j) {
    for (Eigen::Index i = j + 1; i < r; ++i) out.Q(j, i) = out.Q(i, j);
  }
  return out;
}

/// Q (I - L) Q: the other graph's dominant subspace projected out of this one.
inline Matrix filtered_operator(const SpectralProjector& q_other, const NormalizedLaplacian& lap) {
  detail::require(q_other.Q.rows() == lap.L.rows(), "projector and Laplacian differ in size");
  const Eigen::Index r = lap.L.rows();
  Matrix m = Matrix::Identity(r, r) - lap.L;
  Matrix qm(r, r);
  qm.noalias() = q_other.Q * m;
  Matrix out(r, r);
  out.noalias() = qm * q_other.Q;
  for (Eigen::Index j = 0; j < r; ++j) {
    for (Eigen::Index i = j + 1; i < r; ++i) {
      const double v = 0.5 * (out(i, j) + out(j, i));
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

inline Matrix differential_operator(const Matrix& lt_y, const Matrix& lt_x) {
  detail::require(lt_y.rows() == lt_x.rows() && lt_y.cols() == lt_x.cols(),
                  "filtered operators differ in shape");
  return lt_y - lt_x;
}

namespace detail {

// Solves (T - shift I) x = b for a symmetric tridiagonal T by Gaussian
// elimination with partial pivoting (the classic gtsv scheme). Exactly zero
// pivots are replaced by a tiny value, which is what inverse iteration wants.
inline Vector shifted_tridiagonal_solve(const Vector& diag, const Vector& sub, double shift, Vector b,
                                        double tiny) {
  const Eigen::Index n = diag.size();
  Vector d = diag.array() - shift;
  Vector du = sub;
  Vector dl = sub;  // reused for the second superdiagonal after interchanges
  auto guard = [tiny](double& v) {
    if (v == 0.0) v = tiny;
  };
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    if (std::abs(d(i)) >= std::abs(dl(i))) {
      guard(d(i));
      const double fact = dl(i) / d(i);
      d(i + 1) -= fact * du(i);
      b(i + 1) -= fact * b(i);
      dl(i) = 0.0;
    } else {
      const double fact = d(i) / dl(i);
      d(i) = dl(i);
      const double temp = d(i + 1);
      d(i + 1) = du(i) - fact * temp;
      if (i + 2 < n) {
        dl(i) = du(i + 1);
        du(i + 1) = -fact * dl(i);
      } else {
        dl(i) = 0.0;
      }
      du(i) = temp;
      const double tb = b(i);
      b(i) = b(i + 1);
      b(i + 1) = tb - fact * b(i + 1);
    }
  }
  guard(d(n - 1));
  b(n - 1) /= d(n - 1);
  if (n > 1) b(n - 2) = (b(n - 2) - du(n - 2) * b(n - 1)) / d(n - 2);
  for (Eigen::Index i = n - 3; i >= 0; --i) {
    b(i) = (b(i) - du(i) * b(i + 1) - dl(i) * b(i + 2)) / d(i);
  }
  return b;
}

inline Eigen::Index pick_leading(const Vector& values, LeadingMode mode, bool& near_tie) {
  const Eigen::Index r = values.size();
  near_tie = false;
  if (mode == LeadingMode::largest_signed) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < r; ++i) {
      if (values(i) > values(best)) best = i;
    }
    for (Eigen::Index i = 0; i < r; ++i) {
      if (i != best && std::abs(values(i) - values(best)) < kEigengapTolerance) near_tie = true;
    }
    return best;
  }
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < r; ++i) {
    if (std::abs(values(i)) > std::abs(values(best))) best = i;
  }
  for (Eigen::Index i = 0; i < r; ++i) {
    if (i != best && std::abs(std::abs(values(i)) - std::abs(values(best))) < kEigengapTolerance) {
      near_tie = true;
    }
  }
  return best;
}

}  // namespace detail

/// Eigenvector of the eigenvalue with the largest magnitude (or largest value
/// in signed mode), unit L2 norm, sign fixed as in symmetric_eigen.
///
/// Only one eigenpair is needed, so the matrix is tridiagonalized, its
/// eigenvalues found without vectors, and the chosen vector recovered by
/// inverse iteration. If the residual check fails the full solver is used.
inline LeadingEigen leading_eigvec(const Matrix& ld, LeadingMode mode = LeadingMode::largest_magnitude) {
  detail::require(ld.rows() == ld.cols(), "operator must be square");
  detail::require(detail::max_asymmetry(ld) <= kSymmetryTolerance, "operator must be symmetric");
  const Eigen::Index r = ld.rows();
  LeadingEigen out;

  if (r == 1) {
    out.v = Vector::Ones(1);
    out.lambda = ld(0, 0);
    out.degenerate = std::abs(out.lambda) < kDegenerateOperator;
    return out;
  }

  Eigen::Tridiagonalization<Matrix> tri(ld);
  const Vector diag = tri.diagonal();
  const Vector sub = tri.subDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> values_only;
  values_only.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  if (values_only.info() != Eigen::Success) throw Error("tridiagonal eigensolver did not converge");
  const Vector& values = values_only.eigenvalues();

  if (values.cwiseAbs().maxCoeff() < kDegenerateOperator) {
    out.v = Vector::Unit(r, 0);
    out.degenerate = true;
    return out;
  }

  const Eigen::Index best = detail::pick_leading(values, mode, out.near_tie);
  out.lambda = values(best);

  const double scale = std::max(values.cwiseAbs().maxCoeff(), 1.0);
  Vector y(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    y(i) = 0.5 + static_cast<double>(splitmix64(static_cast<std::uint64_t>(i)) >> 11) * 0x1.0p-53;
  }
  y.normalize();
  for (int iter = 0; iter < 3; ++iter) {
    y = detail::shifted_tridiagonal_solve(diag, sub, out.lambda, y, scale * std::numeric_limits<double>::epsilon());
    y.normalize();
  }

  Vector residual = diag.cwiseProduct(y) - out.lambda * y;
  residual.head(r - 1) += sub.cwiseProduct(y.tail(r - 1));
  residual.tail(r - 1) += sub.cwiseProduct(y.head(r - 1));

  if (!y.allFinite() || residual.norm() > 1e-10 * scale) {
    const EigenBasis full = symmetric_eigen(ld);
    out.v = full.vectors.col(best);
    out.lambda = full.values(best);
    return out;
  }

  out.v = tri.matrixQ() * y;
  out.v.normalize();
  Eigen::Index arg = 0;
  out.v.cwiseAbs().maxCoeff(&arg);
  if (out.v(arg) < 0.0) out.v = -out.v;
  return out;
}

/// s(r) = |v(r)| / ||v||_1.
inline Vector region_scores(const Vector& v) {
  const double l1 = v.cwiseAbs().sum();
  detail::require(l1 > 0.0 && std::isfinite(l1), "region scores need a nonzero vector");
  return v.cwiseAbs() / l1;
}

/// Both Laplacians and their eigenbases, shared by every K evaluated on one pair of graphs.
class SpectralPair {
 public:
  SpectralPair(const Matrix& w_x, const Matrix& w_y)
      : lap_x_(normalized_laplacian(w_x)), lap_y_(normalized_laplacian(w_y)),
        basis_x_(symmetric_eigen(lap_x_.L)), basis_y_(symmetric_eigen(lap_y_.L)) {
    detail::require(w_x.rows() == w_y.rows(), "weight matrices differ in size");
  }

  std::size_t regions() const noexcept { return static_cast<std::size_t>(lap_x_.L.rows()); }
  const NormalizedLaplacian& laplacian_x() const noexcept { return lap_x_; }
  const NormalizedLaplacian& laplacian_y() const noexcept { return lap_y_; }
  const EigenBasis& basis_x() const noexcept { return basis_x_; }
  const EigenBasis& basis_y() const noexcept { return basis_y_; }

  SpectralDiffResult evaluate(std::size_t k, LeadingMode mode = LeadingMode::largest_magnitude) const {
    const auto q_x = projector(basis_x_, k);
    const auto q_y = projector(basis_y_, k);
    SpectralDiffResult out;
    out.K_used = k;
    out.lt_y = filtered_operator(q_x, lap_y_);
    out.lt_x = filtered_operator(q_y, lap_x_);
    out.ld = differential_operator(out.lt_y, out.lt_x);
    out.eigengap_tie = eigengap_tie(basis_x_, k) || eigengap_tie(basis_y_, k);

    const LeadingEigen lead = leading_eigvec(out.ld, mode);
    out.v_d = lead.v;
    out.lambda = lead.lambda;
    out.degenerate = lead.degenerate;
    out.leading_tie = lead.near_tie;
    const auto r = static_cast<Eigen::Index>(regions());
    // A zero operator carries no direction: report uniform scores.
    out.scores = lead.degenerate ? Vector::Constant(r, 1.0 / static_cast<double>(r)) : region_scores(lead.v);
    out.eta = out.scores.norm();
    return out;
  }

  // Sweeps K over [lo, hi]; argmax of eta with ties resolved to the smallest K.
  // The winning result is returned with the full curve attached.
  SpectralDiffResult sweep(std::size_t lo, std::size_t hi, const SpectralOptions& options = {}) const {
    validate_k_mode(AutoK{lo, hi}, regions());
    const std::size_t count = hi - lo + 1;
    std::vector<double> curve(count);
    if (options.threads <= 1) {
      std::optional<SpectralDiffResult> best;
      for (std::size_t i = 0; i < count; ++i) {
        auto res = evaluate(lo + i, options.leading);
        curve[i] = res.eta;
        if (!best || res.eta > best->eta) best = std::move(res);
      }
      best->eta_curve = std::move(curve);
      best->k_lo = lo;
      return std::move(*best);
    }
    parallel_for(count, options.threads, [&](std::size_t i) { curve[i] = evaluate(lo + i, options.leading).eta; });
    std::size_t best = 0;
    for (std::size_t i = 1; i < count; ++i) {
      if (curve[i] > curve[best]) best = i;
    }
    auto res = evaluate(lo + best, options.leading);
    res.eta_curve = std::move(curve);
    res.k_lo = lo;
    return res;
  }

  SpectralDiffResult run(const KMode& mode, const SpectralOptions& options = {}) const {
    validate_k_mode(mode, regions());
    if (const auto* f = std::get_if<FixedK>(&mode)) return evaluate(f->k, options.leading);
    const auto& a = std::get<AutoK>(mode);
    return sweep(a.lo, a.hi, options);
  }

 private:
  NormalizedLaplacian lap_x_;
  NormalizedLaplacian lap_y_;
  EigenBasis basis_x_;
  EigenBasis basis_y_;
};

/// Steps from two weight matrices to region scores, resolving K as requested.
inline SpectralDiffResult run_sparcd(const Matrix& w_x, const Matrix& w_y, const KMode& mode,
                                     const SpectralOptions& options = {}) {
  detail::require(w_x.rows() == w_y.rows() && w_x.cols() == w_y.cols(), "weight matrices differ in size");
  return SpectralPair(w_x, w_y).run(mode, options);
}

/// K* = argmax eta(K) over [lo, hi] (smallest K on ties) and the eta curve.
inline KSelection select_k(const Matrix& w_x, const Matrix& w_y, std::size_t lo, std::size_t hi,
                           const SpectralOptions& options = {}) {
  detail::require(w_x.rows() == w_y.rows(), "weight matrices differ in size");
  const auto res = SpectralPair(w_x, w_y).sweep(lo, hi, options);
  return KSelection{res.K_used, lo, res.eta_curve};
}

}  // namespace sparcd
