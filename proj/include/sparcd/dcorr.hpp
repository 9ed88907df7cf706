#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "common.hpp"
#include "parallel.hpp"
#include "tensorio.hpp"

namespace sparcd {

/// Doubly-centered distance matrix H D H together with its energy <D~, D~>.
struct CenteredDistance {
  Matrix values;
  double energy = 0.0;
};

// Fixed summation order (four interleaved partial sums), independent of
// memory alignment, so every code path produces bit-identical distances.
inline double squared_distance(const double* a, const double* b, std::size_t len) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t t = 0;
  for (; t + 4 <= len; t += 4) {
    const double d0 = a[t] - b[t];
    const double d1 = a[t + 1] - b[t + 1];
    const double d2 = a[t + 2] - b[t + 2];
    const double d3 = a[t + 3] - b[t + 3];
    s0 += d0 * d0;
    s1 += d1 * d1;
    s2 += d2 * d2;
    s3 += d3 * d3;
  }
  for (; t < len; ++t) {
    const double d = a[t] - b[t];
    s0 += d * d;
  }
  return (s0 + s1) + (s2 + s3);
}

/// Euclidean distances between the rows of x (subjects), n x n.
template <typename Derived>
Matrix pairwise_euclidean(const Eigen::MatrixBase<Derived>& x) {
  const RowMatrix rows = x;
  const Eigen::Index n = rows.rows();
  const auto len = static_cast<std::size_t>(rows.cols());
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = std::sqrt(squared_distance(rows.row(i).data(), rows.row(j).data(), len));
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

// D~ = D - rowmean 1' - 1 colmean' + grandmean, i.e. H D H for symmetric D.
inline CenteredDistance double_center(Matrix d) {
  const Eigen::Index n = d.rows();
  const Vector col_mean = d.colwise().mean().transpose();
  const Vector row_mean = d.rowwise().mean();
  const double grand = row_mean.mean();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) d(i, j) += grand - row_mean(i) - col_mean(j);
  }
  CenteredDistance out;
  out.energy = d.squaredNorm();
  out.values = std::move(d);
  return out;
}

inline double centered_inner(const CenteredDistance& a, const CenteredDistance& b) {
  return (a.values.array() * b.values.array()).sum();
}

// Negative round-off in the numerator is clamped to zero; the ratio is capped at one.
inline double dcor_from_centered(const CenteredDistance& a, const CenteredDistance& b) {
  const double num = std::max(0.0, centered_inner(a, b));
  const double den = std::sqrt(a.energy) * std::sqrt(b.energy);
  return std::min(1.0, num / den);
}

namespace detail {

inline void require_energy(const CenteredDistance& c, std::size_t region, std::size_t other) {
  if (!(c.energy > 0.0) || !std::isfinite(c.energy)) {
    throw DegenerateRegionError(region, other,
                                "degenerate region " + std::to_string(region) +
                                    ": all subjects have identical signals (zero distance energy)");
  }
}

}  // namespace detail

/// Sample distance correlation between two n x T signal matrices.
template <typename A, typename B>
double dcor(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y, std::size_t x_region = 0,
            std::size_t y_region = 1) {
  detail::require(x.rows() == y.rows(), "dcor inputs must have the same number of subjects");
  detail::require(x.rows() >= 2, "dcor needs at least 2 subjects");
  const auto cx = double_center(pairwise_euclidean(x));
  const auto cy = double_center(pairwise_euclidean(y));
  detail::require_energy(cx, x_region, y_region);
  detail::require_energy(cy, y_region, x_region);
  return dcor_from_centered(cx, cy);
}

struct ConnectivityOptions {
  bool self_loops = true;
  std::size_t threads = 0;
  // Cache all R centered matrices when R * n^2 doubles fit in this budget.
  std::size_t cache_limit_bytes = std::size_t{2} << 30;
};

/// Centered matrices packed as columns of an m x R matrix (m = n(n+1)/2):
/// lower triangle including the diagonal, off-diagonal entries scaled by
/// sqrt(2), so that column inner products equal the full Frobenius products.
class PackedCentered {
 public:
  PackedCentered(std::size_t subjects, std::size_t regions)
      : n_(static_cast<Eigen::Index>(subjects)),
        packed_(n_ * (n_ + 1) / 2, static_cast<Eigen::Index>(regions)) {}

  std::size_t regions() const noexcept { return static_cast<std::size_t>(packed_.cols()); }

  void store(std::size_t region, const Matrix& centered) {
    static const double root2 = std::sqrt(2.0);
    double* out = packed_.col(static_cast<Eigen::Index>(region)).data();
    for (Eigen::Index j = 0; j < n_; ++j) {
      *out++ = centered(j, j);
      for (Eigen::Index i = j + 1; i < n_; ++i) *out++ = root2 * centered(i, j);
    }
  }

  // Gram matrix of all regions; only the lower triangle is trusted.
  Matrix gram() const {
    Matrix g(packed_.cols(), packed_.cols());
    g.noalias() = packed_.transpose() * packed_;
    return g;
  }

 private:
  Eigen::Index n_;
  Matrix packed_;
};

namespace detail {

inline Matrix connectivity_from_gram(const Matrix& g, bool self_loops) {
  const Eigen::Index regions = g.rows();
  for (Eigen::Index r = 0; r < regions; ++r) {
    if (!(g(r, r) > 0.0) || !std::isfinite(g(r, r))) {
      const auto idx = static_cast<std::size_t>(r);
      throw DegenerateRegionError(idx, idx,
                                  "degenerate region " + std::to_string(idx) +
                                      ": all subjects have identical signals (zero distance energy)");
    }
  }
  Vector root(regions);
  for (Eigen::Index r = 0; r < regions; ++r) root(r) = std::sqrt(g(r, r));
  Matrix w(regions, regions);
  for (Eigen::Index r = 0; r < regions; ++r) {
    w(r, r) = self_loops ? 1.0 : 0.0;
    for (Eigen::Index s = r + 1; s < regions; ++s) {
      const double v = std::min(1.0, std::max(0.0, g(s, r)) / (root(r) * root(s)));
      w(s, r) = v;
      w(r, s) = v;
    }
  }
  return w;
}

}  // namespace detail

inline Matrix connectivity_from_packed(const PackedCentered& packed, const ConnectivityOptions& options = {}) {
  return detail::connectivity_from_gram(packed.gram(), options.self_loops);
}

/// Assembles W from precomputed centered matrices.
inline Matrix connectivity_from_centered(std::span<const CenteredDistance> centered,
                                         const ConnectivityOptions& options = {}) {
  detail::require(!centered.empty(), "no regions");
  PackedCentered packed(static_cast<std::size_t>(centered.front().values.rows()), centered.size());
  for (std::size_t r = 0; r < centered.size(); ++r) {
    detail::require_energy(centered[r], r, r);
    packed.store(r, centered[r].values);
  }
  return connectivity_from_packed(packed, options);
}

inline std::vector<CenteredDistance> centered_regions(const ConditionTensor& cond, std::size_t threads) {
  std::vector<CenteredDistance> centered(cond.regions());
  parallel_for(cond.regions(), threads, [&](std::size_t r) {
    centered[r] = double_center(pairwise_euclidean(cond.region(r)));
  });
  return centered;
}

/// R x R matrix of pairwise distance correlations between regions. Every
/// entry lands in a fixed slot, so the result does not depend on `threads`.
inline Matrix connectivity_matrix(const ConditionTensor& cond, const ConnectivityOptions& options = {}) {
  const std::size_t regions = cond.regions();
  const std::size_t n = cond.subjects();
  const std::size_t cache_bytes = regions * n * (n + 1) / 2 * sizeof(double);
  if (cache_bytes <= options.cache_limit_bytes) {
    PackedCentered packed(n, regions);
    parallel_for(regions, options.threads, [&](std::size_t r) {
      const auto c = double_center(pairwise_euclidean(cond.region(r)));
      detail::require_energy(c, r, r);
      packed.store(r, c.values);
    });
    return connectivity_from_packed(packed, options);
  }

  // Recompute per pair when the cache does not fit.
  Matrix w = Matrix::Zero(static_cast<Eigen::Index>(regions), static_cast<Eigen::Index>(regions));
  parallel_for(regions, options.threads, [&](std::size_t r) {
    const auto cr = double_center(pairwise_euclidean(cond.region(r)));
    detail::require_energy(cr, r, r);
    for (std::size_t s = r + 1; s < regions; ++s) {
      const auto cs = double_center(pairwise_euclidean(cond.region(s)));
      detail::require_energy(cs, s, s);
      w(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(r)) = dcor_from_centered(cr, cs);
    }
  });
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    w(r, r) = options.self_loops ? 1.0 : 0.0;
    for (Eigen::Index s = r + 1; s < w.rows(); ++s) w(r, s) = w(s, r);
  }
  return w;
}

/// Distances between all subjects of two conditions pooled as [X; Y], one
/// matrix per region. Subject-level permutations only re-select rows and
/// columns, so distances are computed once.
class PooledDistances {
 public:
  PooledDistances(const ConditionTensor& x, const ConditionTensor& y, std::size_t threads) {
    detail::require(x.regions() == y.regions(), "conditions differ in region count");
    detail::require(x.samples() == y.samples(),
                    "subject-level permutation needs equal series lengths in both conditions");
    const std::size_t regions = x.regions();
    const Eigen::Index nx = static_cast<Eigen::Index>(x.subjects());
    const Eigen::Index ny = static_cast<Eigen::Index>(y.subjects());
    const Eigen::Index t = static_cast<Eigen::Index>(x.samples());
    distances_.resize(regions);
    parallel_for(regions, threads, [&](std::size_t r) {
      RowMatrix pooled(nx + ny, t);
      pooled.topRows(nx) = x.region(r);
      pooled.bottomRows(ny) = y.region(r);
      distances_[r] = pairwise_euclidean(pooled);
    });
  }

  std::size_t regions() const noexcept { return distances_.size(); }

  // Centered distance matrix of region r restricted to the pooled subject indices.
  CenteredDistance centered(std::size_t r, std::span<const std::size_t> subjects) const {
    const auto n = static_cast<Eigen::Index>(subjects.size());
    Matrix sub(n, n);
    const Matrix& d = distances_[r];
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        sub(i, j) = d(static_cast<Eigen::Index>(subjects[static_cast<std::size_t>(i)]),
                      static_cast<Eigen::Index>(subjects[static_cast<std::size_t>(j)]));
      }
    }
    return double_center(std::move(sub));
  }

 private:
  std::vector<Matrix> distances_;
};

}  // namespace sparcd
