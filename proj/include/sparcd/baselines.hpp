#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/QR>
#include <boost/math/distributions/students_t.hpp>

#include "common.hpp"
#include "inference.hpp"
#include "parallel.hpp"
#include "tensorio.hpp"

namespace sparcd {

struct OneSampleT {
  double t = 0.0;
  double p = 1.0;
  bool undefined = false;  // zero variance and zero mean
};

/// Two-sided one-sample t-test of mean zero.
inline OneSampleT one_sample_t(const Vector& x) {
  const auto n = static_cast<double>(x.size());
  detail::require(x.size() >= 2, "t-test needs at least 2 observations");
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / (n - 1.0);
  OneSampleT out;
  if (!(var > 0.0)) {
    if (mean == 0.0) {
      out.undefined = true;
      return out;
    }
    out.t = mean > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    out.p = 0.0;
    return out;
  }
  out.t = mean / std::sqrt(var / n);
  boost::math::students_t dist(n - 1.0);
  out.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t))));
  return out;
}

inline constexpr double kFisherClamp = 1.0 - 1e-12;

inline double fisher_z(double r) { return std::atanh(std::clamp(r, -kFisherClamp, kFisherClamp)); }

/// Pearson correlation matrix between the regions (rows) of one subject.
template <typename Derived>
Matrix pearson_matrix(const Eigen::MatrixBase<Derived>& series, std::size_t subject) {
  Matrix c = series;
  for (Eigen::Index r = 0; r < c.rows(); ++r) {
    c.row(r).array() -= c.row(r).mean();
    const double norm = c.row(r).norm();
    if (!(norm > 0.0)) {
      throw ValidationError("zero-variance series (subject " + std::to_string(subject) + ", region " +
                            std::to_string(r) + "): Pearson correlation undefined");
    }
    c.row(r) /= norm;
  }
  Matrix corr = c * c.transpose();
  return (0.5 * (corr + corr.transpose())).eval();
}

// Row-major R x T view of one subject.
inline Eigen::Map<const RowMatrix> subject_view(const ConditionTensor& c, std::size_t i) {
  return {c.values().data() + i * c.regions() * c.samples(), static_cast<Eigen::Index>(c.regions()),
          static_cast<Eigen::Index>(c.samples())};
}

struct Edge {
  std::size_t r = 0;
  std::size_t s = 0;  // r < s
};

inline std::vector<Edge> upper_edges(std::size_t regions) {
  std::vector<Edge> edges;
  edges.reserve(regions * (regions - 1) / 2);
  for (std::size_t r = 0; r < regions; ++r) {
    for (std::size_t s = r + 1; s < regions; ++s) edges.push_back({r, s});
  }
  return edges;
}

struct UcResult {
  Matrix mean_corr_diff;  // mean over subjects of z_X - z_Y, zero diagonal
  std::vector<Edge> edges;
  Vector edge_t;
  Vector edge_p_raw;
  Vector edge_p_bh;
  Vector edge_scores;  // |mean z difference|
  std::vector<bool> edge_rejected;
  std::vector<Edge> significant_edges;
  std::vector<bool> undefined_edges;
  std::size_t undefined_count = 0;

  // A region is detected when any incident edge is significant.
  std::vector<bool> region_detected() const {
    std::vector<bool> out(static_cast<std::size_t>(mean_corr_diff.rows()), false);
    for (const auto& e : significant_edges) out[e.r] = out[e.s] = true;
    return out;
  }

  // Region ranking score: largest incident edge score.
  Vector region_scores() const {
    Vector s = Vector::Zero(mean_corr_diff.rows());
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const double v = edge_scores(static_cast<Eigen::Index>(k));
      auto& a = s(static_cast<Eigen::Index>(edges[k].r));
      auto& b = s(static_cast<Eigen::Index>(edges[k].s));
      a = std::max(a, v);
      b = std::max(b, v);
    }
    return s;
  }
};

/// Per-edge paired t-tests on Fisher-z correlations, BH across all edges.
inline UcResult uc_test(const ConditionTensor& x, const ConditionTensor& y, double alpha, std::size_t threads = 1) {
  detail::require(x.subjects() == y.subjects(), "UC needs paired conditions (equal subject counts)");
  detail::require(x.regions() == y.regions(), "conditions differ in region count");
  detail::require(x.subjects() >= 3, "UC needs n >= 3");
  detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  const std::size_t n = x.subjects();
  const std::size_t regions = x.regions();

  UcResult out;
  out.edges = upper_edges(regions);
  const auto m = static_cast<Eigen::Index>(out.edges.size());
  Matrix diffs(static_cast<Eigen::Index>(n), m);  // subject x edge
  parallel_for(n, threads, [&](std::size_t i) {
    const Matrix cx = pearson_matrix(subject_view(x, i), i);
    const Matrix cy = pearson_matrix(subject_view(y, i), i);
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto r = static_cast<Eigen::Index>(out.edges[static_cast<std::size_t>(k)].r);
      const auto s = static_cast<Eigen::Index>(out.edges[static_cast<std::size_t>(k)].s);
      diffs(static_cast<Eigen::Index>(i), k) = fisher_z(cx(r, s)) - fisher_z(cy(r, s));
    }
  });

  out.mean_corr_diff = Matrix::Zero(static_cast<Eigen::Index>(regions), static_cast<Eigen::Index>(regions));
  out.edge_t.resize(m);
  out.edge_p_raw.resize(m);
  out.edge_scores.resize(m);
  out.undefined_edges.assign(out.edges.size(), false);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto test = one_sample_t(diffs.col(k));
    const double mean = diffs.col(k).mean();
    const auto& e = out.edges[static_cast<std::size_t>(k)];
    out.mean_corr_diff(static_cast<Eigen::Index>(e.r), static_cast<Eigen::Index>(e.s)) = mean;
    out.mean_corr_diff(static_cast<Eigen::Index>(e.s), static_cast<Eigen::Index>(e.r)) = mean;
    out.edge_t(k) = test.t;
    out.edge_p_raw(k) = test.p;
    out.edge_scores(k) = std::abs(mean);
    if (test.undefined) {
      out.undefined_edges[static_cast<std::size_t>(k)] = true;
      ++out.undefined_count;
    }
  }
  auto bh = bh_adjust(out.edge_p_raw, alpha);
  out.edge_p_bh = std::move(bh.p_adj);
  out.edge_rejected = std::move(bh.rejected);
  for (std::size_t k = 0; k < out.edges.size(); ++k) {
    if (out.edge_rejected[k]) out.significant_edges.push_back(out.edges[k]);
  }
  return out;
}

struct PpiOptions {
  bool center_seed = true;          // mean-center s(t) per subject before forming s*p
  std::optional<Vector> regressor;  // p(t) over the concatenated [X, Y] time axis
};

struct PpiResult {
  std::size_t seed = 0;
  Matrix betas;  // n x R interaction coefficients; the seed column is zero
  Vector group_t;
  Vector group_p_raw;
  Vector group_p_bh;
  std::vector<bool> rejected;
  std::vector<std::size_t> significant_regions;
  Vector scores;  // |group t|, zero for the seed

  std::vector<bool> region_detected() const { return rejected; }
};

inline constexpr std::array<const char*, 4> kPpiColumns{"intercept", "seed", "task", "interaction"};

namespace detail {

// Names the first design column that lies in the span of the ones before it.
inline void require_full_rank(const Matrix& design, std::size_t subject) {
  for (Eigen::Index c = 0; c < design.cols(); ++c) {
    Eigen::ColPivHouseholderQR<Matrix> qr(design.leftCols(c + 1));
    if (qr.rank() < c + 1) {
      throw ValidationError("PPI design matrix is rank deficient for subject " + std::to_string(subject) +
                            ": column '" + kPpiColumns[static_cast<std::size_t>(c)] +
                            "' is collinear with the preceding columns");
    }
  }
}

}  // namespace detail

/// Design [1, s, p, s*p] for one subject's concatenated series.
inline Matrix ppi_design(const Vector& seed_series, const Vector& task, bool center_seed) {
  detail::require(seed_series.size() == task.size(), "task regressor length differs from the series length");
  const Eigen::Index len = seed_series.size();
  Matrix a(len, 4);
  const double shift = center_seed ? seed_series.mean() : 0.0;
  for (Eigen::Index t = 0; t < len; ++t) {
    const double s = seed_series(t) - shift;
    a(t, 0) = 1.0;
    a(t, 1) = s;
    a(t, 2) = task(t);
    a(t, 3) = s * task(t);
  }
  return a;
}

/// Least-squares coefficients for every column of `targets` (len x m).
inline Matrix ols(const Matrix& design, const Matrix& targets, std::size_t subject = 0) {
  detail::require_full_rank(design, subject);
  Eigen::HouseholderQR<Matrix> qr(design);
  return qr.solve(targets);
}

/// Seed-based psychophysiological interaction: per-subject OLS, group t on beta_3.
inline PpiResult ppi_test(const ConditionTensor& x, const ConditionTensor& y, std::size_t seed_region, double alpha,
                          const PpiOptions& options = {}, std::size_t threads = 1) {
  detail::require(x.subjects() == y.subjects(), "PPI needs paired conditions (equal subject counts)");
  detail::require(x.regions() == y.regions(), "conditions differ in region count");
  detail::require(seed_region < x.regions(), "seed region out of range");
  detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  const std::size_t n = x.subjects();
  const std::size_t regions = x.regions();
  const auto tx = static_cast<Eigen::Index>(x.samples());
  const auto ty = static_cast<Eigen::Index>(y.samples());
  const Eigen::Index len = tx + ty;

  Vector task(len);
  if (options.regressor) {
    detail::require(options.regressor->size() == len, "regressor length must equal T_X + T_Y = " +
                                                          std::to_string(len));
    task = *options.regressor;
  } else {
    task.head(tx).setOnes();
    task.tail(ty).setZero();
  }

  PpiResult out;
  out.seed = seed_region;
  out.betas = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(regions));
  parallel_for(n, threads, [&](std::size_t i) {
    Matrix series(len, static_cast<Eigen::Index>(regions));  // time x region
    series.topRows(tx) = subject_view(x, i).transpose();
    series.bottomRows(ty) = subject_view(y, i).transpose();
    const Matrix design = ppi_design(series.col(static_cast<Eigen::Index>(seed_region)), task, options.center_seed);
    const Matrix beta = ols(design, series, i);
    out.betas.row(static_cast<Eigen::Index>(i)) = beta.row(3);
  });
  out.betas.col(static_cast<Eigen::Index>(seed_region)).setZero();

  const auto r_count = static_cast<Eigen::Index>(regions);
  out.group_t = Vector::Zero(r_count);
  out.group_p_raw = Vector::Ones(r_count);
  out.group_p_bh = Vector::Ones(r_count);
  out.scores = Vector::Zero(r_count);
  out.rejected.assign(regions, false);

  std::vector<double> tested_p;
  std::vector<std::size_t> tested;
  for (std::size_t r = 0; r < regions; ++r) {
    if (r == seed_region) continue;
    const auto test = one_sample_t(out.betas.col(static_cast<Eigen::Index>(r)));
    out.group_t(static_cast<Eigen::Index>(r)) = test.t;
    out.group_p_raw(static_cast<Eigen::Index>(r)) = test.p;
    out.scores(static_cast<Eigen::Index>(r)) = std::abs(test.t);
    tested.push_back(r);
    tested_p.push_back(test.p);
  }
  const auto bh = bh_adjust(std::span<const double>(tested_p), alpha);
  for (std::size_t k = 0; k < tested.size(); ++k) {
    out.group_p_bh(static_cast<Eigen::Index>(tested[k])) = bh.p_adj(static_cast<Eigen::Index>(k));
    if (bh.rejected[k]) {
      out.rejected[tested[k]] = true;
      out.significant_regions.push_back(tested[k]);
    }
  }
  return out;
}

}  // namespace sparcd
