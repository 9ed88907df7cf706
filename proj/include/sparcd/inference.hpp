#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "common.hpp"
#include "core.hpp"
#include "dcorr.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "tensorio.hpp"

namespace sparcd {

/// Observed statistic, the B x R permutation null and the resulting p-values.
struct PermutationReport {
  SpectralDiffResult observed;
  Matrix null_stats;  // row b holds the scores of replicate b
  Vector p_raw;
  Vector p_bh;
  std::vector<bool> rejected;
  std::vector<std::size_t> k_per_perm;  // K used by each replicate
  std::uint64_t seed = 0;
  RunConfig config;
  PairingMode mode = PairingMode::paired_subjects;

  std::size_t regions() const { return static_cast<std::size_t>(observed.scores.size()); }
  std::size_t permutations() const { return static_cast<std::size_t>(null_stats.rows()); }
};

struct BhResult {
  Vector p_adj;
  std::vector<bool> rejected;
};

/// Benjamini-Hochberg step-up: reject the k smallest p-values, k being the
/// largest rank with p_(k) <= k alpha / m. Adjusted values are the running
/// minimum of m p_(j) / j from the top rank down, capped at 1.
inline BhResult bh_adjust(std::span<const double> p, double alpha) {
  const std::size_t m = p.size();
  BhResult out{Vector(static_cast<Eigen::Index>(m)), std::vector<bool>(m, false)};
  if (m == 0) return out;
  for (double v : p) detail::require(v >= 0.0 && v <= 1.0, "p-values must lie in [0, 1]");

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });

  std::size_t cutoff = 0;  // number of rejections
  for (std::size_t k = m; k >= 1; --k) {
    if (p[order[k - 1]] <= static_cast<double>(k) * alpha / static_cast<double>(m)) {
      cutoff = k;
      break;
    }
  }
  for (std::size_t k = 0; k < cutoff; ++k) out.rejected[order[k]] = true;

  double running = 1.0;
  for (std::size_t k = m; k >= 1; --k) {
    const double scaled = static_cast<double>(m) * p[order[k - 1]] / static_cast<double>(k);
    running = std::min(running, scaled);
    // m*p/m can round one ulp below p.
    out.p_adj(static_cast<Eigen::Index>(order[k - 1])) = std::clamp(running, p[order[k - 1]], 1.0);
  }
  return out;
}

inline BhResult bh_adjust(const Vector& p, double alpha) {
  return bh_adjust(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), alpha);
}

/// Indices into the pooled subject list [X; Y] that make up one relabelled pair.
struct SubjectAssignment {
  std::vector<std::size_t> x;
  std::vector<std::size_t> y;
};

inline SubjectAssignment identity_assignment(std::size_t nx, std::size_t ny) {
  SubjectAssignment a;
  a.x.resize(nx);
  a.y.resize(ny);
  std::iota(a.x.begin(), a.x.end(), std::size_t{0});
  std::iota(a.y.begin(), a.y.end(), nx);
  return a;
}

/// Paired: every subject swaps its X and Y records with probability 1/2.
/// Unpaired: a uniform size-nx subset of the pooled subjects becomes X, group
/// sizes stay fixed.
inline SubjectAssignment permute_subjects(std::size_t nx, std::size_t ny, PairingMode mode, Engine& rng) {
  detail::require(nx >= 1 && ny >= 1, "both conditions need at least one subject");
  SubjectAssignment a;
  if (mode == PairingMode::paired_subjects) {
    detail::require(nx == ny, "paired subjects need equal group sizes");
    a.x.resize(nx);
    a.y.resize(nx);
    for (std::size_t i = 0; i < nx; ++i) {
      const bool swap = coin_flip(rng);
      a.x[i] = swap ? nx + i : i;
      a.y[i] = swap ? i : nx + i;
    }
    return a;
  }
  detail::require(mode == PairingMode::unpaired_subjects, "subject permutation needs a subject pairing mode");
  std::vector<std::size_t> pool(nx + ny);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  shuffle(pool, rng);
  a.x.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(nx));
  a.y.assign(pool.begin() + static_cast<std::ptrdiff_t>(nx), pool.end());
  std::sort(a.x.begin(), a.x.end());
  std::sort(a.y.begin(), a.y.end());
  return a;
}

/// Tensor-level relabelling; the permutation engine uses the index form.
inline std::pair<ConditionTensor, ConditionTensor> permute_subjects(const ConditionTensor& x,
                                                                    const ConditionTensor& y,
                                                                    PairingMode mode, Engine& rng) {
  detail::require(x.regions() == y.regions() && x.samples() == y.samples(),
                  "conditions must share region count and series length");
  const auto a = permute_subjects(x.subjects(), y.subjects(), mode, rng);
  const std::size_t stride = x.regions() * x.samples();
  auto gather = [&](const std::vector<std::size_t>& idx) {
    std::vector<double> values;
    values.reserve(idx.size() * stride);
    for (std::size_t k : idx) {
      const auto src = k < x.subjects() ? x.values().subspan(k * stride, stride)
                                        : y.values().subspan((k - x.subjects()) * stride, stride);
      values.insert(values.end(), src.begin(), src.end());
    }
    return ConditionTensor(idx.size(), x.regions(), x.samples(), std::move(values));
  };
  return {gather(a.x), gather(a.y)};
}

/// Shuffles each subject's block labels over its block slots; label counts and
/// time intervals are preserved.
inline BlockDesign permute_blocks(const BlockDesign& design, Engine& rng) {
  BlockDesign out = design;
  for (auto& blocks : out.subjects) {
    std::vector<Label> labels;
    labels.reserve(blocks.size());
    for (const Block& b : blocks) labels.push_back(b.label);
    shuffle(labels, rng);
    for (std::size_t k = 0; k < blocks.size(); ++k) blocks[k].label = labels[k];
  }
  return out;
}

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

namespace detail {

template <typename ScoresFor>
PermutationReport run_permutations(SpectralDiffResult observed, const RunConfig& config, PairingMode mode,
                                   ScoresFor&& scores_for, const ProgressFn& progress) {
  const std::size_t regions = static_cast<std::size_t>(observed.scores.size());
  const std::size_t b_count = config.permutations;

  PermutationReport report;
  report.null_stats.resize(static_cast<Eigen::Index>(b_count), static_cast<Eigen::Index>(regions));
  report.k_per_perm.assign(b_count, 0);

  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  parallel_for(b_count, config.threads, [&](std::size_t b) {
    Engine rng = make_engine(config.seed, Stream::permutation, b);
    const SpectralDiffResult res = scores_for(rng);
    report.null_stats.row(static_cast<Eigen::Index>(b)) = res.scores.transpose();
    report.k_per_perm[b] = res.K_used;
    const std::size_t finished = ++done;
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(finished, b_count);
    }
  });

  report.p_raw.resize(static_cast<Eigen::Index>(regions));
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(regions); ++r) {
    std::size_t count = 0;
    for (Eigen::Index b = 0; b < report.null_stats.rows(); ++b) {
      if (report.null_stats(b, r) >= observed.scores(r)) ++count;
    }
    report.p_raw(r) = config.add_one ? static_cast<double>(1 + count) / static_cast<double>(1 + b_count)
                                     : static_cast<double>(count) / static_cast<double>(b_count);
  }
  auto bh = bh_adjust(report.p_raw, config.fdr_alpha);
  report.p_bh = std::move(bh.p_adj);
  report.rejected = std::move(bh.rejected);
  report.observed = std::move(observed);
  report.seed = config.seed;
  report.config = config;
  report.mode = mode;
  return report;
}

inline Matrix pooled_connectivity(const PooledDistances& pooled, std::span<const std::size_t> subjects,
                                  bool self_loops) {
  PackedCentered packed(subjects.size(), pooled.regions());
  for (std::size_t r = 0; r < pooled.regions(); ++r) {
    const auto c = pooled.centered(r, subjects);
    detail::require_energy(c, r, r);
    packed.store(r, c.values);
  }
  return connectivity_from_packed(packed, ConnectivityOptions{self_loops, 1});
}

}  // namespace detail

/// Subject-level permutation test (paired-subjects or unpaired-subjects).
inline PermutationReport permutation_test(const ConditionTensor& x, const ConditionTensor& y,
                                          const RunConfig& config, PairingMode mode,
                                          const ProgressFn& progress = {}) {
  detail::require(mode != PairingMode::paired_blocks,
                  "paired-blocks mode needs a raw tensor and a block design");
  detail::require(x.regions() == y.regions(), "conditions differ in region count");
  config.validate(x.regions());
  if (mode == PairingMode::paired_subjects) {
    detail::require(x.subjects() == y.subjects(), "paired subjects need equal subject counts");
  }

  const PooledDistances pooled(x, y, config.threads);
  const SpectralOptions spectral{config.leading, 1};
  auto scores_for_assignment = [&](const SubjectAssignment& a) {
    const Matrix wx = detail::pooled_connectivity(pooled, a.x, config.self_loops);
    const Matrix wy = detail::pooled_connectivity(pooled, a.y, config.self_loops);
    return SpectralPair(wx, wy).run(config.k_mode, spectral);
  };

  auto observed = scores_for_assignment(identity_assignment(x.subjects(), y.subjects()));
  return detail::run_permutations(
      std::move(observed), config, mode,
      [&](Engine& rng) {
        return scores_for_assignment(permute_subjects(x.subjects(), y.subjects(), mode, rng));
      },
      progress);
}

/// Block-level permutation test: labels are shuffled over each subject's blocks.
inline PermutationReport permutation_test_blocks(const ConditionTensor& raw, const BlockDesign& design,
                                                 const RunConfig& config, const ProgressFn& progress = {}) {
  validate_design(design, raw.subjects(), raw.samples());
  config.validate(raw.regions());
  const SpectralOptions spectral{config.leading, 1};
  const ConnectivityOptions conn{config.self_loops, 1};

  auto scores_for_design = [&](const BlockDesign& d) {
    const auto [a, b] = split_by_design(raw, d);
    return SpectralPair(connectivity_matrix(a, conn), connectivity_matrix(b, conn)).run(config.k_mode, spectral);
  };

  auto observed = scores_for_design(design);
  return detail::run_permutations(
      std::move(observed), config, PairingMode::paired_blocks,
      [&](Engine& rng) { return scores_for_design(permute_blocks(design, rng)); }, progress);
}

}  // namespace sparcd
