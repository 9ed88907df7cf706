#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "baselines.hpp"
#include "common.hpp"
#include "dcorr.hpp"
#include "inference.hpp"
#include "report.hpp"
#include "simgen.hpp"

namespace sparcd {

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 0.0;
  std::size_t true_positives = 0;
  std::size_t detections = 0;
  bool empty_detections = false;  // precision set to 1 by convention
};

inline PrecisionRecall precision_recall(const std::vector<bool>& detected, const std::vector<bool>& truth) {
  detail::require(detected.size() == truth.size(), "detection and truth masks differ in length");
  const auto positives = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), true));
  detail::require(positives > 0, "truth mask is empty");
  PrecisionRecall out;
  for (std::size_t r = 0; r < truth.size(); ++r) {
    if (!detected[r]) continue;
    ++out.detections;
    if (truth[r]) ++out.true_positives;
  }
  out.recall = static_cast<double>(out.true_positives) / static_cast<double>(positives);
  if (out.detections == 0) {
    out.empty_detections = true;
    out.precision = 1.0;
  } else {
    out.precision = static_cast<double>(out.true_positives) / static_cast<double>(out.detections);
  }
  return out;
}

inline PrecisionRecall precision_recall(const std::vector<bool>& detected, const GroundTruth& truth) {
  return precision_recall(detected, truth.mask);
}

/// Step-wise area under the precision-recall curve. Thresholds run over the
/// distinct scores in descending order (tied scores enter together); each
/// point contributes (recall gain) x (precision at that point).
inline double pr_auc(std::span<const double> scores, const std::vector<bool>& labels) {
  detail::require(scores.size() == labels.size(), "scores and labels differ in length");
  for (double s : scores) detail::require(std::isfinite(s), "PR-AUC needs finite scores");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  detail::require(positives > 0, "PR-AUC needs at least one positive label");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double area = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  std::size_t seen = 0;
  std::size_t k = 0;
  while (k < order.size()) {
    const double threshold = scores[order[k]];
    while (k < order.size() && scores[order[k]] == threshold) {
      tp += labels[order[k]] ? 1 : 0;
      ++seen;
      ++k;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

inline double pr_auc(const Vector& scores, const std::vector<bool>& labels) {
  return pr_auc(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), labels);
}

enum class Method { sparcd, uc, ppi };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::sparcd: return "sparcd";
    case Method::uc: return "uc";
    case Method::ppi: return "ppi";
  }
  return "?";
}

inline Method parse_method(std::string_view text) {
  if (text == "sparcd") return Method::sparcd;
  if (text == "uc") return Method::uc;
  if (text == "ppi") return Method::ppi;
  throw ValidationError("unknown method '" + std::string(text) + "' (expected sparcd, uc or ppi)");
}

struct BenchmarkRow {
  Regime regime = Regime::linear;
  std::string sweep_param;
  double sweep_value = 0.0;
  Method method = Method::sparcd;
  std::uint64_t seed = 0;
  double precision = 1.0;
  double recall = 0.0;
  double pr_auc = 0.0;
  bool empty_detections = false;
  std::vector<std::size_t> detected;  // region indices
  std::optional<std::size_t> k_used;  // sparcd only
  // UC only: edge-level metrics; a true edge joins two truth regions.
  std::optional<double> edge_precision;
  std::optional<double> edge_recall;
  double runtime_seconds = 0.0;  // written to the timing sidecar, not benchmark.csv
};

struct BenchmarkConfig {
  SimSpec base;
  std::string sweep_param = "gamma";  // gamma | sigma | alpha
  std::vector<double> grid;
  std::vector<std::uint64_t> seeds;
  std::vector<Method> methods{Method::sparcd, Method::uc, Method::ppi};
  RunConfig run;  // permutations, K mode, FDR alpha; run.seed is replaced per cell
  std::optional<std::size_t> ppi_seed_region;  // default: first region of the truth block
  std::size_t threads = 0;
};

using BenchmarkLog = std::function<void(const std::string&)>;

inline void apply_sweep(SimSpec& spec, const std::string& param, double value) {
  if (param == "gamma") {
    spec.gamma = value;
  } else if (param == "sigma") {
    spec.sigma = value;
  } else if (param == "alpha") {
    spec.alpha = value;
  } else {
    throw ValidationError("unknown sweep parameter '" + param + "' (expected gamma, sigma or alpha)");
  }
}

namespace detail {

inline std::vector<std::size_t> mask_indices(const std::vector<bool>& mask) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (mask[r]) out.push_back(r);
  }
  return out;
}

inline std::size_t first_truth_region(const GroundTruth& truth) {
  for (std::size_t r = 0; r < truth.mask.size(); ++r) {
    if (truth.mask[r]) return r;
  }
  return 0;
}

inline std::vector<BenchmarkRow> run_cell(const BenchmarkConfig& cfg, double value, std::uint64_t seed,
                                          std::size_t threads) {
  SimSpec spec = cfg.base;
  apply_sweep(spec, cfg.sweep_param, value);
  spec.seed = seed;
  const SimData data = generate(spec, threads);
  const auto& truth = data.truth;

  std::vector<BenchmarkRow> rows;
  for (Method method : cfg.methods) {
    BenchmarkRow row;
    row.regime = spec.regime;
    row.sweep_param = cfg.sweep_param;
    row.sweep_value = value;
    row.method = method;
    row.seed = seed;
    const auto start = std::chrono::steady_clock::now();

    std::vector<bool> detected;
    Vector scores;
    if (method == Method::sparcd) {
      RunConfig run = cfg.run;
      run.seed = seed;
      run.threads = threads;
      const auto report = permutation_test(data.x, data.y, run, PairingMode::paired_subjects);
      detected = report.rejected;
      scores = report.observed.scores;
      row.k_used = report.observed.K_used;
      row.pr_auc = pr_auc(scores, truth.mask);
    } else if (method == Method::uc) {
      const auto uc = uc_test(data.x, data.y, cfg.run.fdr_alpha, threads);
      detected = uc.region_detected();
      std::vector<bool> edge_truth(uc.edges.size());
      for (std::size_t k = 0; k < uc.edges.size(); ++k) {
        edge_truth[k] = truth.mask[uc.edges[k].r] && truth.mask[uc.edges[k].s];
      }
      // PR-AUC ranks region pairs by the vectorized upper triangle.
      row.pr_auc = pr_auc(uc.edge_scores, edge_truth);
      const auto edge_pr = precision_recall(uc.edge_rejected, edge_truth);
      row.edge_precision = edge_pr.precision;
      row.edge_recall = edge_pr.recall;
    } else {
      const std::size_t seed_region = cfg.ppi_seed_region.value_or(first_truth_region(truth));
      const auto ppi = ppi_test(data.x, data.y, seed_region, cfg.run.fdr_alpha, PpiOptions{}, threads);
      detected = ppi.region_detected();
      row.pr_auc = pr_auc(ppi.scores, truth.mask);
    }
    const auto pr = precision_recall(detected, truth);
    row.precision = pr.precision;
    row.recall = pr.recall;
    row.empty_detections = pr.empty_detections;
    row.detected = mask_indices(detected);
    row.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

/// Every (grid value, seed) cell: simulate, run the requested methods, score
/// against the truth mask. Rows come back in grid order, then seed, then method.
inline std::vector<BenchmarkRow> run_benchmark(const BenchmarkConfig& cfg, const BenchmarkLog& log = {}) {
  detail::require(!cfg.grid.empty(), "benchmark grid is empty");
  detail::require(!cfg.seeds.empty(), "benchmark needs at least one seed");
  detail::require(!cfg.methods.empty(), "benchmark needs at least one method");
  {
    SimSpec probe = cfg.base;
    for (double v : cfg.grid) {
      apply_sweep(probe, cfg.sweep_param, v);
      probe.validate();
    }
    detail::require(!probe.split_layouts.empty(), "benchmark needs a split block (non-empty truth)");
    cfg.run.validate(probe.regions());
  }

  const std::size_t cells = cfg.grid.size() * cfg.seeds.size();
  const std::size_t threads = resolve_threads(cfg.threads);
  const std::size_t outer = std::min(threads, cells);
  const std::size_t inner = std::max<std::size_t>(1, threads / outer);

  std::vector<std::vector<BenchmarkRow>> slots(cells);
  std::mutex log_mutex;
  parallel_for(cells, outer, [&](std::size_t c) {
    const double value = cfg.grid[c / cfg.seeds.size()];
    const std::uint64_t seed = cfg.seeds[c % cfg.seeds.size()];
    slots[c] = detail::run_cell(cfg, value, seed, inner);
    if (log) {
      std::lock_guard lock(log_mutex);
      log(cfg.sweep_param + "=" + format_double(value) + " seed=" + std::to_string(seed) + " done");
    }
  });

  std::vector<BenchmarkRow> rows;
  for (auto& s : slots) {
    for (auto& r : s) rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_benchmark_csv(const std::vector<BenchmarkRow>& rows, const fs::path& path) {
  auto out = detail::open_output(path);
  out << "regime,sweep_param,sweep_value,method,seed,precision,recall,pr_auc,empty_detections,n_detected,K,"
         "edge_precision,edge_recall,detected\n";
  for (const auto& r : rows) {
    out << to_string(r.regime) << ',' << r.sweep_param << ',' << format_double(r.sweep_value) << ','
        << to_string(r.method) << ',' << r.seed << ',' << format_double(r.precision) << ','
        << format_double(r.recall) << ',' << format_double(r.pr_auc) << ','
        << (r.empty_detections ? "true" : "false") << ',' << r.detected.size() << ',';
    if (r.k_used) out << *r.k_used;
    out << ',';
    if (r.edge_precision) out << format_double(*r.edge_precision);
    out << ',';
    if (r.edge_recall) out << format_double(*r.edge_recall);
    out << ',';
    for (std::size_t k = 0; k < r.detected.size(); ++k) out << (k ? ";" : "") << r.detected[k];
    out << '\n';
  }
  detail::finish(out, path);
}

inline void write_timing_csv(const std::vector<BenchmarkRow>& rows, const fs::path& path) {
  auto out = detail::open_output(path);
  out << "regime,sweep_param,sweep_value,method,seed,runtime_seconds\n";
  for (const auto& r : rows) {
    out << to_string(r.regime) << ',' << r.sweep_param << ',' << format_double(r.sweep_value) << ','
        << to_string(r.method) << ',' << r.seed << ',' << format_double(r.runtime_seconds) << '\n';
  }
  detail::finish(out, path);
}

}  // namespace sparcd
