#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "inference.hpp"
#include "tensorio.hpp"

namespace sparcd {

namespace detail {

inline std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

inline void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw Error("I/O failure while writing " + path.string());
}

}  // namespace detail

inline void write_matrix_csv(const Matrix& m, const fs::path& path) {
  auto out = detail::open_output(path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
  detail::finish(out, path);
}

inline void write_json(const nlohmann::ordered_json& j, const fs::path& path) {
  auto out = detail::open_output(path);
  out << j.dump(2) << '\n';
  detail::finish(out, path);
}

/// Summary of the K chosen by each replicate: range plus a histogram.
inline nlohmann::ordered_json k_summary(const std::vector<std::size_t>& ks) {
  nlohmann::ordered_json j;
  if (ks.empty()) return j;
  std::map<std::size_t, std::size_t> counts;
  for (auto k : ks) ++counts[k];
  j["min"] = counts.begin()->first;
  j["max"] = counts.rbegin()->first;
  nlohmann::ordered_json hist = nlohmann::ordered_json::object();
  for (const auto& [k, c] : counts) hist[std::to_string(k)] = c;
  j["counts"] = hist;
  return j;
}

/// scores.csv, pvalues.csv, meta.json and ld_matrix.csv. `extra` is merged into
/// meta.json (inputs, pairing mode, etc.) so the directory describes its own run.
inline void write_report(const PermutationReport& report, const fs::path& out_dir,
                         const nlohmann::ordered_json& extra = nlohmann::ordered_json::object(),
                         const std::vector<std::string>& labels = {}) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir.string() + ": " + ec.message());

  const std::size_t regions = report.regions();
  const std::size_t b_count = report.permutations();
  const bool named = labels.size() == regions;

  {
    const auto path = out_dir / "scores.csv";
    auto out = detail::open_output(path);
    out << "region,s_observed,null_mean,null_sd" << (named ? ",name" : "") << '\n';
    for (std::size_t r = 0; r < regions; ++r) {
      const auto col = report.null_stats.col(static_cast<Eigen::Index>(r));
      const double mean = b_count ? col.mean() : 0.0;
      // Sample standard deviation over replicates (B - 1 denominator).
      const double sd = b_count > 1 ? std::sqrt((col.array() - mean).square().sum() / static_cast<double>(b_count - 1))
                                    : 0.0;
      out << r << ',' << format_double(report.observed.scores(static_cast<Eigen::Index>(r))) << ','
          << format_double(mean) << ',' << format_double(sd);
      if (named) out << ',' << labels[r];
      out << '\n';
    }
    detail::finish(out, path);
  }
  {
    const auto path = out_dir / "pvalues.csv";
    auto out = detail::open_output(path);
    out << "region,p_raw,p_bh,rejected\n";
    for (std::size_t r = 0; r < regions; ++r) {
      const auto i = static_cast<Eigen::Index>(r);
      out << r << ',' << format_double(report.p_raw(i)) << ',' << format_double(report.p_bh(i)) << ','
          << (report.rejected[r] ? "true" : "false") << '\n';
    }
    detail::finish(out, path);
  }
  write_matrix_csv(report.observed.ld, out_dir / "ld_matrix.csv");

  nlohmann::ordered_json meta;
  meta["config"] = to_json(report.config);
  meta["mode"] = to_string(report.mode);
  meta["seed"] = report.seed;
  meta["regions"] = regions;
  nlohmann::ordered_json obs;
  obs["K"] = report.observed.K_used;
  obs["lambda"] = report.observed.lambda;
  obs["eta"] = report.observed.eta;
  obs["degenerate"] = report.observed.degenerate;
  obs["eigengap_tie"] = report.observed.eigengap_tie;
  obs["leading_tie"] = report.observed.leading_tie;
  if (!report.observed.eta_curve.empty()) {
    obs["k_lo"] = report.observed.k_lo;
    obs["eta_curve"] = report.observed.eta_curve;
  }
  meta["observed"] = obs;
  std::size_t rejections = 0;
  for (bool b : report.rejected) rejections += b ? 1 : 0;
  meta["rejections"] = rejections;
  meta["k_per_permutation"] = k_summary(report.k_per_perm);
  for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  write_json(meta, out_dir / "meta.json");
}

}  // namespace sparcd
