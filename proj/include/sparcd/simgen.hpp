#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/QR>
#include <json.hpp>

#include "common.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "tensorio.hpp"

namespace sparcd {

enum class Regime { linear, nonlinear, hybrid };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::linear: return "linear";
    case Regime::nonlinear: return "nonlinear";
    case Regime::hybrid: return "hybrid";
  }
  return "?";
}

inline Regime parse_regime(std::string_view text) {
  if (text == "linear") return Regime::linear;
  if (text == "nonlinear") return Regime::nonlinear;
  if (text == "hybrid") return Regime::hybrid;
  throw ValidationError("unknown regime '" + std::string(text) + "' (expected linear, nonlinear or hybrid)");
}

using Layout = std::vector<std::size_t>;

inline std::size_t layout_sum(const Layout& layout) {
  std::size_t s = 0;
  for (auto v : layout) s += v;
  return s;
}

/// Parameters of one synthetic experiment; default_spec() fills in the
/// standard layouts for each regime.
struct SimSpec {
  Regime regime = Regime::linear;
  std::size_t n = 150;
  std::size_t T = 100;
  double gamma = 1.5;
  double sigma = 0.5;
  std::optional<double> alpha;  // hybrid only, required there
  std::vector<Layout> layouts_x;
  std::vector<Layout> split_layouts;  // empty: Y has X's block structure (null data)
  std::optional<std::size_t> split_block;
  std::size_t q = 8;
  std::size_t l = 18;
  double f_lo = 0.5;
  double f_hi = 2.0;
  double phase_lo = 0.0;
  double phase_hi = 2.0 * std::numbers::pi;
  std::uint64_t seed = 0;

  std::size_t regions() const {
    if (regime == Regime::linear) return layouts_x.empty() ? 0 : layout_sum(layouts_x.front());
    return q * l;
  }

  std::size_t split_index() const {
    if (split_block) return *split_block;
    return regime == Regime::linear ? 0 : q - 1;
  }

  void validate() const {
    detail::require(n >= 2 && T >= 2, "simulation needs n >= 2 and T >= 2");
    detail::require(gamma >= 0.0, "gamma must be >= 0");
    detail::require(sigma >= 0.0, "sigma must be >= 0");
    if (regime == Regime::hybrid) {
      detail::require(alpha.has_value(), "hybrid regime requires --alpha");
      detail::require(*alpha >= 0.0 && *alpha <= 1.0, "alpha must lie in [0, 1]");
    }
    if (regime == Regime::linear) {
      detail::require(!layouts_x.empty(), "linear regime needs at least one block layout");
      const std::size_t r = layout_sum(layouts_x.front());
      for (const auto& layout : layouts_x) {
        detail::require(layout_sum(layout) == r, "every block layout must sum to the same R");
        for (auto s : layout) detail::require(s >= 1, "block sizes must be >= 1");
        detail::require(split_index() < layout.size(), "split block index beyond layout");
        for (const auto& split : split_layouts) {
          detail::require(layout_sum(split) == layout[split_index()],
                          "split layout must sum to the size of the split block");
        }
      }
      detail::require(r >= 2, "R must be >= 2");
    } else {
      detail::require(q >= 1 && l >= 2, "nonlinear regime needs q >= 1 and l >= 2");
      detail::require(split_index() < q, "split block index beyond q");
      for (const auto& split : split_layouts) {
        detail::require(layout_sum(split) == l, "split layout must sum to l (q*l = R)");
      }
      detail::require(f_lo <= f_hi && phase_lo <= phase_hi, "invalid frequency or phase range");
    }
    for (const auto& split : split_layouts) {
      detail::require(split.size() >= 2, "a split layout needs at least two parts");
      for (auto s : split) detail::require(s >= 1, "split parts must be >= 1");
    }
  }
};

inline SimSpec default_spec(Regime regime) {
  SimSpec s;
  s.regime = regime;
  if (regime == Regime::linear) {
    s.gamma = 1.9;
    s.layouts_x = {{20, 20, 30, 20}, {20, 21, 29, 20}, {20, 19, 31, 20}};
    s.split_layouts = {{10, 10}, {9, 11}, {11, 9}};
  } else {
    s.split_layouts = {{9, 9}};
  }
  return s;
}

struct GroundTruth {
  std::vector<bool> mask;

  std::size_t count() const {
    std::size_t c = 0;
    for (bool b : mask) c += b ? 1 : 0;
    return c;
  }
};

struct SimData {
  ConditionTensor x;
  ConditionTensor y;
  GroundTruth truth;
};

/// U diag((1/k)^gamma) U' with U Haar-distributed (QR of a Gaussian matrix,
/// columns sign-corrected by the diagonal of R).
inline Matrix haar_orthogonal(std::size_t size, Engine& rng) {
  const auto m = static_cast<Eigen::Index>(size);
  Matrix g(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) g(i, j) = standard_normal(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < m; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

inline Vector spectral_decay(std::size_t size, double gamma) {
  Vector d(static_cast<Eigen::Index>(size));
  for (Eigen::Index k = 0; k < d.size(); ++k) d(k) = std::pow(1.0 / static_cast<double>(k + 1), gamma);
  return d;
}

// Square-root factor F = U diag(sqrt(delta)), so that F F' is the block covariance.
inline Matrix block_factor(std::size_t size, double gamma, Engine& rng) {
  const Matrix u = haar_orthogonal(size, rng);
  return u * spectral_decay(size, gamma).cwiseSqrt().asDiagonal();
}

inline Matrix block_covariance(std::size_t size, double gamma, Engine& rng) {
  detail::require(size >= 1, "block size must be >= 1");
  detail::require(gamma >= 0.0, "gamma must be >= 0");
  const Matrix u = haar_orthogonal(size, rng);
  Matrix sigma = u * spectral_decay(size, gamma).asDiagonal() * u.transpose();
  return (0.5 * (sigma + sigma.transpose())).eval();
}

namespace detail {

// Writes F z_t for t = 0..T-1 into rows [offset, offset + l) of one subject.
// Plain loops keep the summation order fixed on every platform.
inline void sample_block(const Matrix& factor, std::size_t offset, std::size_t samples, Engine& rng,
                         double* subject) {
  const auto l = static_cast<std::size_t>(factor.rows());
  std::vector<double> z(l * samples);
  for (auto& v : z) v = standard_normal(rng);
  for (std::size_t a = 0; a < l; ++a) {
    double* row = subject + (offset + a) * samples;
    for (std::size_t t = 0; t < samples; ++t) {
      double acc = 0.0;
      for (std::size_t b = 0; b < l; ++b) {
        acc += factor(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * z[b * samples + t];
      }
      row[t] = acc;
    }
  }
}

inline GroundTruth split_truth(std::size_t regions, const std::vector<Layout>& layouts, std::size_t block,
                               bool split) {
  GroundTruth truth{std::vector<bool>(regions, false)};
  if (!split) return truth;
  // Union of the split block's extent over all layouts.
  for (const auto& layout : layouts) {
    std::size_t offset = 0;
    for (std::size_t j = 0; j < block; ++j) offset += layout[j];
    for (std::size_t r = offset; r < offset + layout[block]; ++r) truth.mask[r] = true;
  }
  return truth;
}

}  // namespace detail

/// Block-diagonal Gaussian columns; Y splits one block per a randomly drawn split layout.
inline SimData gen_linear(const SimSpec& spec, std::size_t threads = 1) {
  spec.validate();
  detail::require(spec.regime != Regime::nonlinear, "gen_linear needs a linear spec");
  const std::size_t regions = spec.regions();
  const std::size_t n = spec.n;
  const std::size_t samples = spec.T;
  const std::size_t split_at = spec.split_index();

  // Covariance templates, one per (layout, block) and per (split layout, part).
  Engine params = make_engine(spec.seed, Stream::sim_parameters);
  std::vector<std::vector<Matrix>> block_factors;
  for (const auto& layout : spec.layouts_x) {
    auto& factors = block_factors.emplace_back();
    for (auto size : layout) factors.push_back(block_factor(size, spec.gamma, params));
  }
  std::vector<std::vector<Matrix>> split_factors;
  for (const auto& split : spec.split_layouts) {
    auto& factors = split_factors.emplace_back();
    for (auto size : split) factors.push_back(block_factor(size, spec.gamma, params));
  }

  const std::size_t stride = regions * samples;
  std::vector<double> xv(n * stride), yv(n * stride);
  parallel_for(n, threads, [&](std::size_t i) {
    {
      Engine rng = make_engine(spec.seed, Stream::sim_x, i);
      const std::size_t li = uniform_index(rng, spec.layouts_x.size());
      std::size_t offset = 0;
      for (std::size_t j = 0; j < spec.layouts_x[li].size(); ++j) {
        detail::sample_block(block_factors[li][j], offset, samples, rng, xv.data() + i * stride);
        offset += spec.layouts_x[li][j];
      }
    }
    {
      Engine rng = make_engine(spec.seed, Stream::sim_y, i);
      const std::size_t li = uniform_index(rng, spec.layouts_x.size());
      const bool split = !spec.split_layouts.empty();
      const std::size_t si = split ? uniform_index(rng, spec.split_layouts.size()) : 0;
      std::size_t offset = 0;
      for (std::size_t j = 0; j < spec.layouts_x[li].size(); ++j) {
        if (split && j == split_at) {
          std::size_t part_offset = offset;
          for (std::size_t p = 0; p < spec.split_layouts[si].size(); ++p) {
            detail::sample_block(split_factors[si][p], part_offset, samples, rng, yv.data() + i * stride);
            part_offset += spec.split_layouts[si][p];
          }
        } else {
          detail::sample_block(block_factors[li][j], offset, samples, rng, yv.data() + i * stride);
        }
        offset += spec.layouts_x[li][j];
      }
    }
  });
  return SimData{ConditionTensor(n, regions, samples, std::move(xv), "X"),
                 ConditionTensor(n, regions, samples, std::move(yv), "Y"),
                 detail::split_truth(regions, spec.layouts_x, split_at, !spec.split_layouts.empty())};
}

/// Seeds plus sine transforms; in Y the split block's later parts follow fresh seeds.
inline SimData gen_nonlinear(const SimSpec& spec, std::size_t threads = 1) {
  spec.validate();
  detail::require(spec.regime != Regime::linear, "gen_nonlinear needs a nonlinear spec");
  const std::size_t q = spec.q;
  const std::size_t l = spec.l;
  const std::size_t regions = q * l;
  const std::size_t n = spec.n;
  const std::size_t samples = spec.T;
  const std::size_t split_at = spec.split_index();

  // f_r and phi_r: drawn once per region, shared by both conditions.
  Engine params = make_engine(spec.seed, Stream::sim_parameters);
  std::vector<double> freq(regions), phase(regions);
  for (auto& f : freq) f = uniform_real(params, spec.f_lo, spec.f_hi);
  for (auto& p : phase) p = uniform_real(params, spec.phase_lo, spec.phase_hi);

  const std::size_t stride = regions * samples;
  auto fill_subject = [&](Engine& rng, const Layout* split, double* out) {
    const std::size_t extra = split ? split->size() - 1 : 0;
    std::vector<double> seeds((q + extra) * samples);
    for (auto& v : seeds) v = standard_normal(rng);

    // Seed index and "is the seed itself" for every region of the subject.
    std::vector<std::size_t> source(regions);
    std::vector<bool> is_seed(regions, false);
    for (std::size_t k = 0; k < q; ++k) {
      for (std::size_t a = 0; a < l; ++a) source[k * l + a] = k;
      is_seed[k * l] = true;
    }
    if (split) {
      std::size_t offset = split_at * l + (*split)[0];
      for (std::size_t p = 1; p < split->size(); ++p) {
        for (std::size_t a = 0; a < (*split)[p]; ++a) source[offset + a] = q + p - 1;
        is_seed[offset] = true;
        offset += (*split)[p];
      }
    }
    for (std::size_t r = 0; r < regions; ++r) {
      const double* s = seeds.data() + source[r] * samples;
      double* row = out + r * samples;
      if (is_seed[r]) {
        std::copy(s, s + samples, row);
        continue;
      }
      for (std::size_t t = 0; t < samples; ++t) {
        row[t] = std::sin(std::numbers::pi * freq[r] * s[t] + phase[r]);
        if (spec.sigma > 0.0) row[t] += spec.sigma * standard_normal(rng);
      }
    }
  };

  std::vector<double> xv(n * stride), yv(n * stride);
  parallel_for(n, threads, [&](std::size_t i) {
    Engine rx = make_engine(spec.seed, Stream::sim_x, i);
    fill_subject(rx, nullptr, xv.data() + i * stride);
    Engine ry = make_engine(spec.seed, Stream::sim_y, i);
    const Layout* split = nullptr;
    if (!spec.split_layouts.empty()) split = &spec.split_layouts[uniform_index(ry, spec.split_layouts.size())];
    fill_subject(ry, split, yv.data() + i * stride);
  });

  const std::vector<Layout> equal{Layout(q, l)};
  return SimData{ConditionTensor(n, regions, samples, std::move(xv), "X"),
                 ConditionTensor(n, regions, samples, std::move(yv), "Y"),
                 detail::split_truth(regions, equal, split_at, !spec.split_layouts.empty())};
}

/// Sub-specs of the hybrid regime. The linear part uses q equal blocks of size
/// l so both components have R = q l; both split the same block; noise enters
/// once, in the mixture, so the nonlinear part is noise-free.
inline SimSpec hybrid_linear_part(const SimSpec& spec) {
  SimSpec s = spec;
  s.regime = Regime::linear;
  s.layouts_x = {Layout(spec.q, spec.l)};
  s.split_block = spec.split_index();
  s.alpha.reset();
  s.seed = derive_seed(spec.seed, Stream::sim_hybrid_linear);
  return s;
}

inline SimSpec hybrid_nonlinear_part(const SimSpec& spec) {
  SimSpec s = spec;
  s.regime = Regime::nonlinear;
  s.sigma = 0.0;
  s.split_block = spec.split_index();
  s.alpha.reset();
  s.seed = derive_seed(spec.seed, Stream::sim_hybrid_nonlinear);
  return s;
}

inline SimData gen_hybrid(const SimSpec& spec, std::size_t threads = 1) {
  spec.validate();
  detail::require(spec.regime == Regime::hybrid, "gen_hybrid needs a hybrid spec");
  const double a = *spec.alpha;
  const SimData lin = gen_linear(hybrid_linear_part(spec), threads);
  const SimData nl = gen_nonlinear(hybrid_nonlinear_part(spec), threads);
  detail::require(lin.x.regions() == nl.x.regions(), "hybrid components differ in R");

  const std::size_t stride = lin.x.regions() * spec.T;
  auto mix = [&](const ConditionTensor& p, const ConditionTensor& q, Stream noise) {
    std::vector<double> out(p.values().size());
    parallel_for(spec.n, threads, [&](std::size_t i) {
      Engine rng = make_engine(spec.seed, noise, i);
      for (std::size_t k = i * stride; k < (i + 1) * stride; ++k) {
        out[k] = a * p.values()[k] + (1.0 - a) * q.values()[k];
        if (spec.sigma > 0.0) out[k] += spec.sigma * standard_normal(rng);
      }
    });
    return out;
  };
  return SimData{
      ConditionTensor(spec.n, lin.x.regions(), spec.T, mix(lin.x, nl.x, Stream::sim_hybrid_noise_x), "X"),
      ConditionTensor(spec.n, lin.x.regions(), spec.T, mix(lin.y, nl.y, Stream::sim_hybrid_noise_y), "Y"),
      lin.truth};
}

inline SimData generate(const SimSpec& spec, std::size_t threads = 1) {
  switch (spec.regime) {
    case Regime::linear: return gen_linear(spec, threads);
    case Regime::nonlinear: return gen_nonlinear(spec, threads);
    case Regime::hybrid: return gen_hybrid(spec, threads);
  }
  throw ValidationError("unknown regime");
}

inline nlohmann::ordered_json to_json(const SimSpec& s) {
  nlohmann::ordered_json j;
  j["regime"] = to_string(s.regime);
  j["n"] = s.n;
  j["T"] = s.T;
  j["gamma"] = s.gamma;
  j["sigma"] = s.sigma;
  if (s.alpha) j["alpha"] = *s.alpha;
  if (s.regime == Regime::linear) j["layouts_x"] = s.layouts_x;
  j["split_layouts"] = s.split_layouts;
  j["split_block"] = s.split_index();
  if (s.regime != Regime::linear) {
    j["q"] = s.q;
    j["l"] = s.l;
    j["f_range"] = {s.f_lo, s.f_hi};
    j["phase_range"] = {s.phase_lo, s.phase_hi};
  }
  j["seed"] = s.seed;
  j["R"] = s.regions();
  return j;
}

inline nlohmann::ordered_json to_json(const GroundTruth& t) {
  nlohmann::ordered_json j;
  std::vector<std::size_t> idx;
  for (std::size_t r = 0; r < t.mask.size(); ++r) {
    if (t.mask[r]) idx.push_back(r);
  }
  j["R"] = t.mask.size();
  j["regions"] = idx;
  return j;
}

inline GroundTruth truth_from_json(const nlohmann::json& j) {
  GroundTruth t{std::vector<bool>(j.at("R").get<std::size_t>(), false)};
  for (const auto& r : j.at("regions")) {
    const auto idx = r.get<std::size_t>();
    detail::require(idx < t.mask.size(), "truth region index out of range");
    t.mask[idx] = true;
  }
  return t;
}

}  // namespace sparcd
