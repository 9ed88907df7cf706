#pragma once

#include <exception>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "baselines.hpp"
#include "common.hpp"
#include "core.hpp"
#include "dcorr.hpp"
#include "evalmetrics.hpp"
#include "inference.hpp"
#include "report.hpp"
#include "simgen.hpp"
#include "tensorio.hpp"

namespace sparcd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitValidation = 2;

namespace detail {

using sparcd::detail::require;

// Inputs are either a pair of tensors or a raw tensor plus a block design.
struct PairInput {
  std::string x, y, raw, design, format = "auto";

  void add(CLI::App& app) {
    app.add_option("--x", x, "condition X tensor (.bin file or CSV directory)");
    app.add_option("--y", y, "condition Y tensor");
    app.add_option("--raw", raw, "raw tensor to be split by --design");
    app.add_option("--design", design, "block design JSON");
    app.add_option("--format", format, "tensor format: auto, binary or csv")
        ->check(CLI::IsMember({"auto", "binary", "csv"}));
  }

  bool blocks() const { return !raw.empty(); }

  void check() const {
    if (blocks()) {
      require(!design.empty(), "--raw needs --design");
      require(x.empty() && y.empty(), "use either --x/--y or --raw/--design, not both");
    } else {
      require(!x.empty() && !y.empty(), "--x and --y are required (or --raw with --design)");
      require(design.empty(), "--design needs --raw");
    }
  }

  ConditionTensor load(const std::string& path) const {
    if (format == "binary") return load_tensor(path, TensorFormat::binary);
    if (format == "csv") return load_tensor(path, TensorFormat::csv_dir);
    return load_tensor(path);
  }

  std::pair<ConditionTensor, ConditionTensor> conditions() const {
    check();
    if (blocks()) return split_by_design(load(raw), load_design(design));
    return {load(x), load(y)};
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    if (blocks()) {
      j["raw"] = raw;
      j["design"] = design;
    } else {
      j["x"] = x;
      j["y"] = y;
    }
    j["format"] = format;
    return j;
  }
};

// "auto" expands to the default range once R is known.
inline KMode resolve_k(const std::string& text, std::size_t regions) {
  if (text == "auto") return default_k_range(regions);
  return parse_k_mode(text);
}

inline std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (auto field : split_fields(text)) out.push_back(parse_double(field, what));
  require(!out.empty(), what + " is empty");
  return out;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (auto field : split_fields(text)) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    require(ec == std::errc{} && ptr == field.data() + field.size() && !field.empty(),
            "bad seed '" + std::string(field) + "'");
    out.push_back(v);
  }
  require(!out.empty(), "--seeds is empty");
  return out;
}

inline Vector load_regressor(const std::string& path) {
  std::istringstream lines(sparcd::detail::read_text(path));
  std::vector<double> values;
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    values.push_back(parse_double(split_fields(line).back(), path));
  }
  Vector v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v(static_cast<Eigen::Index>(i)) = values[i];
  return v;
}

struct Progress {
  std::ostream* err;
  bool quiet;

  ProgressFn fn() const {
    if (quiet) return {};
    return [this](std::size_t done, std::size_t total) {
      const std::size_t step = std::max<std::size_t>(1, total / 10);
      if (done % step == 0 || done == total) *err << "permutations: " << done << "/" << total << '\n';
    };
  }
};

inline void warn_flags(const SpectralDiffResult& res, std::ostream& err) {
  if (res.degenerate) err << "warning: differential operator is numerically zero; scores are uniform\n";
  if (res.eigengap_tie) err << "warning: eigenvalue tie at the truncation point K=" << res.K_used << '\n';
  if (res.leading_tie) err << "warning: leading eigenvalue of L_d is nearly tied\n";
}

}  // namespace detail

/// Runs one CLI invocation. Output streams are parameters so the tool can be
/// driven in-process by tests.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Spectral analysis of regional connectivity differences"};
  app.name("sparcd");
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t threads = 0;
  app.add_option("--threads", threads, "worker thread hint (0 = all cores); results do not depend on it")
      ->envname("SPARCD_THREADS");

  std::string out_dir;
  bool quiet = false;
  auto add_out = [&](CLI::App* sub, bool required = true) {
    auto* o = sub->add_option("--out", out_dir, "output directory")->envname("SPARCD_OUT");
    if (required) o->required();
  };

  // analyze
  auto* analyze = app.add_subcommand("analyze", "observed scores, permutation null, p-values");
  detail::PairInput a_in;
  a_in.add(*analyze);
  std::string a_mode = "paired-subjects";
  std::size_t a_b = 1000;
  double a_alpha = 0.05;
  std::string a_k = "auto";
  std::uint64_t a_seed = 0;
  bool a_add_one = false, a_no_self = false;
  std::string a_leading = "magnitude", a_labels;
  analyze->add_option("--mode", a_mode, "paired-blocks | paired-subjects | unpaired-subjects");
  analyze->add_option("--b", a_b, "number of permutations B");
  analyze->add_option("--alpha", a_alpha, "FDR level for Benjamini-Hochberg");
  analyze->add_option("--k", a_k, "fixed:N, auto:lo..hi or auto (= auto:2..min(80,R-1))");
  analyze->add_option("--seed", a_seed, "master seed");
  analyze->add_flag("--add-one", a_add_one, "p = (1 + count) / (1 + B)");
  analyze->add_flag("--no-self-loops", a_no_self, "zero the diagonal of W");
  analyze->add_option("--leading", a_leading, "eigenvalue of L_d to follow: magnitude or signed")
      ->check(CLI::IsMember({"magnitude", "signed"}));
  analyze->add_option("--labels", a_labels, "region labels CSV (index,name)");
  analyze->add_flag("--quiet", quiet, "no progress output");
  add_out(analyze);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic X/Y pair with ground truth");
  std::string s_regime;
  std::optional<double> s_gamma, s_sigma, s_alpha;
  std::optional<std::size_t> s_n, s_t, s_q, s_l;
  std::optional<std::uint64_t> s_seed;
  bool s_no_split = false;
  simulate->add_option("--regime", s_regime, "linear | nonlinear | hybrid")->required();
  simulate->add_option("--gamma", s_gamma, "spectral decay exponent");
  simulate->add_option("--sigma", s_sigma, "noise standard deviation");
  simulate->add_option("--alpha", s_alpha, "hybrid mixing weight (required for hybrid)");
  simulate->add_option("--n", s_n, "subjects");
  simulate->add_option("--T", s_t, "samples per series");
  simulate->add_option("--q", s_q, "nonlinear/hybrid block count");
  simulate->add_option("--l", s_l, "nonlinear/hybrid block size");
  simulate->add_option("--seed", s_seed, "master seed (required)")->required();
  simulate->add_flag("--no-split", s_no_split, "Y keeps X's block structure (null data)");
  add_out(simulate);

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "sweep a simulation parameter and score each method");
  std::string b_regime, b_param, b_grid, b_seeds, b_methods = "sparcd,uc,ppi", b_k = "auto";
  std::size_t b_b = 300;
  double b_fdr = 0.05;
  std::optional<std::size_t> b_ppi_seed;
  bench->add_option("--regime", b_regime, "linear | nonlinear | hybrid")->required();
  bench->add_option("--param", b_param, "swept parameter: gamma, sigma or alpha (default by regime)");
  bench->add_option("--grid", b_grid, "comma-separated sweep values")->required();
  bench->add_option("--seeds", b_seeds, "comma-separated seeds (required)")->required();
  bench->add_option("--methods", b_methods, "comma-separated subset of sparcd,uc,ppi");
  bench->add_option("--b", b_b, "permutations for sparcd");
  bench->add_option("--fdr", b_fdr, "FDR level");
  bench->add_option("--k", b_k, "K mode for sparcd");
  bench->add_option("--gamma", s_gamma, "fixed gamma when not swept");
  bench->add_option("--sigma", s_sigma, "fixed sigma when not swept");
  bench->add_option("--alpha", s_alpha, "fixed hybrid alpha when not swept");
  bench->add_option("--n", s_n, "subjects");
  bench->add_option("--T", s_t, "samples per series");
  bench->add_option("--ppi-seed-region", b_ppi_seed, "PPI seed (default: first truth region)");
  bench->add_flag("--quiet", quiet, "no progress output");
  add_out(bench);

  // select-k
  auto* selk = app.add_subcommand("select-k", "eta curve and K* without permutations");
  detail::PairInput k_in;
  k_in.add(*selk);
  std::string k_range = "auto";
  selk->add_option("--range", k_range, "auto or auto:lo..hi");
  add_out(selk, false);

  // baseline
  auto* base = app.add_subcommand("baseline", "univariate correlation (uc) or PPI baseline");
  std::string bl_method;
  detail::PairInput bl_in;
  double bl_alpha = 0.05;
  std::optional<std::size_t> bl_seed;
  std::string bl_regressor;
  bool bl_no_center = false;
  base->add_option("method", bl_method, "uc or ppi")->required()->check(CLI::IsMember({"uc", "ppi"}));
  bl_in.add(*base);
  base->add_option("--alpha", bl_alpha, "FDR level");
  base->add_option("--seed-region", bl_seed, "PPI seed region index");
  base->add_option("--regressor-file", bl_regressor, "PPI task regressor over the concatenated X,Y time axis");
  base->add_flag("--no-center", bl_no_center, "do not mean-center the PPI seed series");
  add_out(base);

  // dump-connectivity
  auto* dump = app.add_subcommand("dump-connectivity", "write the dCor weight matrix of one tensor");
  std::string d_tensor, d_format = "auto";
  bool d_no_self = false;
  dump->add_option("--tensor", d_tensor, "input tensor")->required();
  dump->add_option("--format", d_format, "auto, binary or csv")->check(CLI::IsMember({"auto", "binary", "csv"}));
  dump->add_flag("--no-self-loops", d_no_self, "zero the diagonal of W");
  add_out(dump);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  const detail::Progress progress{&err, quiet};
  try {
    if (analyze->parsed()) {
      if (a_b < 1) throw ValidationError("B must be ≥ 1");
      const PairingMode mode = parse_pairing_mode(a_mode);
      detail::require(a_in.blocks() == (mode == PairingMode::paired_blocks),
                      "paired-blocks mode goes with --raw/--design, subject modes with --x/--y");
      RunConfig cfg;
      cfg.permutations = a_b;
      cfg.fdr_alpha = a_alpha;
      cfg.seed = a_seed;
      cfg.threads = threads;
      cfg.add_one = a_add_one;
      cfg.self_loops = !a_no_self;
      cfg.leading = a_leading == "signed" ? LeadingMode::largest_signed : LeadingMode::largest_magnitude;

      PermutationReport report;
      std::size_t regions = 0;
      if (a_in.blocks()) {
        const auto raw = a_in.load(a_in.raw);
        regions = raw.regions();
        cfg.k_mode = detail::resolve_k(a_k, regions);
        report = permutation_test_blocks(raw, load_design(a_in.design), cfg, progress.fn());
      } else {
        const auto x = a_in.load(a_in.x);
        const auto y = a_in.load(a_in.y);
        regions = x.regions();
        cfg.k_mode = detail::resolve_k(a_k, regions);
        report = permutation_test(x, y, cfg, mode, progress.fn());
      }
      std::vector<std::string> labels;
      if (!a_labels.empty()) labels = load_region_labels(a_labels, regions);
      nlohmann::ordered_json extra;
      extra["command"] = "analyze";
      extra["inputs"] = a_in.to_json();
      if (!a_labels.empty()) extra["labels"] = a_labels;
      write_report(report, out_dir, extra, labels);
      detail::warn_flags(report.observed, err);
      std::size_t rejections = 0;
      for (bool b : report.rejected) rejections += b ? 1 : 0;
      out << "K=" << report.observed.K_used << " rejected=" << rejections << "/" << regions << '\n';
      return kExitOk;
    }

    if (simulate->parsed()) {
      SimSpec spec = default_spec(parse_regime(s_regime));
      if (s_gamma) spec.gamma = *s_gamma;
      if (s_sigma) spec.sigma = *s_sigma;
      if (s_alpha) spec.alpha = *s_alpha;
      if (s_n) spec.n = *s_n;
      if (s_t) spec.T = *s_t;
      if (s_q) spec.q = *s_q;
      if (s_l) spec.l = *s_l;
      if (s_no_split) spec.split_layouts.clear();
      spec.seed = *s_seed;
      spec.validate();
      const SimData data = generate(spec, threads);
      std::error_code ec;
      fs::create_directories(out_dir, ec);
      if (ec) throw Error("cannot create " + out_dir + ": " + ec.message());
      write_tensor_binary(data.x, fs::path(out_dir) / "X.bin");
      write_tensor_binary(data.y, fs::path(out_dir) / "Y.bin");
      write_json(to_json(data.truth), fs::path(out_dir) / "truth.json");
      write_json(to_json(spec), fs::path(out_dir) / "spec.json");
      out << "R=" << spec.regions() << " truth=" << data.truth.count() << '\n';
      return kExitOk;
    }

    if (bench->parsed()) {
      const Regime regime = parse_regime(b_regime);
      BenchmarkConfig cfg;
      cfg.base = default_spec(regime);
      if (b_param.empty()) {
        b_param = regime == Regime::linear ? "gamma" : regime == Regime::nonlinear ? "sigma" : "alpha";
      }
      cfg.sweep_param = b_param;
      if (s_gamma) cfg.base.gamma = *s_gamma;
      if (s_sigma) cfg.base.sigma = *s_sigma;
      if (s_alpha) cfg.base.alpha = *s_alpha;
      if (s_n) cfg.base.n = *s_n;
      if (s_t) cfg.base.T = *s_t;
      cfg.grid = detail::parse_double_list(b_grid, "--grid");
      cfg.seeds = detail::parse_seed_list(b_seeds);
      cfg.methods.clear();
      for (auto m : split_fields(b_methods)) cfg.methods.push_back(parse_method(m));
      if (b_b < 1) throw ValidationError("B must be ≥ 1");
      cfg.run.permutations = b_b;
      cfg.run.fdr_alpha = b_fdr;
      cfg.run.k_mode = detail::resolve_k(b_k, cfg.base.regions());
      cfg.ppi_seed_region = b_ppi_seed;
      cfg.threads = threads;
      BenchmarkLog log;
      if (!quiet) log = [&err](const std::string& msg) { err << msg << '\n'; };
      const auto rows = run_benchmark(cfg, log);

      std::error_code ec;
      fs::create_directories(out_dir, ec);
      if (ec) throw Error("cannot create " + out_dir + ": " + ec.message());
      write_benchmark_csv(rows, fs::path(out_dir) / "benchmark.csv");
      write_timing_csv(rows, fs::path(out_dir) / "timing.csv");
      nlohmann::ordered_json meta;
      meta["command"] = "benchmark";
      meta["base_spec"] = to_json(cfg.base);
      meta["sweep_param"] = cfg.sweep_param;
      meta["grid"] = cfg.grid;
      meta["seeds"] = cfg.seeds;
      std::vector<std::string> methods;
      for (auto m : cfg.methods) methods.push_back(to_string(m));
      meta["methods"] = methods;
      meta["run"] = to_json(cfg.run);
      if (cfg.ppi_seed_region) meta["ppi_seed_region"] = *cfg.ppi_seed_region;
      write_json(meta, fs::path(out_dir) / "meta.json");
      out << rows.size() << " rows\n";
      return kExitOk;
    }

    if (selk->parsed()) {
      const auto [x, y] = k_in.conditions();
      const auto mode = detail::resolve_k(k_range, x.regions());
      detail::require(std::holds_alternative<AutoK>(mode), "--range must be auto or auto:lo..hi");
      const auto range = std::get<AutoK>(mode);
      const ConnectivityOptions conn{true, threads};
      const auto sel = select_k(connectivity_matrix(x, conn), connectivity_matrix(y, conn), range.lo, range.hi,
                                SpectralOptions{LeadingMode::largest_magnitude, resolve_threads(threads)});
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        const auto path = fs::path(out_dir) / "eta_curve.csv";
        auto f = sparcd::detail::open_output(path);
        f << "K,eta\n";
        for (std::size_t i = 0; i < sel.eta_curve.size(); ++i) {
          f << sel.lo + i << ',' << format_double(sel.eta_curve[i]) << '\n';
        }
        sparcd::detail::finish(f, path);
        nlohmann::ordered_json meta;
        meta["command"] = "select-k";
        meta["inputs"] = k_in.to_json();
        meta["range"] = to_string(KMode{range});
        meta["K"] = sel.K;
        write_json(meta, fs::path(out_dir) / "meta.json");
      }
      out << "K*=" << sel.K << '\n';
      return kExitOk;
    }

    if (base->parsed()) {
      const auto [x, y] = bl_in.conditions();
      fs::create_directories(out_dir);
      nlohmann::ordered_json meta;
      meta["command"] = "baseline";
      meta["method"] = bl_method;
      meta["inputs"] = bl_in.to_json();
      meta["alpha"] = bl_alpha;
      if (bl_method == "uc") {
        const auto res = uc_test(x, y, bl_alpha, threads);
        const auto path = fs::path(out_dir) / "uc_edges.csv";
        auto f = sparcd::detail::open_output(path);
        f << "r,s,mean_z_diff,t,p_raw,p_bh,rejected\n";
        for (std::size_t k = 0; k < res.edges.size(); ++k) {
          const auto i = static_cast<Eigen::Index>(k);
          const auto& e = res.edges[k];
          f << e.r << ',' << e.s << ','
            << format_double(res.mean_corr_diff(static_cast<Eigen::Index>(e.r), static_cast<Eigen::Index>(e.s)))
            << ',' << format_double(res.edge_t(i)) << ',' << format_double(res.edge_p_raw(i)) << ','
            << format_double(res.edge_p_bh(i)) << ',' << (res.edge_rejected[k] ? "true" : "false") << '\n';
        }
        sparcd::detail::finish(f, path);
        meta["significant_edges"] = res.significant_edges.size();
        meta["undefined_edges"] = res.undefined_count;
        if (res.undefined_count) err << "warning: " << res.undefined_count << " edges had all-zero differences (p=1)\n";
        out << res.significant_edges.size() << " significant edges\n";
      } else {
        detail::require(bl_seed.has_value(), "ppi needs --seed-region");
        PpiOptions opts;
        opts.center_seed = !bl_no_center;
        if (!bl_regressor.empty()) opts.regressor = detail::load_regressor(bl_regressor);
        const auto res = ppi_test(x, y, *bl_seed, bl_alpha, opts, threads);
        const auto path = fs::path(out_dir) / "ppi_regions.csv";
        auto f = sparcd::detail::open_output(path);
        f << "region,t,p_raw,p_bh,rejected\n";
        for (std::size_t r = 0; r < x.regions(); ++r) {
          const auto i = static_cast<Eigen::Index>(r);
          f << r << ',' << format_double(res.group_t(i)) << ',' << format_double(res.group_p_raw(i)) << ','
            << format_double(res.group_p_bh(i)) << ',' << (res.rejected[r] ? "true" : "false") << '\n';
        }
        sparcd::detail::finish(f, path);
        write_matrix_csv(res.betas, fs::path(out_dir) / "ppi_betas.csv");
        meta["seed_region"] = *bl_seed;
        meta["center_seed"] = opts.center_seed;
        if (!bl_regressor.empty()) meta["regressor_file"] = bl_regressor;
        meta["significant_regions"] = res.significant_regions;
        out << res.significant_regions.size() << " significant regions\n";
      }
      write_json(meta, fs::path(out_dir) / "meta.json");
      return kExitOk;
    }

    if (dump->parsed()) {
      detail::PairInput in;
      in.format = d_format;
      const auto tensor = in.load(d_tensor);
      const Matrix w = connectivity_matrix(tensor, ConnectivityOptions{!d_no_self, threads});
      fs::create_directories(out_dir);
      write_matrix_csv(w, fs::path(out_dir) / "connectivity.csv");
      out << "R=" << w.rows() << '\n';
      return kExitOk;
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args), out, err);
}

}  // namespace sparcd::cli
