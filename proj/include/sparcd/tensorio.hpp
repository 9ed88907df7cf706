#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace sparcd {

namespace fs = std::filesystem;

// n x T view of one region across subjects, rows are subjects.
using RegionView = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

/// Signals for one condition, stored subject-major, region-major, time-minor.
class ConditionTensor {
 public:
  ConditionTensor() = default;

  ConditionTensor(std::size_t subjects, std::size_t regions, std::size_t samples,
                  std::vector<double> values, std::string id = {})
      : subjects_(subjects), regions_(regions), samples_(samples),
        values_(std::move(values)), id_(std::move(id)) {
    validate();
  }

  std::size_t subjects() const noexcept { return subjects_; }
  std::size_t regions() const noexcept { return regions_; }
  std::size_t samples() const noexcept { return samples_; }
  const std::string& id() const noexcept { return id_; }
  std::span<const double> values() const noexcept { return values_; }

  double operator()(std::size_t subject, std::size_t region, std::size_t t) const {
    return values_[(subject * regions_ + region) * samples_ + t];
  }

  std::span<const double> series(std::size_t subject, std::size_t region) const {
    return {values_.data() + (subject * regions_ + region) * samples_, samples_};
  }

  RegionView region(std::size_t r) const {
    return RegionView(values_.data() + r * samples_, static_cast<Eigen::Index>(subjects_),
                      static_cast<Eigen::Index>(samples_),
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(regions_ * samples_)));
  }

  friend bool operator==(const ConditionTensor& a, const ConditionTensor& b) {
    return a.subjects_ == b.subjects_ && a.regions_ == b.regions_ && a.samples_ == b.samples_ &&
           a.values_ == b.values_;
  }

 private:
  void validate() const {
    detail::require(subjects_ >= 2, "tensor needs at least 2 subjects, got " + std::to_string(subjects_));
    detail::require(regions_ >= 2, "tensor needs at least 2 regions, got " + std::to_string(regions_));
    detail::require(samples_ >= 2, "tensor needs at least 2 time samples, got " + std::to_string(samples_));
    detail::require(values_.size() == subjects_ * regions_ * samples_,
                    "tensor value count " + std::to_string(values_.size()) + " does not match " +
                        std::to_string(subjects_) + "x" + std::to_string(regions_) + "x" +
                        std::to_string(samples_));
    for (std::size_t i = 0; i < subjects_; ++i) {
      for (std::size_t r = 0; r < regions_; ++r) {
        const auto s = series(i, r);
        for (double v : s) {
          if (!std::isfinite(v)) {
            throw ValidationError("non-finite value at subject " + std::to_string(i) + ", region " +
                                  std::to_string(r));
          }
        }
        if (std::all_of(s.begin(), s.end(), [&](double v) { return v == s.front(); })) {
          throw ValidationError("constant time series at subject " + std::to_string(i) +
                                ", region " + std::to_string(r));
        }
      }
    }
  }

  std::size_t subjects_ = 0;
  std::size_t regions_ = 0;
  std::size_t samples_ = 0;
  std::vector<double> values_;
  std::string id_;
};

enum class PairingMode { paired_blocks, paired_subjects, unpaired_subjects };

inline std::string to_string(PairingMode mode) {
  switch (mode) {
    case PairingMode::paired_blocks: return "paired-blocks";
    case PairingMode::paired_subjects: return "paired-subjects";
    case PairingMode::unpaired_subjects: return "unpaired-subjects";
  }
  return "?";
}

inline PairingMode parse_pairing_mode(std::string_view text) {
  if (text == "paired-blocks") return PairingMode::paired_blocks;
  if (text == "paired-subjects") return PairingMode::paired_subjects;
  if (text == "unpaired-subjects") return PairingMode::unpaired_subjects;
  throw ValidationError("unknown pairing mode '" + std::string(text) + "'");
}

enum class Label : std::uint8_t { A, B };

struct Block {
  Label label;
  std::size_t start;  // inclusive
  std::size_t end;    // exclusive

  std::size_t length() const noexcept { return end - start; }
  friend bool operator==(const Block&, const Block&) = default;
};

/// Per-subject list of stimulus blocks over the raw time axis.
struct BlockDesign {
  std::vector<std::vector<Block>> subjects;

  friend bool operator==(const BlockDesign&, const BlockDesign&) = default;
};

inline void validate_design(const BlockDesign& design, std::size_t subjects, std::size_t raw_samples) {
  detail::require(design.subjects.size() == subjects,
                  "design has " + std::to_string(design.subjects.size()) + " subjects, tensor has " +
                      std::to_string(subjects));
  for (std::size_t i = 0; i < design.subjects.size(); ++i) {
    const auto& blocks = design.subjects[i];
    const std::string who = "subject " + std::to_string(i);
    std::size_t count_a = 0;
    std::size_t count_b = 0;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const Block& b = blocks[k];
      detail::require(b.start < b.end, "empty or reversed block in " + who);
      detail::require(b.end <= raw_samples, "block beyond end of series in " + who);
      if (k > 0) {
        detail::require(blocks[k - 1].start < b.start, "unordered blocks in " + who);
        detail::require(blocks[k - 1].end <= b.start, "overlapping blocks in " + who);
      }
      (b.label == Label::A ? count_a : count_b) += 1;
    }
    detail::require(count_a > 0 && count_b > 0, who + " lacks a block of one condition label");
  }
}

/// Concatenates each subject's A blocks and B blocks, in temporal order, and
/// truncates every subject to the shortest per-condition total.
inline std::pair<ConditionTensor, ConditionTensor> split_by_design(const ConditionTensor& raw,
                                                                   const BlockDesign& design) {
  validate_design(design, raw.subjects(), raw.samples());
  const std::size_t n = raw.subjects();
  const std::size_t regions = raw.regions();

  std::array<std::size_t, 2> min_len{std::numeric_limits<std::size_t>::max(),
                                     std::numeric_limits<std::size_t>::max()};
  for (const auto& blocks : design.subjects) {
    std::array<std::size_t, 2> len{0, 0};
    for (const Block& b : blocks) len[static_cast<int>(b.label)] += b.length();
    min_len[0] = std::min(min_len[0], len[0]);
    min_len[1] = std::min(min_len[1], len[1]);
  }

  std::array<std::vector<double>, 2> out;
  for (int c = 0; c < 2; ++c) out[c].resize(n * regions * min_len[c]);

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < regions; ++r) {
      const auto src = raw.series(i, r);
      std::array<std::size_t, 2> filled{0, 0};
      for (const Block& b : design.subjects[i]) {
        const int c = static_cast<int>(b.label);
        const std::size_t take = std::min(b.length(), min_len[c] - filled[c]);
        double* dst = out[c].data() + (i * regions + r) * min_len[c] + filled[c];
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(b.start), take, dst);
        filled[c] += take;
      }
    }
  }
  return {ConditionTensor(n, regions, min_len[0], std::move(out[0]), raw.id() + ":A"),
          ConditionTensor(n, regions, min_len[1], std::move(out[1]), raw.id() + ":B")};
}

// ---------------------------------------------------------------------------
// Run configuration

struct FixedK {
  std::size_t k;
  friend bool operator==(const FixedK&, const FixedK&) = default;
};

struct AutoK {
  std::size_t lo = 2;
  std::size_t hi = 80;
  friend bool operator==(const AutoK&, const AutoK&) = default;
};

using KMode = std::variant<FixedK, AutoK>;

/// Parses "fixed:N" or "auto:lo..hi".
inline KMode parse_k_mode(std::string_view text) {
  auto to_size = [&](std::string_view s) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
      throw ValidationError("bad K specification '" + std::string(text) + "'");
    }
    return v;
  };
  if (text.starts_with("fixed:")) return FixedK{to_size(text.substr(6))};
  if (text.starts_with("auto:")) {
    const auto body = text.substr(5);
    const auto dots = body.find("..");
    if (dots == std::string_view::npos) throw ValidationError("bad K range '" + std::string(text) + "'");
    return AutoK{to_size(body.substr(0, dots)), to_size(body.substr(dots + 2))};
  }
  throw ValidationError("K must be fixed:N or auto:lo..hi, got '" + std::string(text) + "'");
}

inline std::string to_string(const KMode& mode) {
  if (const auto* f = std::get_if<FixedK>(&mode)) return "fixed:" + std::to_string(f->k);
  const auto& a = std::get<AutoK>(mode);
  return "auto:" + std::to_string(a.lo) + ".." + std::to_string(a.hi);
}

// Throws unless mode is usable for a graph with `regions` nodes.
inline void validate_k_mode(const KMode& mode, std::size_t regions) {
  if (const auto* f = std::get_if<FixedK>(&mode)) {
    detail::require(f->k >= 1 && f->k < regions,
                    "fixed K must satisfy 1 <= K < R (K=" + std::to_string(f->k) +
                        ", R=" + std::to_string(regions) + ")");
    return;
  }
  const auto& a = std::get<AutoK>(mode);
  const std::size_t cap = std::min<std::size_t>(80, regions - 1);
  detail::require(a.lo >= 2 && a.lo <= a.hi && a.hi <= cap,
                  "K range must satisfy 2 <= lo <= hi <= min(80, R-1) = " + std::to_string(cap) +
                      " (got " + std::to_string(a.lo) + ".." + std::to_string(a.hi) + ")");
}

// Default data-driven range for R regions: [2, min(80, R-1)].
inline AutoK default_k_range(std::size_t regions) {
  return AutoK{2, std::min<std::size_t>(80, regions - 1)};
}

enum class LeadingMode { largest_magnitude, largest_signed };

struct RunConfig {
  KMode k_mode = AutoK{};
  std::size_t permutations = 1000;
  double fdr_alpha = 0.05;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0 = hardware concurrency; never affects results
  bool add_one = false;     // p = (1 + count) / (1 + B)
  bool self_loops = true;
  LeadingMode leading = LeadingMode::largest_magnitude;

  void validate(std::size_t regions) const {
    detail::require(permutations >= 1, "B must be >= 1");
    detail::require(fdr_alpha > 0.0 && fdr_alpha < 1.0, "FDR alpha must lie in (0, 1)");
    validate_k_mode(k_mode, regions);
  }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["k"] = to_string(c.k_mode);
  j["permutations"] = c.permutations;
  j["fdr_alpha"] = c.fdr_alpha;
  j["seed"] = c.seed;
  j["add_one"] = c.add_one;
  j["self_loops"] = c.self_loops;
  j["leading"] = c.leading == LeadingMode::largest_magnitude ? "magnitude" : "signed";
  return j;
}

// ---------------------------------------------------------------------------
// Number formatting shared by every writer: shortest round-trip representation.

inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

inline double parse_double(std::string_view text, const std::string& where) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
    text.remove_suffix(1);
  }
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw ValidationError("cannot parse number '" + std::string(text) + "' in " + where);
  }
  return v;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep = ',') {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  for (;;) {
    const auto next = line.find(sep, pos);
    fields.push_back(line.substr(pos, next == std::string_view::npos ? next : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return fields;
}

// ---------------------------------------------------------------------------
// Tensor files

enum class TensorFormat { binary, csv_dir };

inline constexpr std::array<char, 4> kTensorMagic{'S', 'P', 'R', 'C'};
inline constexpr std::uint32_t kTensorVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

template <typename T>
void write_le(std::ostream& out, T v) {
  v = byteswap_if_big(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_le(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) return false;
  v = byteswap_if_big(v);
  return true;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline void write_tensor_binary(const ConditionTensor& tensor, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(kTensorMagic.data(), kTensorMagic.size());
  detail::write_le<std::uint32_t>(out, kTensorVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.subjects()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.regions()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.samples()));
  for (double v : tensor.values()) detail::write_le<double>(out, v);
  if (!out) throw Error("write failed for " + path.string());
}

inline ConditionTensor read_tensor_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 4 || magic != kTensorMagic) throw ValidationError("bad magic in " + path.string());
  std::uint32_t version = 0, n = 0, regions = 0, samples = 0;
  if (!detail::read_le(in, version) || !detail::read_le(in, n) || !detail::read_le(in, regions) ||
      !detail::read_le(in, samples)) {
    throw ValidationError("truncated header in " + path.string());
  }
  if (version != kTensorVersion) {
    throw ValidationError("unsupported tensor version " + std::to_string(version));
  }
  const std::size_t count = std::size_t{n} * regions * samples;
  std::vector<double> values(count);
  for (std::size_t k = 0; k < count; ++k) {
    if (!detail::read_le(in, values[k])) {
      throw ValidationError("truncated body in " + path.string() + ": expected " +
                            std::to_string(count) + " values, found " + std::to_string(k));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ValidationError("trailing bytes after body in " + path.string() +
                          " (dimension mismatch vs. header)");
  }
  return ConditionTensor(n, regions, samples, std::move(values), path.stem().string());
}

/// CSV layout: directory with manifest.json {n, R, T, files:[...]}; each file
/// holds R rows of T comma-separated values for one subject.
inline ConditionTensor read_tensor_csv_dir(const fs::path& dir) {
  const auto manifest = nlohmann::json::parse(detail::read_text(dir / "manifest.json"), nullptr, false);
  if (manifest.is_discarded()) throw ValidationError("malformed manifest.json in " + dir.string());
  std::size_t n = 0, regions = 0, samples = 0;
  std::vector<std::string> files;
  try {
    n = manifest.at("n").get<std::size_t>();
    regions = manifest.at("R").get<std::size_t>();
    samples = manifest.at("T").get<std::size_t>();
    files = manifest.at("files").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest.json: ") + e.what());
  }
  if (files.size() != n) {
    throw ValidationError("subject count mismatch: manifest n=" + std::to_string(n) + " but " +
                          std::to_string(files.size()) + " files listed");
  }
  std::vector<double> values;
  values.reserve(n * regions * samples);
  for (const auto& name : files) {
    const std::string text = detail::read_text(dir / name);
    std::istringstream lines(text);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
      if (line.empty() || line == "\r") continue;
      const auto fields = split_fields(line);
      if (fields.size() != samples) {
        throw ValidationError("dimension mismatch in " + name + " row " + std::to_string(rows) +
                              ": " + std::to_string(fields.size()) + " columns, expected T=" +
                              std::to_string(samples));
      }
      for (auto f : fields) values.push_back(parse_double(f, name));
      ++rows;
    }
    if (rows != regions) {
      throw ValidationError("dimension mismatch in " + name + ": " + std::to_string(rows) +
                            " rows, expected R=" + std::to_string(regions));
    }
  }
  return ConditionTensor(n, regions, samples, std::move(values), dir.filename().string());
}

inline void write_tensor_csv_dir(const ConditionTensor& tensor, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["n"] = tensor.subjects();
  manifest["R"] = tensor.regions();
  manifest["T"] = tensor.samples();
  manifest["files"] = nlohmann::json::array();
  for (std::size_t i = 0; i < tensor.subjects(); ++i) {
    const std::string name = "subject_" + std::to_string(i) + ".csv";
    manifest["files"].push_back(name);
    std::ofstream out(dir / name, std::ios::trunc);
    for (std::size_t r = 0; r < tensor.regions(); ++r) {
      const auto s = tensor.series(i, r);
      for (std::size_t t = 0; t < s.size(); ++t) out << (t ? "," : "") << format_double(s[t]);
      out << '\n';
    }
    if (!out) throw Error("write failed for " + (dir / name).string());
  }
  std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(2) << '\n';
}

inline ConditionTensor load_tensor(const fs::path& path, TensorFormat format) {
  return format == TensorFormat::binary ? read_tensor_binary(path) : read_tensor_csv_dir(path);
}

// Directories are CSV manifests, everything else is binary.
inline ConditionTensor load_tensor(const fs::path& path) {
  return load_tensor(path, fs::is_directory(path) ? TensorFormat::csv_dir : TensorFormat::binary);
}

// ---------------------------------------------------------------------------
// Block designs and region labels

inline BlockDesign design_from_json(const nlohmann::json& j) {
  BlockDesign design;
  if (!j.is_array()) throw ValidationError("design must be a JSON array of subjects");
  for (const auto& subject : j) {
    if (!subject.is_array()) throw ValidationError("each design entry must be an array of blocks");
    auto& blocks = design.subjects.emplace_back();
    for (const auto& b : subject) {
      try {
        const auto label = b.at("label").get<std::string>();
        if (label != "A" && label != "B") throw ValidationError("block label must be A or B");
        const auto start = b.at("start").get<long long>();
        const auto end = b.at("end").get<long long>();
        if (start < 0 || end < 0) throw ValidationError("negative block index");
        blocks.push_back({label == "A" ? Label::A : Label::B, static_cast<std::size_t>(start),
                          static_cast<std::size_t>(end)});
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("design block: ") + e.what());
      }
    }
  }
  return design;
}

inline nlohmann::ordered_json design_to_json(const BlockDesign& design) {
  auto j = nlohmann::ordered_json::array();
  for (const auto& blocks : design.subjects) {
    auto s = nlohmann::ordered_json::array();
    for (const Block& b : blocks) {
      nlohmann::ordered_json e;
      e["label"] = b.label == Label::A ? "A" : "B";
      e["start"] = b.start;
      e["end"] = b.end;
      s.push_back(e);
    }
    j.push_back(s);
  }
  return j;
}

inline BlockDesign load_design(const fs::path& path) {
  const auto j = nlohmann::json::parse(detail::read_text(path), nullptr, false);
  if (j.is_discarded()) throw ValidationError("malformed design JSON in " + path.string());
  return design_from_json(j);
}

inline void write_design(const BlockDesign& design, const fs::path& path) {
  std::ofstream(path, std::ios::trunc) << design_to_json(design).dump() << '\n';
}

/// Two-column CSV (index, name); a non-numeric first line is treated as a header.
inline std::vector<std::string> load_region_labels(const fs::path& path, std::size_t regions) {
  std::vector<std::string> labels(regions);
  std::istringstream lines(detail::read_text(path));
  std::string line;
  bool first = true;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ValidationError("label line without comma: " + line);
    const std::string_view idx_text = std::string_view(line).substr(0, comma);
    std::size_t idx = 0;
    const auto [ptr, ec] = std::from_chars(idx_text.data(), idx_text.data() + idx_text.size(), idx);
    if (ec != std::errc{}) {
      if (first) {
        first = false;
        continue;
      }
      throw ValidationError("bad region index in labels: " + line);
    }
    first = false;
    if (idx >= regions) throw ValidationError("label index " + std::to_string(idx) + " out of range");
    labels[idx] = line.substr(comma + 1);
  }
  return labels;
}

}  // namespace sparcd
