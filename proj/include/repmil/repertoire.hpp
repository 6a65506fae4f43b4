#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "repmil/csv.hpp"
#include "repmil/error.hpp"

namespace repmil {

inline constexpr std::string_view kAminoAcids = "ACDEFGHIKLMNPQRSTVWY";

constexpr bool is_amino_acid(char c) noexcept {
  return kAminoAcids.find(c) != std::string_view::npos;
}

inline bool is_valid_cdr3(std::string_view s) noexcept {
  return !s.empty() && std::all_of(s.begin(), s.end(), is_amino_acid);
}

struct SequenceRecord {
  std::string cdr3_aa;
  std::string v_gene;
  std::uint64_t count = 1;
  // 0 until derive_frequencies() has run.
  double frequency = 0.0;

  bool operator==(const SequenceRecord&) const = default;
};

struct Repertoire {
  std::string sample_id;
  std::vector<SequenceRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
  bool has_frequencies() const noexcept {
    return !records.empty() &&
           std::all_of(records.begin(), records.end(), [](const auto& r) { return r.frequency > 0.0; });
  }
  bool operator==(const Repertoire&) const = default;
};

enum class Sex { male, female };

inline std::string to_string(Sex s) { return s == Sex::male ? "male" : "female"; }

struct SampleMeta {
  std::string sample_id;
  std::string path;
  int label = 0;
  std::optional<int> sledai;
  std::optional<int> age;
  std::optional<Sex> sex;
  std::optional<bool> damage_blood;
  std::optional<bool> damage_kidney;
  std::optional<bool> damage_joint;
  std::optional<double> c3;
  std::optional<double> c4;
  // Target for the optional location head.
  std::optional<int> location;

  bool operator==(const SampleMeta&) const = default;
};

class Cohort {
 public:
  Cohort() = default;
  explicit Cohort(std::vector<SampleMeta> metas, std::filesystem::path base_dir = {})
      : metas_(std::move(metas)), base_dir_(std::move(base_dir)) {
    std::unordered_set<std::string> seen;
    for (const auto& m : metas_) {
      if (!seen.insert(m.sample_id).second) throw Error("duplicate sample_id '" + m.sample_id + "'");
      if (m.label < 0) throw Error("negative label for sample '" + m.sample_id + "'");
    }
  }

  const std::vector<SampleMeta>& metas() const noexcept { return metas_; }
  std::size_t size() const noexcept { return metas_.size(); }
  bool empty() const noexcept { return metas_.empty(); }
  const std::filesystem::path& base_dir() const noexcept { return base_dir_; }

  // Repertoire locator; relative paths resolve against the manifest directory.
  std::filesystem::path path_of(const SampleMeta& m) const {
    std::filesystem::path p(m.path);
    return p.is_absolute() || base_dir_.empty() ? p : base_dir_ / p;
  }

  const SampleMeta& find(std::string_view id) const {
    for (const auto& m : metas_)
      if (m.sample_id == id) return m;
    throw Error("unknown sample_id '" + std::string(id) + "'");
  }

  int n_classes() const noexcept {
    int c = 0;
    for (const auto& m : metas_) c = std::max(c, m.label + 1);
    return c;
  }

  std::map<int, std::size_t> class_counts() const {
    std::map<int, std::size_t> out;
    for (const auto& m : metas_) ++out[m.label];
    return out;
  }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(metas_.size());
    for (const auto& m : metas_) out.push_back(m.label);
    return out;
  }

  Cohort with_metas(std::vector<SampleMeta> metas) const { return Cohort(std::move(metas), base_dir_); }

 private:
  std::vector<SampleMeta> metas_;
  std::filesystem::path base_dir_;
};

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename Int>
std::optional<Int> parse_int(std::string_view s) {
  Int v{};
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (end != tmp.c_str() + tmp.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline bool looks_numeric(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return (c >= '0' && c <= '9') || c == '-' || c == '+'; });
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Tab-separated cdr3_aa, v_gene, count. A first line whose count column is not
// numeric is treated as a header. Duplicate (cdr3, v_gene) rows merge by
// summing counts; record order follows first occurrence.
inline Repertoire parse_repertoire(std::string_view text, std::string sample_id = {}) {
  Repertoire rep;
  rep.sample_id = std::move(sample_id);
  std::unordered_map<std::string, std::size_t> slot;

  std::size_t line_no = 0;
  bool seen_content = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    const auto cols = detail::split(line, '\t');
    if (cols.size() != 3)
      throw ParseError(line_no, "expected 3 tab-separated columns, found " + std::to_string(cols.size()));
    if (!seen_content) {
      seen_content = true;
      if (!detail::looks_numeric(cols[2])) continue;
    }
    const std::string_view cdr3 = cols[0];
    if (cdr3.empty()) throw ParseError(line_no, "empty cdr3_aa");
    for (char c : cdr3)
      if (!is_amino_acid(c)) throw ParseError(line_no, std::string("illegal amino-acid character '") + c + "'");
    if (cols[1].empty()) throw ParseError(line_no, "empty v_gene");
    const auto count = detail::parse_int<std::int64_t>(cols[2]);
    if (!count) throw ParseError(line_no, "count '" + std::string(cols[2]) + "' is not an integer");
    if (*count <= 0) throw ParseError(line_no, "count must be positive, got " + std::to_string(*count));

    std::string key(cdr3);
    key.push_back('\t');
    key.append(cols[1]);
    auto [it, fresh] = slot.try_emplace(std::move(key), rep.records.size());
    if (fresh) {
      rep.records.push_back({std::string(cdr3), std::string(cols[1]), static_cast<std::uint64_t>(*count), 0.0});
    } else {
      rep.records[it->second].count += static_cast<std::uint64_t>(*count);
    }
  }
  return rep;
}

inline std::string serialize_repertoire(const Repertoire& rep) {
  std::string out = "cdr3_aa\tv_gene\tcount\n";
  for (const auto& r : rep.records) {
    out += r.cdr3_aa;
    out += '\t';
    out += r.v_gene;
    out += '\t';
    out += std::to_string(r.count);
    out += '\n';
  }
  return out;
}

inline Repertoire read_repertoire_file(const std::filesystem::path& path, std::string sample_id = {}) {
  try {
    return parse_repertoire(read_text_file(path), std::move(sample_id));
  } catch (const ParseError& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

inline void write_repertoire_file(const std::filesystem::path& path, const Repertoire& rep) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << serialize_repertoire(rep);
}

inline Repertoire derive_frequencies(Repertoire rep) {
  if (rep.empty()) throw Error("cannot derive frequencies of empty repertoire '" + rep.sample_id + "'");
  long double total = 0;
  for (const auto& r : rep.records) {
    if (r.count < 1) throw Error("record with zero count in '" + rep.sample_id + "'");
    total += static_cast<long double>(r.count);
  }
  for (auto& r : rep.records) r.frequency = static_cast<double>(static_cast<long double>(r.count) / total);
  return rep;
}

// Manifest CSV with header. Required: sample_id, path, label. Optional:
// sledai, age, sex, damage_blood, damage_kidney, damage_joint, c3, c4,
// location. Empty cells are missing values; unrecognised columns are ignored.
inline Cohort load_manifest(std::string_view text, std::filesystem::path base_dir = {}) {
  const auto records = csv::parse(text);
  if (records.empty()) throw Error("manifest is empty");

  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < records[0].fields.size(); ++i) col[detail::trim(records[0].fields[i])] = i;
  for (const char* req : {"sample_id", "path", "label"})
    if (!col.count(req)) throw ParseError(records[0].line, std::string("manifest missing required column '") + req + "'");

  std::vector<SampleMeta> metas;
  std::unordered_set<std::string> ids;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    auto cell = [&](const std::string& name) -> std::string {
      auto it = col.find(name);
      if (it == col.end() || it->second >= rec.fields.size()) return {};
      return detail::trim(rec.fields[it->second]);
    };
    auto opt_int = [&](const std::string& name) -> std::optional<int> {
      const std::string v = cell(name);
      if (v.empty()) return std::nullopt;
      auto x = detail::parse_int<int>(v);
      if (!x) throw ParseError(rec.line, name + " '" + v + "' is not an integer");
      return x;
    };
    auto opt_double = [&](const std::string& name) -> std::optional<double> {
      const std::string v = cell(name);
      if (v.empty()) return std::nullopt;
      auto x = detail::parse_double(v);
      if (!x || *x < 0) throw ParseError(rec.line, name + " '" + v + "' is not a non-negative number");
      return x;
    };
    auto opt_bool = [&](const std::string& name) -> std::optional<bool> {
      const std::string v = detail::lower(cell(name));
      if (v.empty()) return std::nullopt;
      if (v == "1" || v == "true" || v == "yes" || v == "y") return true;
      if (v == "0" || v == "false" || v == "no" || v == "n") return false;
      throw ParseError(rec.line, name + " '" + v + "' is not a boolean");
    };

    SampleMeta m;
    m.sample_id = cell("sample_id");
    if (m.sample_id.empty()) throw ParseError(rec.line, "empty sample_id");
    if (!ids.insert(m.sample_id).second) throw ParseError(rec.line, "duplicate sample_id '" + m.sample_id + "'");
    m.path = cell("path");
    if (m.path.empty()) throw ParseError(rec.line, "empty path for '" + m.sample_id + "'");
    const std::string label = cell("label");
    const auto lab = detail::parse_int<int>(label);
    if (!lab || *lab < 0) throw ParseError(rec.line, "label '" + label + "' is not a non-negative integer");
    m.label = *lab;
    m.sledai = opt_int("sledai");
    if (m.sledai && *m.sledai < 0) throw ParseError(rec.line, "sledai must be non-negative");
    m.age = opt_int("age");
    if (m.age && *m.age <= 0) throw ParseError(rec.line, "age must be positive");
    if (const std::string sex = detail::lower(cell("sex")); !sex.empty()) {
      if (sex == "male" || sex == "m") m.sex = Sex::male;
      else if (sex == "female" || sex == "f") m.sex = Sex::female;
      else throw ParseError(rec.line, "unknown sex token '" + sex + "'");
    }
    m.damage_blood = opt_bool("damage_blood");
    m.damage_kidney = opt_bool("damage_kidney");
    m.damage_joint = opt_bool("damage_joint");
    m.c3 = opt_double("c3");
    m.c4 = opt_double("c4");
    m.location = opt_int("location");
    if (m.location && *m.location < 0) throw ParseError(rec.line, "location must be non-negative");
    metas.push_back(std::move(m));
  }
  return Cohort(std::move(metas), std::move(base_dir));
}

inline Cohort load_manifest_file(const std::filesystem::path& path) {
  try {
    return load_manifest(read_text_file(path), path.parent_path());
  } catch (const ParseError& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

inline std::string serialize_manifest(const Cohort& cohort) {
  std::ostringstream out;
  out.precision(17);
  out << "sample_id,path,label,sledai,age,sex,damage_blood,damage_kidney,damage_joint,c3,c4,location\n";
  auto opt = [&](const auto& v) {
    out << ',';
    if (v) out << *v;
  };
  for (const auto& m : cohort.metas()) {
    out << csv::escape(m.sample_id) << ',' << csv::escape(m.path) << ',' << m.label;
    opt(m.sledai);
    opt(m.age);
    out << ',';
    if (m.sex) out << to_string(*m.sex);
    for (const auto& b : {m.damage_blood, m.damage_kidney, m.damage_joint}) {
      out << ',';
      if (b) out << (*b ? 1 : 0);
    }
    opt(m.c3);
    opt(m.c4);
    opt(m.location);
    out << '\n';
  }
  return out.str();
}

inline void write_manifest_file(const std::filesystem::path& path, const Cohort& cohort) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << serialize_manifest(cohort);
}

// Lint: every repertoire resolves, parses and is non-empty. Returns one
// message per problem.
inline std::vector<std::string> validate_cohort(const Cohort& cohort) {
  std::vector<std::string> problems;
  for (const auto& m : cohort.metas()) {
    try {
      const auto rep = read_repertoire_file(cohort.path_of(m), m.sample_id);
      if (rep.empty()) problems.push_back(m.sample_id + ": repertoire is empty");
    } catch (const Error& e) {
      problems.push_back(m.sample_id + ": " + e.what());
    }
  }
  const auto counts = cohort.class_counts();
  const int c = cohort.n_classes();
  for (int k = 0; k < c; ++k)
    if (!counts.count(k)) problems.push_back("class " + std::to_string(k) + " has no samples");
  return problems;
}

}  // namespace repmil
