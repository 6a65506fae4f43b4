#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "repmil/error.hpp"
#include "repmil/repertoire.hpp"

namespace repmil {

// Binary task: target -> 1, every other class -> 0.
inline Cohort relabel_one_vs_others(const Cohort& cohort, int target) {
  bool present = false;
  std::vector<SampleMeta> metas = cohort.metas();
  for (auto& m : metas) {
    present = present || m.label == target;
    m.label = m.label == target ? 1 : 0;
  }
  if (!present) throw Error("target class " + std::to_string(target) + " does not occur in the cohort");
  return cohort.with_metas(std::move(metas));
}

enum class DamageSite { blood, kidney, joint };

inline DamageSite parse_damage_site(std::string_view s) {
  if (s == "blood") return DamageSite::blood;
  if (s == "kidney") return DamageSite::kidney;
  if (s == "joint") return DamageSite::joint;
  throw ConfigError("unknown damage site '" + std::string(s) + "' (expected blood, kidney or joint)");
}

// Organ-damage task as a binary relabelling: damaged -> 1.
inline Cohort relabel_damage(const Cohort& cohort, DamageSite site) {
  std::vector<SampleMeta> metas = cohort.metas();
  std::string missing;
  for (auto& m : metas) {
    const auto& flag = site == DamageSite::blood ? m.damage_blood : site == DamageSite::kidney ? m.damage_kidney : m.damage_joint;
    if (!flag) {
      missing += (missing.empty() ? "" : ", ") + m.sample_id;
      continue;
    }
    m.label = *flag ? 1 : 0;
  }
  if (!missing.empty()) throw Error("damage flag missing for: " + missing);
  return cohort.with_metas(std::move(metas));
}

// A conjunction of comparisons such as "sledai<=4 && sex=female".
// Fields: label, sledai, age, c3, c4, location (numeric); sex (male/female);
// damage_blood, damage_kidney, damage_joint (0/1/true/false).
struct Predicate {
  struct Clause {
    std::string field;
    std::string op;
    std::string value;
  };
  std::vector<Clause> clauses;

  static Predicate parse(std::string_view text) {
    Predicate p;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t amp = text.find("&&", pos);
      std::size_t comma = text.find(',', pos);
      std::size_t end = std::min(amp, comma);
      const std::size_t skip = end == amp && amp != std::string_view::npos ? 2 : 1;
      const std::string part = detail::trim(text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
      if (part.empty()) throw ConfigError("empty clause in filter '" + std::string(text) + "'");
      p.clauses.push_back(parse_clause(part));
      if (end == std::string_view::npos) break;
      pos = end + skip;
    }
    return p;
  }

 private:
  static Clause parse_clause(const std::string& s) {
    static const char* ops[] = {"<=", ">=", "!=", "==", "<", ">", "="};
    for (const char* op : ops) {
      const auto at = s.find(op);
      if (at == std::string::npos) continue;
      Clause c{detail::trim(s.substr(0, at)), op, detail::lower(detail::trim(s.substr(at + std::string_view(op).size())))};
      if (c.op == "=") c.op = "==";
      if (c.field.empty() || c.value.empty()) break;
      return c;
    }
    throw ConfigError("cannot parse filter clause '" + s + "'");
  }
};

namespace detail {

inline bool compare(double lhs, const std::string& op, double rhs) {
  if (op == "<=") return lhs <= rhs;
  if (op == ">=") return lhs >= rhs;
  if (op == "<") return lhs < rhs;
  if (op == ">") return lhs > rhs;
  if (op == "==") return lhs == rhs;
  if (op == "!=") return lhs != rhs;
  throw ConfigError("unknown operator '" + op + "'");
}

// nullopt when the sample lacks the field.
inline std::optional<bool> evaluate(const SampleMeta& m, const Predicate::Clause& c) {
  auto numeric = [&](std::optional<double> v) -> std::optional<bool> {
    if (!v) return std::nullopt;
    const auto rhs = parse_double(c.value);
    if (!rhs) throw ConfigError("filter value '" + c.value + "' for '" + c.field + "' is not a number");
    return compare(*v, c.op, *rhs);
  };
  auto to_opt = [](const auto& o) -> std::optional<double> { return o ? std::optional<double>(static_cast<double>(*o)) : std::nullopt; };
  if (c.field == "label") return numeric(static_cast<double>(m.label));
  if (c.field == "sledai") return numeric(to_opt(m.sledai));
  if (c.field == "age") return numeric(to_opt(m.age));
  if (c.field == "c3") return numeric(m.c3);
  if (c.field == "c4") return numeric(m.c4);
  if (c.field == "location") return numeric(to_opt(m.location));
  if (c.field == "sex") {
    if (c.op != "==" && c.op != "!=") throw ConfigError("sex supports only = and !=");
    if (c.value != "male" && c.value != "female") throw ConfigError("unknown sex token '" + c.value + "'");
    if (!m.sex) return std::nullopt;
    const bool eq = to_string(*m.sex) == c.value;
    return c.op == "==" ? eq : !eq;
  }
  if (c.field == "damage_blood" || c.field == "damage_kidney" || c.field == "damage_joint") {
    const auto& f = c.field == "damage_blood" ? m.damage_blood : c.field == "damage_kidney" ? m.damage_kidney : m.damage_joint;
    if (!f) return std::nullopt;
    const bool want = c.value == "1" || c.value == "true" || c.value == "yes";
    if (!want && c.value != "0" && c.value != "false" && c.value != "no") throw ConfigError("filter value for '" + c.field + "' must be boolean");
    if (c.op != "==" && c.op != "!=") throw ConfigError(c.field + " supports only = and !=");
    return c.op == "==" ? *f == want : *f != want;
  }
  throw ConfigError("unknown filter field '" + c.field + "'");
}

}  // namespace detail

struct FilterResult {
  Cohort cohort;
  std::vector<std::size_t> kept;  // indices into the input cohort
  std::optional<std::string> warning;
};

// Keeps samples satisfying every clause. A field missing on any sample is an
// error naming the offenders; an empty result is only a warning.
inline FilterResult subset_filter(const Cohort& cohort, const Predicate& pred) {
  FilterResult r;
  std::vector<SampleMeta> kept;
  std::string offenders;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& m = cohort.metas()[i];
    bool keep = true;
    for (const auto& c : pred.clauses) {
      const auto v = detail::evaluate(m, c);
      if (!v) {
        offenders += (offenders.empty() ? "" : ", ") + m.sample_id + " (" + c.field + ")";
        keep = false;
        continue;
      }
      keep = keep && *v;
    }
    if (keep) {
      kept.push_back(m);
      r.kept.push_back(i);
    }
  }
  if (!offenders.empty()) throw Error("filter references missing fields: " + offenders);
  if (kept.empty()) r.warning = "filter matched no samples";
  r.cohort = cohort.with_metas(std::move(kept));
  return r;
}

inline FilterResult subset_filter(const Cohort& cohort, std::string_view predicate) {
  return subset_filter(cohort, Predicate::parse(predicate));
}

}  // namespace repmil
