#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "repmil/csv.hpp"
#include "repmil/interpret.hpp"
#include "repmil/pipeline.hpp"

namespace repmil {

// Metrics are reported in percent with two decimals.
inline double round2(double v) { return std::isfinite(v) ? std::round(v * 100.0) / 100.0 : v; }

namespace detail {

inline std::string fixed2(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", round2(v));
  return buf;
}

// NaN (undefined AUC) becomes null.
inline nlohmann::ordered_json metric_value(double v) {
  if (!std::isfinite(v)) return nullptr;
  return round2(v);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const MetricRow& r) {
  return {{"acc", detail::metric_value(r.acc)},
          {"auc", detail::metric_value(r.auc)},
          {"precision", detail::metric_value(r.precision)},
          {"recall", detail::metric_value(r.recall)},
          {"f1", detail::metric_value(r.f1)},
          {"count", r.count},
          {"confusion", r.confusion}};
}

struct ReportExtras {
  std::vector<std::string> class_names;
  std::optional<double> witness_recovery;
  std::vector<std::string> notes;
};

inline nlohmann::ordered_json report_json(const EvalReport& r, const ReportExtras& extra = {}) {
  nlohmann::ordered_json j;
  j["n_classes"] = r.n_classes;
  if (!extra.class_names.empty()) j["class_names"] = extra.class_names;
  j["k"] = r.k;
  j["seed"] = r.seed;
  j["mean"] = to_json(r.mean);
  j["pooled"] = to_json(r.pooled);
  nlohmann::ordered_json folds = nlohmann::ordered_json::array();
  for (const auto& f : r.folds) folds.push_back(to_json(f));
  j["folds"] = folds;
  if (extra.witness_recovery) j["witness_recovery"] = *extra.witness_recovery;
  if (!extra.notes.empty()) j["notes"] = extra.notes;
  return j;
}

// One row per fold, then "mean" and "pooled".
inline std::string report_csv(const EvalReport& r) {
  std::string out = "fold,acc,auc,precision,recall,f1,count\n";
  auto row = [&](const std::string& name, const MetricRow& m) {
    out += name + ',' + detail::fixed2(m.acc) + ',' + detail::fixed2(m.auc) + ',' + detail::fixed2(m.precision) + ',' +
           detail::fixed2(m.recall) + ',' + detail::fixed2(m.f1) + ',' + std::to_string(m.count) + '\n';
  };
  for (std::size_t f = 0; f < r.folds.size(); ++f) row(std::to_string(f), r.folds[f]);
  row("mean", r.mean);
  row("pooled", r.pooled);
  return out;
}

// Per-sample class probabilities at full precision for external ROC plots.
inline std::string scores_csv(const EvalReport& r) {
  std::string out = "sample_id,true_label,fold";
  for (std::size_t c = 0; c < r.n_classes; ++c) out += ",score_" + std::to_string(c);
  out += '\n';
  for (const auto& s : r.samples) {
    out += csv::escape(s.sample_id) + ',' + std::to_string(s.true_label) + ',' + std::to_string(s.fold);
    for (double p : s.probs) out += ',' + detail::shortest(p);
    out += '\n';
  }
  return out;
}

// report.json, report.csv and scores.csv under `dir`.
inline void write_report(const std::filesystem::path& dir, const EvalReport& r, const ReportExtras& extra = {}) {
  detail::write_text(dir / "report.json", report_json(r, extra).dump(2) + '\n');
  detail::write_text(dir / "report.csv", report_csv(r));
  detail::write_text(dir / "scores.csv", scores_csv(r));
}

}  // namespace repmil
