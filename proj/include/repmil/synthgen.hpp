#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "repmil/error.hpp"
#include "repmil/repertoire.hpp"
#include "repmil/rng.hpp"

namespace repmil {

struct SynthConfig {
  std::size_t n_positive = 100;
  std::size_t n_negative = 100;
  std::size_t instances_per_bag = 500;
  double witness_rate = 0.05;
  std::vector<std::string> motifs = {"RWGHQE", "YPNMWK", "HDFWMC"};
  std::size_t min_length = 8;
  std::size_t max_length = 20;
  std::vector<std::string> v_genes = {
      "TRBV2*01",    "TRBV3-1*01", "TRBV4-1*01", "TRBV5-1*01", "TRBV6-1*01", "TRBV6-5*01", "TRBV7-2*01",
      "TRBV7-9*01",  "TRBV9*01",   "TRBV10-3*01", "TRBV11-2*01", "TRBV12-3*01", "TRBV13*01", "TRBV14*01",
      "TRBV15*01",   "TRBV18*01",  "TRBV19*01",  "TRBV20-1*01", "TRBV27*01", "TRBV28*01"};
  // Usage weights for genes in positive bags; empty = uniform everywhere.
  std::vector<double> positive_gene_weights;
  double zipf_exponent = 1.2;
  std::uint64_t max_count = 5000;
  std::uint64_t seed = 2024;

  void validate() const {
    if (!(witness_rate >= 0.0 && witness_rate <= 1.0)) throw ConfigError("witness_rate must lie in [0, 1]");
    if (witness_rate > 0.0 && motifs.empty()) throw ConfigError("witness_rate > 0 needs at least one motif");
    for (const auto& m : motifs)
      if (!is_valid_cdr3(m)) throw ConfigError("motif '" + m + "' is not a valid amino-acid string");
    if (min_length < 3 || max_length < min_length) throw ConfigError("invalid background length range");
    for (const auto& m : motifs)
      if (m.size() > max_length) throw ConfigError("motif '" + m + "' longer than max_length");
    if (instances_per_bag == 0) throw ConfigError("instances_per_bag must be positive");
    if (v_genes.empty()) throw ConfigError("v_gene pool is empty");
    if (!positive_gene_weights.empty() && positive_gene_weights.size() != v_genes.size())
      throw ConfigError("positive_gene_weights must match the v_gene pool");
    if (!(zipf_exponent > 0.0)) throw ConfigError("zipf_exponent must be positive");
  }
};

struct BagTruth {
  std::string sample_id;
  int label = 0;
  std::vector<std::size_t> witness_indices;  // row order of the repertoire
  std::set<std::string> witness_cdr3;
};

struct GroundTruth {
  std::vector<BagTruth> bags;

  const BagTruth* find(const std::string& id) const {
    for (const auto& b : bags)
      if (b.sample_id == id) return &b;
    return nullptr;
  }
};

struct SynthCohort {
  Cohort cohort;
  std::vector<Repertoire> repertoires;  // same order as cohort.metas()
  GroundTruth truth;
};

namespace detail {

inline bool contains_any(const std::string& s, std::span<const std::string> motifs) {
  for (const auto& m : motifs)
    if (s.find(m) != std::string::npos) return true;
  return false;
}

inline std::string random_peptide(CounterRng& rng, std::size_t len) {
  std::string s(len, 'A');
  for (auto& c : s) c = kAminoAcids[rng.below(kAminoAcids.size())];
  return s;
}

inline std::size_t weighted_pick(CounterRng& rng, std::span<const double> w) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  return w.size() - 1;
}

inline Repertoire synth_bag(const SynthConfig& cfg, CounterRng rng, const std::string& id, bool positive, BagTruth& truth) {
  Repertoire rep;
  rep.sample_id = id;
  std::unordered_set<std::string> seen;
  const std::size_t n = cfg.instances_per_bag;
  const std::size_t span = cfg.max_length - cfg.min_length + 1;
  for (std::size_t i = 0; i < n; ++i) {
    const bool planted = positive && rng.bernoulli(cfg.witness_rate);
    std::string gene = positive && !cfg.positive_gene_weights.empty()
                           ? cfg.v_genes[weighted_pick(rng, cfg.positive_gene_weights)]
                           : cfg.v_genes[rng.below(cfg.v_genes.size())];
    std::string cdr3;
    for (;;) {
      if (planted) {
        const std::string& motif = cfg.motifs[rng.below(cfg.motifs.size())];
        const std::size_t lo = std::max(cfg.min_length, motif.size());
        const std::size_t len = lo + rng.below(cfg.max_length - lo + 1);
        cdr3 = random_peptide(rng, len);
        cdr3.replace(rng.below(len - motif.size() + 1), motif.size(), motif);
      } else {
        cdr3 = random_peptide(rng, cfg.min_length + rng.below(span));
        if (contains_any(cdr3, cfg.motifs)) continue;
      }
      if (seen.insert(cdr3 + '\t' + gene).second) break;
    }
    if (planted) {
      truth.witness_indices.push_back(i);
      truth.witness_cdr3.insert(cdr3);
    }
    rep.records.push_back({std::move(cdr3), std::move(gene), 1, 0.0});
  }
  // Heavy-tailed clone sizes: a random rank order with count ~ max / rank^s.
  std::vector<std::size_t> rank(n);
  std::iota(rank.begin(), rank.end(), std::size_t{1});
  rng.shuffle(rank);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = static_cast<double>(cfg.max_count) / std::pow(static_cast<double>(rank[i]), cfg.zipf_exponent);
    rep.records[i].count = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(c));
  }
  return rep;
}

}  // namespace detail

// Negative bags first (label 0), then positive bags (label 1). Each bag
// draws from its own substream of the seed.
inline SynthCohort generate_cohort(const SynthConfig& cfg) {
  cfg.validate();
  SynthCohort out;
  std::vector<SampleMeta> metas;
  const CounterRng root(cfg.seed);
  const std::size_t total = cfg.n_negative + cfg.n_positive;
  const int width = total >= 1000 ? 4 : 3;
  for (std::size_t b = 0; b < total; ++b) {
    const bool positive = b >= cfg.n_negative;
    const std::size_t local = positive ? b - cfg.n_negative : b;
    std::string num = std::to_string(local);
    if (num.size() < static_cast<std::size_t>(width)) num.insert(0, static_cast<std::size_t>(width) - num.size(), '0');
    const std::string id = (positive ? "pos_" : "neg_") + num;
    BagTruth truth{id, positive ? 1 : 0, {}, {}};
    out.repertoires.push_back(detail::synth_bag(cfg, root.split(b), id, positive, truth));
    out.truth.bags.push_back(std::move(truth));
    SampleMeta m;
    m.sample_id = id;
    m.path = "repertoires/" + id + ".tsv";
    m.label = positive ? 1 : 0;
    metas.push_back(std::move(m));
  }
  out.cohort = Cohort(std::move(metas));
  return out;
}

inline nlohmann::json to_json(const GroundTruth& gt) {
  nlohmann::json bags = nlohmann::json::array();
  for (const auto& b : gt.bags)
    bags.push_back({{"sample_id", b.sample_id}, {"label", b.label}, {"witness_indices", b.witness_indices},
                    {"witness_cdr3", std::vector<std::string>(b.witness_cdr3.begin(), b.witness_cdr3.end())}});
  return {{"bags", bags}};
}

inline GroundTruth ground_truth_from_json(const nlohmann::json& j) {
  GroundTruth gt;
  for (const auto& b : j.at("bags")) {
    BagTruth t;
    t.sample_id = b.at("sample_id").get<std::string>();
    t.label = b.at("label").get<int>();
    t.witness_indices = b.at("witness_indices").get<std::vector<std::size_t>>();
    for (const auto& s : b.at("witness_cdr3")) t.witness_cdr3.insert(s.get<std::string>());
    gt.bags.push_back(std::move(t));
  }
  return gt;
}

// Writes repertoires/<id>.tsv, manifest.csv and ground_truth.json.
inline void write_synth_cohort(const SynthCohort& sc, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "repertoires");
  for (std::size_t i = 0; i < sc.repertoires.size(); ++i)
    write_repertoire_file(dir / sc.cohort.metas()[i].path, sc.repertoires[i]);
  write_manifest_file(dir / "manifest.csv", sc.cohort);
  std::ofstream out(dir / "ground_truth.json", std::ios::binary);
  if (!out) throw Error("cannot write ground truth under '" + dir.string() + "'");
  out << to_json(sc.truth).dump(2) << '\n';
}

struct BagSelection {
  std::string sample_id;
  std::vector<std::string> cdr3;  // attended instances, any order
};

// Fraction of selected instances in positive bags that are planted witnesses.
inline double score_witness_recovery(std::span<const BagSelection> selections, const GroundTruth& truth) {
  std::size_t hits = 0, total = 0;
  for (const auto& sel : selections) {
    const BagTruth* t = truth.find(sel.sample_id);
    if (!t || t->label == 0) continue;
    for (const auto& s : sel.cdr3) {
      ++total;
      if (t->witness_cdr3.count(s)) ++hits;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace repmil
