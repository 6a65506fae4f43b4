#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "repmil/checkpoint.hpp"
#include "repmil/csv.hpp"
#include "repmil/pipeline.hpp"

namespace repmil {

struct SequenceScore {
  std::string cdr3_aa;
  std::string v_gene;
  double cumulative_attention = 0;
  std::size_t support = 0;
};

struct GeneScore {
  std::string v_gene;
  double cumulative_attention = 0;
  std::size_t support = 0;
};

struct FeatureRanking {
  std::vector<SequenceScore> sequences;  // descending attention, then key
  std::vector<GeneScore> genes;
};

// Sums normalised attention weights per (cdr3, v_gene) and per v_gene.
// Merging two accumulators equals accumulating both cohorts.
class AttentionAccumulator {
 public:
  template <typename T>
  void add(std::span<const T> weights, std::span<const InstanceRef> refs) {
    if (weights.size() != refs.size()) throw ShapeError("attention row does not match the instance references");
    std::map<std::string, double> genes_here;
    for (std::size_t k = 0; k < refs.size(); ++k) {
      auto& e = sequences_[{refs[k].cdr3_aa, refs[k].v_gene}];
      e.first += static_cast<double>(weights[k]);
      e.second += 1;
      genes_here[refs[k].v_gene] += static_cast<double>(weights[k]);
    }
    for (const auto& [g, w] : genes_here) {
      auto& e = genes_[g];
      e.first += w;
      e.second += 1;
    }
    ++bags_;
  }

  void merge(const AttentionAccumulator& o) {
    for (const auto& [k, v] : o.sequences_) {
      sequences_[k].first += v.first;
      sequences_[k].second += v.second;
    }
    for (const auto& [k, v] : o.genes_) {
      genes_[k].first += v.first;
      genes_[k].second += v.second;
    }
    bags_ += o.bags_;
  }

  std::size_t bags() const noexcept { return bags_; }

  FeatureRanking ranking() const {
    FeatureRanking r;
    for (const auto& [k, v] : sequences_) r.sequences.push_back({k.first, k.second, v.first, v.second});
    for (const auto& [k, v] : genes_) r.genes.push_back({k, v.first, v.second});
    // Map iteration is key-ordered, so a stable sort leaves ties lexicographic.
    std::stable_sort(r.sequences.begin(), r.sequences.end(),
                     [](const auto& a, const auto& b) { return a.cumulative_attention > b.cumulative_attention; });
    std::stable_sort(r.genes.begin(), r.genes.end(),
                     [](const auto& a, const auto& b) { return a.cumulative_attention > b.cumulative_attention; });
    return r;
  }

 private:
  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> sequences_;
  std::map<std::string, std::pair<double, std::size_t>> genes_;
  std::size_t bags_ = 0;
};

// Eval-mode attention of `branch` accumulated over the samples, optionally
// only those carrying `only_label`.
inline AttentionAccumulator aggregate_attention(const Checkpoint& ck, const PreparedCohort& pc, std::size_t branch,
                                                std::optional<int> only_label = std::nullopt) {
  if (branch >= ck.model.n_classes) throw ConfigError("class branch " + std::to_string(branch) + " out of range");
  AttentionAccumulator acc;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    if (only_label && pc.cohort.metas()[i].label != *only_label) continue;
    const auto eb = encode_sample<float>(pc, i, ck.vocab, ck.covariates, ck.encoding, Strictness::lenient, 0);
    const auto out = forward(eb.bag.x, ck.params, ck.model, Mode::eval, nullptr, std::span<const float>(eb.bag.covariates));
    acc.add<float>(out.attention.weights.row(branch), eb.refs);
  }
  return acc;
}

template <typename Entry>
std::vector<Entry> top_features(const std::vector<Entry>& ranked, std::size_t n) {
  return {ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(std::min(n, ranked.size()))};
}

namespace detail {

inline std::string shortest(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string shortest(float v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

inline std::string ranking_csv(const FeatureRanking& r, std::size_t top) {
  std::string out = "rank,cdr3_aa,v_gene,cumulative_attention,support\n";
  const auto seqs = top_features(r.sequences, top);
  for (std::size_t i = 0; i < seqs.size(); ++i)
    out += std::to_string(i + 1) + ',' + seqs[i].cdr3_aa + ',' + csv::escape(seqs[i].v_gene) + ',' +
           detail::shortest(seqs[i].cumulative_attention) + ',' + std::to_string(seqs[i].support) + '\n';
  return out;
}

inline std::string gene_ranking_csv(const FeatureRanking& r, std::size_t top) {
  std::string out = "rank,v_gene,cumulative_attention,support\n";
  const auto genes = top_features(r.genes, top);
  for (std::size_t i = 0; i < genes.size(); ++i)
    out += std::to_string(i + 1) + ',' + csv::escape(genes[i].v_gene) + ',' + detail::shortest(genes[i].cumulative_attention) +
           ',' + std::to_string(genes[i].support) + '\n';
  return out;
}

inline nlohmann::json to_json(const FeatureRanking& r, std::size_t top) {
  nlohmann::json seqs = nlohmann::json::array(), genes = nlohmann::json::array();
  for (const auto& s : top_features(r.sequences, top))
    seqs.push_back({{"cdr3_aa", s.cdr3_aa}, {"v_gene", s.v_gene}, {"cumulative_attention", s.cumulative_attention}, {"support", s.support}});
  for (const auto& g : top_features(r.genes, top))
    genes.push_back({{"v_gene", g.v_gene}, {"cumulative_attention", g.cumulative_attention}, {"support", g.support}});
  return {{"sequences", seqs}, {"genes", genes}};
}

// CSV: sample_id, label, then the C x L pooled matrix flattened row-major.
inline std::string pooled_features_csv(const Checkpoint& ck, const PreparedCohort& pc) {
  const std::size_t C = ck.model.n_classes, L = ck.model.input_dim;
  std::string out = "sample_id,label";
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < L; ++i) out += ",m" + std::to_string(c) + "_" + std::to_string(i);
  out += '\n';
  for (std::size_t s = 0; s < pc.size(); ++s) {
    const auto eb = encode_sample<float>(pc, s, ck.vocab, ck.covariates, ck.encoding, Strictness::lenient, 0);
    const auto bag = forward(eb.bag.x, ck.params, ck.model, Mode::eval, nullptr, std::span<const float>(eb.bag.covariates));
    out += csv::escape(eb.bag.sample_id) + ',' + std::to_string(pc.cohort.metas()[s].label);
    for (float v : bag.pooled.data()) {
      out += ',';
      out += detail::shortest(v);
    }
    out += '\n';
  }
  return out;
}

inline void export_pooled_features(const Checkpoint& ck, const PreparedCohort& pc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << pooled_features_csv(ck, pc);
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace repmil
