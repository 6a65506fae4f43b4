#pragma once

#include <algorithm>
#include <cstddef>

#include "repmil/error.hpp"
#include "repmil/repertoire.hpp"

namespace repmil {

enum class PadPolicy { no_pad, repeat_last };

struct SelectionConfig {
  std::size_t m = 2000;
  PadPolicy pad_policy = PadPolicy::no_pad;
};

// Strict weak order used for selection: higher frequency first, then
// lexicographic cdr3, then v_gene.
inline bool selection_before(const SequenceRecord& a, const SequenceRecord& b) noexcept {
  if (a.frequency != b.frequency) return a.frequency > b.frequency;
  if (a.cdr3_aa != b.cdr3_aa) return a.cdr3_aa < b.cdr3_aa;
  return a.v_gene < b.v_gene;
}

// Keeps the m most frequent clones. Bags smaller than m stay small unless
// pad_policy asks for repeat_last padding.
inline Repertoire select_top_m(const Repertoire& rep, const SelectionConfig& cfg) {
  if (cfg.m < 1) throw ConfigError("selection size m must be >= 1");
  if (rep.empty()) throw Error("cannot select from empty repertoire '" + rep.sample_id + "'");
  if (!rep.has_frequencies()) throw Error("frequencies not derived for '" + rep.sample_id + "'");

  Repertoire out;
  out.sample_id = rep.sample_id;
  out.records = rep.records;
  const std::size_t keep = std::min(cfg.m, out.records.size());
  if (keep < out.records.size()) {
    std::nth_element(out.records.begin(), out.records.begin() + static_cast<std::ptrdiff_t>(keep), out.records.end(),
                     selection_before);
    out.records.resize(keep);
  }
  std::sort(out.records.begin(), out.records.end(), selection_before);

  if (cfg.pad_policy == PadPolicy::repeat_last) {
    const SequenceRecord last = out.records.back();
    out.records.resize(cfg.m, last);
  }
  return out;
}

}  // namespace repmil
