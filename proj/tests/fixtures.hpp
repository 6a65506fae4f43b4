#pragma once

#include <filesystem>
#include <string>

#include "repmil/pipeline.hpp"

namespace repmil::testing {

inline SynthConfig small_synth(std::size_t per_class, std::size_t instances, double wr, std::uint64_t seed) {
  SynthConfig s;
  s.n_positive = per_class;
  s.n_negative = per_class;
  s.instances_per_bag = instances;
  s.witness_rate = wr;
  s.seed = seed;
  return s;
}

inline PipelineConfig small_pipeline(std::size_t epochs, std::uint64_t seed) {
  PipelineConfig cfg;
  cfg.encoding.fallback = true;
  cfg.encoding.m = 60;
  cfg.model.hidden_dim = 16;
  cfg.model.dropout = 0.0;
  cfg.loss.k = 4;
  cfg.train.lr = 1e-3;
  cfg.train.epochs = epochs;
  cfg.train.seed = seed;
  cfg.folds = 3;
  cfg.top_instances = 4;
  return cfg;
}

inline PreparedCohort prepare_synth(const SynthCohort& sc, const PipelineConfig& cfg) {
  return prepare_repertoires(sc.cohort, sc.repertoires, cfg.encoding);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("repmil_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace repmil::testing
