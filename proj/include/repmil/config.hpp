#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "repmil/error.hpp"
#include "repmil/pipeline.hpp"
#include "repmil/synthgen.hpp"

namespace repmil {

// Every tunable of a run as one flat JSON object with dotted keys. The
// defaults fix both the key set and each key's type: unknown keys and
// mistyped values are rejected.
class RunConfig {
 public:
  using json = nlohmann::ordered_json;

  RunConfig() : values_(defaults()) {}

  static json defaults() {
    const PipelineConfig p;
    const SynthConfig s;
    std::string motifs;
    for (const auto& m : s.motifs) motifs += (motifs.empty() ? "" : ",") + m;
    return {
        {"io.manifest", ""},
        {"io.out", ""},
        {"io.model", ""},
        {"io.ground_truth", ""},
        {"selection.m", p.encoding.m},
        {"encoding.embeddings", ""},
        {"encoding.fallback", false},
        {"encoding.gene_slots", p.encoding.gene_slots},
        {"encoding.embedding_dim", p.encoding.embedding_dim},
        {"covariates", ""},
        {"model.hidden_dim", p.model.hidden_dim},
        {"model.lambda", p.model.lambda},
        {"model.dropout", p.model.dropout},
        {"model.n_locations", p.model.n_locations},
        {"loss.c1", p.loss.c1},
        {"loss.k", p.loss.k},
        {"loss.tau", p.loss.tau},
        {"loss.use_bottom_k_negatives", p.loss.use_bottom_k_negatives},
        {"loss.positives_only", p.loss.positives_only},
        {"loss.loc_weight", p.loss.loc_weight},
        {"train.lr", p.train.lr},
        {"train.weight_decay", p.train.weight_decay},
        {"train.beta1", p.train.beta1},
        {"train.beta2", p.train.beta2},
        {"train.eps", p.train.eps},
        {"train.epochs", p.train.epochs},
        {"train.seed", p.train.seed},
        {"train.precision", "standard"},
        {"eval.k", p.folds},
        {"eval.top_instances", p.top_instances},
        {"eval.class_names", ""},
        {"experiment.target", ""},
        {"experiment.filter", ""},
        {"experiment.site", ""},
        {"explain.top", 30u},
        {"explain.branch", "1"},
        {"explain.pooled_features", false},
        {"synth.positives", s.n_positive},
        {"synth.negatives", s.n_negative},
        {"synth.instances", s.instances_per_bag},
        {"synth.wr", s.witness_rate},
        {"synth.motifs", motifs},
        {"synth.min_length", s.min_length},
        {"synth.max_length", s.max_length},
        {"synth.zipf", s.zipf_exponent},
        {"synth.seed", s.seed},
    };
  }

  const json& values() const noexcept { return values_; }
  bool has(const std::string& key) const { return values_.contains(key); }

  // Typed assignment; `origin` names the flag or file for diagnostics.
  void set(const std::string& key, const json& v, const std::string& origin) {
    if (!values_.contains(key)) throw ConfigError(origin + ": unknown config key '" + key + "'");
    json& slot = values_[key];
    if (slot.is_boolean()) {
      if (!v.is_boolean()) throw ConfigError(origin + ": '" + key + "' expects true or false");
    } else if (slot.is_number_unsigned()) {
      if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0 && !v.is_number_unsigned()))
        throw ConfigError(origin + ": '" + key + "' expects a non-negative integer");
    } else if (slot.is_number()) {
      if (!v.is_number()) throw ConfigError(origin + ": '" + key + "' expects a number");
    } else if (slot.is_string()) {
      if (!v.is_string()) throw ConfigError(origin + ": '" + key + "' expects a string");
    }
    if (slot.is_number_float()) {
      slot = v.get<double>();
    } else if (slot.is_number_unsigned()) {
      slot = v.get<std::uint64_t>();
    } else {
      slot = v;
    }
  }

  // Assigns from command-line text, converted by the key's type.
  void set_text(const std::string& key, const std::string& text, const std::string& origin) {
    if (!values_.contains(key)) throw ConfigError(origin + ": unknown config key '" + key + "'");
    const json& slot = values_[key];
    if (slot.is_string()) return set(key, text, origin);
    if (slot.is_boolean()) {
      const std::string t = detail::lower(text);
      if (t == "true" || t == "1") return set(key, true, origin);
      if (t == "false" || t == "0") return set(key, false, origin);
      throw ConfigError(origin + ": expected true or false, got '" + text + "'");
    }
    if (slot.is_number_unsigned()) {
      const auto v = detail::parse_int<std::uint64_t>(text);
      if (!v) throw ConfigError(origin + ": expected a non-negative integer, got '" + text + "'");
      return set(key, *v, origin);
    }
    const auto v = detail::parse_double(text);
    if (!v) throw ConfigError(origin + ": expected a number, got '" + text + "'");
    set(key, *v, origin);
  }

  void merge(const json& obj, const std::string& origin) {
    if (!obj.is_object()) throw ConfigError(origin + ": config must be a JSON object");
    for (const auto& [k, v] : obj.items()) set(k, v, origin);
  }

  void load_file(const std::filesystem::path& path) {
    json j;
    try {
      j = json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config '" + path.string() + "': " + e.what());
    }
    merge(j, "config '" + path.string() + "'");
  }

  std::string str(const std::string& key) const { return values_.at(key).get<std::string>(); }
  std::size_t size(const std::string& key) const { return values_.at(key).get<std::size_t>(); }
  std::uint64_t u64(const std::string& key) const { return values_.at(key).get<std::uint64_t>(); }
  double num(const std::string& key) const { return values_.at(key).get<double>(); }
  bool flag(const std::string& key) const { return values_.at(key).get<bool>(); }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    for (auto& part : detail::split(s, ',')) {
      auto t = detail::trim(part);
      if (t.empty()) throw ConfigError("empty entry in list '" + s + "'");
      out.push_back(std::move(t));
    }
    return out;
  }

  // Everything needed by encode/train/eval/cv, validated.
  PipelineConfig pipeline() const {
    PipelineConfig p;
    p.encoding.m = size("selection.m");
    p.encoding.gene_slots = size("encoding.gene_slots");
    p.encoding.embedding_dim = size("encoding.embedding_dim");
    p.encoding.fallback = flag("encoding.fallback");
    p.encoding.embeddings_path = str("encoding.embeddings");
    p.covariates = split_list(str("covariates"));
    p.model.hidden_dim = size("model.hidden_dim");
    p.model.lambda = num("model.lambda");
    p.model.dropout = num("model.dropout");
    p.model.n_locations = size("model.n_locations");
    p.loss.c1 = num("loss.c1");
    p.loss.k = size("loss.k");
    p.loss.tau = num("loss.tau");
    p.loss.use_bottom_k_negatives = flag("loss.use_bottom_k_negatives");
    p.loss.positives_only = flag("loss.positives_only");
    p.loss.loc_weight = num("loss.loc_weight");
    p.train.lr = num("train.lr");
    p.train.weight_decay = num("train.weight_decay");
    p.train.beta1 = num("train.beta1");
    p.train.beta2 = num("train.beta2");
    p.train.eps = num("train.eps");
    p.train.epochs = size("train.epochs");
    p.train.seed = u64("train.seed");
    const std::string prec = str("train.precision");
    if (prec == "wide") {
      p.train.precision = Precision::wide;
    } else if (prec == "standard") {
      p.train.precision = Precision::standard;
    } else {
      throw ConfigError("train.precision must be 'standard' or 'wide', got '" + prec + "'");
    }
    p.folds = size("eval.k");
    p.top_instances = size("eval.top_instances");

    if (p.encoding.m == 0) throw ConfigError("selection.m must be >= 1");
    if (p.folds < 2) throw ConfigError("eval.k must be >= 2");
    if (p.top_instances == 0) throw ConfigError("eval.top_instances must be >= 1");
    if (p.train.epochs == 0) throw ConfigError("train.epochs must be >= 1");
    p.loss.validate();
    p.train.validate();
    ModelConfig probe = p.model;
    probe.input_dim = p.encoding.gene_slots + p.encoding.embedding_dim;
    probe.validate();
    return p;
  }

  SynthConfig synth() const {
    SynthConfig s;
    s.n_positive = size("synth.positives");
    s.n_negative = size("synth.negatives");
    s.instances_per_bag = size("synth.instances");
    s.witness_rate = num("synth.wr");
    s.motifs = split_list(str("synth.motifs"));
    s.min_length = size("synth.min_length");
    s.max_length = size("synth.max_length");
    s.zipf_exponent = num("synth.zipf");
    s.seed = u64("synth.seed");
    s.validate();
    return s;
  }

  std::string dump() const { return values_.dump(2) + '\n'; }

  void write_resolved(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << dump();
  }

 private:
  json values_;
};

}  // namespace repmil
