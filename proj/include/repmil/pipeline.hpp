#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "repmil/checkpoint.hpp"
#include "repmil/esmonehot.hpp"
#include "repmil/loss.hpp"
#include "repmil/metrics.hpp"
#include "repmil/model.hpp"
#include "repmil/optim.hpp"
#include "repmil/primeseq.hpp"
#include "repmil/repertoire.hpp"
#include "repmil/synthgen.hpp"
#include "repmil/train.hpp"

namespace repmil {

// Everything a run needs. input_dim, n_classes and covariate_dim of `model`
// are derived from the data and the encoding at run time.
struct PipelineConfig {
  EncodingSpec encoding;
  std::vector<std::string> covariates;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  std::size_t folds = 5;
  std::size_t top_instances = 8;
};

// Cohort with repertoires parsed, frequency-annotated and PrimeSeq-selected.
struct PreparedCohort {
  Cohort cohort;
  std::vector<Repertoire> selected;  // parallel to cohort.metas()
  std::shared_ptr<const EmbeddingTable> table;

  std::size_t size() const noexcept { return selected.size(); }
};

inline std::shared_ptr<const EmbeddingTable> load_table_for(const EncodingSpec& enc) {
  if (enc.embeddings_path.empty()) return nullptr;
  return std::make_shared<const EmbeddingTable>(load_embedding_table(enc.embeddings_path, enc.embedding_dim));
}

inline PreparedCohort prepare_repertoires(Cohort cohort, std::vector<Repertoire> reps, const EncodingSpec& enc,
                                          std::shared_ptr<const EmbeddingTable> table = nullptr) {
  if (reps.size() != cohort.size()) throw ShapeError("repertoire count does not match the cohort");
  if (enc.embeddings_path.empty() && !enc.fallback && !table)
    throw ConfigError("no embedding source: give an embedding table or enable the fallback embedder");
  PreparedCohort out{std::move(cohort), {}, table ? std::move(table) : load_table_for(enc)};
  const SelectionConfig sel{enc.m, PadPolicy::no_pad};
  for (std::size_t i = 0; i < reps.size(); ++i) {
    reps[i].sample_id = out.cohort.metas()[i].sample_id;
    out.selected.push_back(select_top_m(derive_frequencies(std::move(reps[i])), sel));
  }
  return out;
}

inline PreparedCohort prepare_cohort(Cohort cohort, const EncodingSpec& enc,
                                     std::shared_ptr<const EmbeddingTable> table = nullptr) {
  std::vector<Repertoire> reps;
  for (const auto& m : cohort.metas()) reps.push_back(read_repertoire_file(cohort.path_of(m), m.sample_id));
  return prepare_repertoires(std::move(cohort), std::move(reps), enc, std::move(table));
}

inline EmbeddingSource embedding_source(const PreparedCohort& pc, const EncodingSpec& enc) {
  if (pc.table) return EmbeddingSource::from(*pc.table, enc.fallback);
  return EmbeddingSource::fallback(enc.embedding_dim);
}

inline std::optional<double> covariate_value(const SampleMeta& m, const std::string& name) {
  if (name == "c3") return m.c3;
  if (name == "c4") return m.c4;
  if (name == "age") return m.age ? std::optional<double>(*m.age) : std::nullopt;
  if (name == "sledai") return m.sledai ? std::optional<double>(*m.sledai) : std::nullopt;
  throw ConfigError("unknown covariate '" + name + "' (expected c3, c4, age or sledai)");
}

// z-score statistics from the given samples only.
inline CovariateSpec fit_covariates(const Cohort& cohort, std::span<const std::size_t> indices,
                                    const std::vector<std::string>& names) {
  CovariateSpec spec{names, {}, {}};
  for (const auto& name : names) {
    double sum = 0, sq = 0;
    std::string missing;
    for (std::size_t i : indices) {
      const auto v = covariate_value(cohort.metas()[i], name);
      if (!v) {
        missing += (missing.empty() ? "" : ", ") + cohort.metas()[i].sample_id;
        continue;
      }
      sum += *v;
      sq += *v * *v;
    }
    if (!missing.empty()) throw Error("covariate '" + name + "' missing for: " + missing);
    const double n = static_cast<double>(indices.size());
    const double mean = n > 0 ? sum / n : 0.0;
    const double var = n > 0 ? std::max(0.0, sq / n - mean * mean) : 0.0;
    spec.mean.push_back(mean);
    spec.scale.push_back(var > 0 ? std::sqrt(var) : 1.0);
  }
  return spec;
}

template <typename T>
std::vector<T> standardized_covariates(const SampleMeta& m, const CovariateSpec& spec) {
  std::vector<T> out;
  for (std::size_t q = 0; q < spec.names.size(); ++q) {
    const auto v = covariate_value(m, spec.names[q]);
    if (!v) throw Error("covariate '" + spec.names[q] + "' missing for sample '" + m.sample_id + "'");
    out.push_back(static_cast<T>((*v - spec.mean[q]) / spec.scale[q]));
  }
  return out;
}

template <typename T>
struct EncodedBag {
  TrainingBag<T> bag;
  std::vector<InstanceRef> refs;
};

template <typename T>
EncodedBag<T> encode_sample(const PreparedCohort& pc, std::size_t i, const VGeneVocab& vocab, const CovariateSpec& cov,
                            const EncodingSpec& enc, Strictness genes, std::size_t n_locations) {
  const auto& meta = pc.cohort.metas()[i];
  InstanceMatrix im = fuse_encode(pc.selected[i], vocab, embedding_source(pc, enc), genes);
  EncodedBag<T> out;
  out.bag.sample_id = meta.sample_id;
  if constexpr (std::is_same_v<T, float>) {
    out.bag.x = std::move(im.features);
  } else {
    out.bag.x = im.features.template cast<T>();
  }
  out.bag.label = static_cast<std::size_t>(meta.label);
  out.bag.covariates = standardized_covariates<T>(meta, cov);
  if (n_locations > 0 && meta.location) out.bag.location = static_cast<std::size_t>(*meta.location);
  out.refs = std::move(im.refs);
  return out;
}

inline ModelConfig resolve_model_config(const PipelineConfig& cfg, std::size_t n_classes) {
  ModelConfig m = cfg.model;
  m.input_dim = cfg.encoding.gene_slots + cfg.encoding.embedding_dim;
  m.n_classes = std::max<std::size_t>(2, n_classes);
  m.covariate_dim = cfg.covariates.size();
  m.validate();
  return m;
}

template <typename T>
struct FoldModel {
  Trainer<T> trainer;
  VGeneVocab vocab;
  CovariateSpec covariates;
};

// Fits a model on `train` only: vocabulary, covariate statistics and
// parameters never see other samples.
template <typename T>
FoldModel<T> train_model(const PreparedCohort& pc, std::span<const std::size_t> train, const PipelineConfig& cfg,
                         std::uint64_t seed, std::size_t n_classes) {
  std::vector<Repertoire> reps;
  for (std::size_t i : train) reps.push_back(pc.selected[i]);
  VGeneVocab vocab = build_vocab(reps, cfg.encoding.gene_slots);
  CovariateSpec cov = fit_covariates(pc.cohort, train, cfg.covariates);
  const ModelConfig mcfg = resolve_model_config(cfg, n_classes);
  std::vector<TrainingBag<T>> bags;
  for (std::size_t i : train)
    bags.push_back(encode_sample<T>(pc, i, vocab, cov, cfg.encoding, Strictness::strict, mcfg.n_locations).bag);
  TrainConfig tcfg = cfg.train;
  tcfg.seed = seed;
  FoldModel<T> fm{Trainer<T>(mcfg, cfg.loss, tcfg), std::move(vocab), std::move(cov)};
  fm.trainer.fit(bags);
  return fm;
}

struct SampleScore {
  std::string sample_id;
  int true_label = 0;
  std::size_t fold = 0;
  std::vector<double> probs;
};

template <typename T>
struct Prediction {
  std::vector<SampleScore> scores;
  std::vector<BagSelection> attended;  // top attended cdr3s on the label branch
};

template <typename T>
Prediction<T> predict_samples(const ModelParams<T>& params, const ModelConfig& mcfg, const VGeneVocab& vocab,
                              const CovariateSpec& cov, const PreparedCohort& pc, std::span<const std::size_t> indices,
                              const EncodingSpec& enc, std::size_t top_k, std::size_t fold = 0) {
  Prediction<T> out;
  for (std::size_t i : indices) {
    const auto eb = encode_sample<T>(pc, i, vocab, cov, enc, Strictness::lenient, mcfg.n_locations);
    const auto bag = forward(eb.bag.x, params, mcfg, Mode::eval, nullptr, std::span<const T>(eb.bag.covariates));
    SampleScore s{eb.bag.sample_id, pc.cohort.metas()[i].label, fold, {}};
    for (T p : bag.class_probs) s.probs.push_back(static_cast<double>(p));
    out.scores.push_back(std::move(s));
    const std::size_t branch = std::min<std::size_t>(eb.bag.label, mcfg.n_classes - 1);
    BagSelection sel{eb.bag.sample_id, {}};
    for (std::size_t k : select_topk_instances<T>(bag.attention.weights.row(branch), top_k)) sel.cdr3.push_back(eb.refs[k].cdr3_aa);
    out.attended.push_back(std::move(sel));
  }
  return out;
}

struct EvalReport {
  std::size_t n_classes = 0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<MetricRow> folds;
  MetricRow mean;    // fold means
  MetricRow pooled;  // all held-out predictions together
  std::vector<SampleScore> samples;
};

inline MetricRow fold_mean(const std::vector<MetricRow>& rows) {
  MetricRow m;
  if (rows.empty()) return m;
  m.confusion = rows[0].confusion;
  for (auto& r : m.confusion) std::fill(r.begin(), r.end(), 0);
  for (const auto& r : rows) {
    m.acc += r.acc;
    m.auc += r.auc;
    m.precision += r.precision;
    m.recall += r.recall;
    m.f1 += r.f1;
    m.count += r.count;
    for (std::size_t a = 0; a < r.confusion.size(); ++a)
      for (std::size_t b = 0; b < r.confusion[a].size(); ++b) m.confusion[a][b] += r.confusion[a][b];
  }
  const double n = static_cast<double>(rows.size());
  m.acc /= n;
  m.auc /= n;
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  return m;
}

inline MetricRow score_metrics(const std::vector<SampleScore>& scores, std::size_t n_classes) {
  std::vector<std::vector<double>> probs;
  std::vector<int> labels;
  for (const auto& s : scores) {
    probs.push_back(s.probs);
    labels.push_back(s.true_label);
  }
  return metrics_suite(probs, labels, n_classes);
}

struct CvResult {
  EvalReport report;
  std::vector<BagSelection> attended;
};

inline std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("REPMIL_THREADS")) {
    if (auto v = detail::parse_int<std::size_t>(env); v && *v > 0) n = *v;
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

// Seed of fold f's training run.
inline std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) {
  return CounterRng(seed).split(0xf01d0000ULL + fold).key();
}

template <typename T>
CvResult run_cv_as(const PreparedCohort& pc, const PipelineConfig& cfg, const FoldPlan& plan) {
  const std::size_t n_classes = std::max<std::size_t>(2, static_cast<std::size_t>(pc.cohort.n_classes()));
  std::vector<Prediction<T>> per_fold(plan.folds.size());
  std::vector<std::exception_ptr> errors(plan.folds.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t f; (f = next.fetch_add(1)) < plan.folds.size();) {
      try {
        const auto train = plan.train_indices(f);
        auto fm = train_model<T>(pc, train, cfg, fold_seed(plan.seed, f), n_classes);
        per_fold[f] = predict_samples<T>(fm.trainer.params(), fm.trainer.model_config(), fm.vocab, fm.covariates, pc,
                                         plan.folds[f], cfg.encoding, cfg.top_instances, f);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const std::size_t workers = worker_count(plan.folds.size());
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  CvResult res;
  res.report.n_classes = n_classes;
  res.report.k = plan.k;
  res.report.seed = plan.seed;
  for (auto& p : per_fold) {
    res.report.folds.push_back(score_metrics(p.scores, n_classes));
    res.report.samples.insert(res.report.samples.end(), p.scores.begin(), p.scores.end());
    res.attended.insert(res.attended.end(), p.attended.begin(), p.attended.end());
  }
  res.report.mean = fold_mean(res.report.folds);
  res.report.pooled = score_metrics(res.report.samples, n_classes);
  return res;
}

inline CvResult run_cv(const PreparedCohort& pc, const PipelineConfig& cfg, std::optional<FoldPlan> plan = std::nullopt) {
  if (!plan) plan = stratified_kfold(pc.cohort.labels(), cfg.folds, cfg.train.seed);
  return cfg.train.precision == Precision::wide ? run_cv_as<double>(pc, cfg, *plan) : run_cv_as<float>(pc, cfg, *plan);
}

// Trains on every sample and packages the result.
inline Checkpoint train_checkpoint(const PreparedCohort& pc, const PipelineConfig& cfg) {
  std::vector<std::size_t> all(pc.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const std::size_t n_classes = std::max<std::size_t>(2, static_cast<std::size_t>(pc.cohort.n_classes()));
  auto pack = [&](auto fm) {
    Checkpoint ck;
    ck.model = fm.trainer.model_config();
    ck.params = fm.trainer.params().template cast<float>();
    ck.vocab = fm.vocab;
    ck.encoding = cfg.encoding;
    ck.covariates = fm.covariates;
    ck.loss = cfg.loss;
    ck.epoch = fm.trainer.epoch();
    ck.seed = cfg.train.seed;
    ck.loss_history = fm.trainer.history();
    return ck;
  };
  if (cfg.train.precision == Precision::wide) return pack(train_model<double>(pc, all, cfg, cfg.train.seed, n_classes));
  return pack(train_model<float>(pc, all, cfg, cfg.train.seed, n_classes));
}

// Scores a cohort with a trained checkpoint (single evaluation "fold").
inline CvResult evaluate_checkpoint(const Checkpoint& ck, const PreparedCohort& pc, std::size_t top_k = 8) {
  std::vector<std::size_t> all(pc.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (const auto& m : pc.cohort.metas())
    if (static_cast<std::size_t>(m.label) >= ck.model.n_classes)
      throw Error("sample '" + m.sample_id + "' has label " + std::to_string(m.label) + " outside the model's classes");
  auto pred = predict_samples<float>(ck.params, ck.model, ck.vocab, ck.covariates, pc, all, ck.encoding, top_k);
  CvResult res;
  res.report.n_classes = ck.model.n_classes;
  res.report.k = 1;
  res.report.seed = ck.seed;
  res.report.samples = std::move(pred.scores);
  res.report.folds.push_back(score_metrics(res.report.samples, ck.model.n_classes));
  res.report.mean = res.report.folds[0];
  res.report.pooled = res.report.folds[0];
  res.attended = std::move(pred.attended);
  return res;
}

}  // namespace repmil
