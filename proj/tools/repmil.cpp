// repmil: command-line entry point.
//
// Exit codes: 0 success, 1 invalid input or failed run, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "repmil/config.hpp"
#include "repmil/experiments.hpp"
#include "repmil/interpret.hpp"
#include "repmil/pipeline.hpp"
#include "repmil/report.hpp"
#include "repmil/synthgen.hpp"

namespace fs = std::filesystem;
using namespace repmil;

namespace {

// A flag bound to a config key. Value flags carry text; switches carry a
// fixed JSON value.
struct Binding {
  CLI::Option* opt = nullptr;
  std::string flag;
  std::string key;
  std::string text;
  RunConfig::json value;
  bool is_switch = false;
};

// Failure attributable to a specific flag; the message leads with it.
struct FlagError : Error {
  FlagError(const std::string& flag, const std::string& what) : Error(flag + ": " + what) {}
};

class Command {
 public:
  Command(CLI::App* app, std::string default_out) : app_(app), default_out_(std::move(default_out)) {
    app_->add_option("--config", config_path_, "JSON file of dotted config keys; flags override it");
  }

  CLI::App* app() const { return app_; }

  void option(const std::string& flag, const std::string& key, const std::string& help) {
    auto b = std::make_unique<Binding>();
    b->flag = flag;
    b->key = key;
    b->opt = app_->add_option(flag, b->text, help + " [" + key + "]");
    bindings_.push_back(std::move(b));
  }

  void toggle(const std::string& flag, const std::string& key, RunConfig::json value, const std::string& help) {
    auto b = std::make_unique<Binding>();
    b->flag = flag;
    b->key = key;
    b->value = std::move(value);
    b->is_switch = true;
    b->opt = app_->add_flag(flag)->description(help + " [" + key + "]");
    bindings_.push_back(std::move(b));
  }

  // Defaults, then the config file, then explicit flags.
  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path_.empty()) {
      if (!fs::exists(config_path_)) throw FlagError("--config", "file not found '" + config_path_ + "'");
      cfg.load_file(config_path_);
    }
    for (const auto& b : bindings_) {
      if (b->opt->count() == 0) continue;
      if (b->is_switch) {
        cfg.set(b->key, b->value, b->flag);
      } else {
        cfg.set_text(b->key, b->text, b->flag);
      }
    }
    if (cfg.str("io.out").empty()) cfg.set("io.out", default_out_, "default");
    return cfg;
  }

  std::string flag_for(const std::string& key) const {
    for (const auto& b : bindings_)
      if (b->key == key) return b->flag;
    return key;
  }

  std::function<int(const Command&, const RunConfig&)> run;

 private:
  CLI::App* app_;
  std::string default_out_;
  std::string config_path_;
  std::vector<std::unique_ptr<Binding>> bindings_;
};

void add_manifest(Command& c) { c.option("--manifest", "io.manifest", "cohort manifest CSV"); }

void add_encoding(Command& c) {
  c.option("--m", "selection.m", "instances kept per sample");
  c.option("--embeddings", "encoding.embeddings", "EAM1 embedding table");
  c.toggle("--fallback-embed", "encoding.fallback", true, "use the built-in hashed 3-mer embedder for missing sequences");
  c.option("--gene-slots", "encoding.gene_slots", "one-hot V-gene capacity");
  c.option("--embedding-dim", "encoding.embedding_dim", "embedding width");
}

void add_training(Command& c) {
  c.option("--covariates", "covariates", "comma-separated clinical covariates (c3, c4, age, sledai)");
  c.option("--epochs", "train.epochs", "training epochs");
  c.option("--seed", "train.seed", "random seed");
  c.option("--lr", "train.lr", "Adam learning rate");
  c.option("--weight-decay", "train.weight_decay", "decoupled weight decay");
  c.option("--precision", "train.precision", "standard (float) or wide (double)");
  c.option("--hidden-dim", "model.hidden_dim", "attention hidden width (even)");
  c.option("--lambda", "model.lambda", "weight of the spatial attention branch");
  c.option("--dropout", "model.dropout", "dropout rate");
  c.option("--n-locations", "model.n_locations", "location classes (0 disables the head)");
  c.option("--c1", "loss.c1", "sample-loss weight");
  c.option("--topk", "loss.k", "instances pseudo-labelled per branch");
  c.option("--tau", "loss.tau", "smooth-SVM temperature");
  c.toggle("--no-bottom-k", "loss.use_bottom_k_negatives", false, "skip bottom-k negatives on the true branch");
  c.toggle("--positives-only", "loss.positives_only", true, "pseudo-label only the true branch's top-k");
  c.option("--loc-weight", "loss.loc_weight", "location-loss weight");
}

void add_eval(Command& c) {
  c.option("--top-instances", "eval.top_instances", "attended instances reported per sample");
  c.option("--class-names", "eval.class_names", "comma-separated names for labels 0, 1, ...");
  c.option("--ground-truth", "io.ground_truth", "synthetic ground-truth JSON; adds witness recovery");
}

void add_out(Command& c, const std::string& what) { c.option("--out", "io.out", what); }

// --- shared steps ---------------------------------------------------------

fs::path require_file(const Command& cmd, const RunConfig& cfg, const std::string& key) {
  const std::string flag = cmd.flag_for(key);
  const std::string p = cfg.str(key);
  if (p.empty()) throw FlagError(flag, "required");
  if (!fs::is_regular_file(p)) throw FlagError(flag, "file not found '" + p + "'");
  return p;
}

Cohort load_cohort(const Command& cmd, const RunConfig& cfg) {
  const auto path = require_file(cmd, cfg, "io.manifest");
  try {
    return load_manifest_file(path);
  } catch (const ParseError& e) {
    throw FlagError(cmd.flag_for("io.manifest"), path.string() + ": " + e.what());
  }
}

PipelineConfig pipeline_config(const Command& cmd, const RunConfig& cfg) {
  PipelineConfig p = cfg.pipeline();
  if (!p.encoding.embeddings_path.empty()) require_file(cmd, cfg, "encoding.embeddings");
  if (p.encoding.embeddings_path.empty() && !p.encoding.fallback)
    throw FlagError("--embeddings", "required unless --fallback-embed is given");
  return p;
}

std::vector<std::string> class_names(const RunConfig& cfg) { return RunConfig::split_list(cfg.str("eval.class_names")); }

// Out directory with the resolved config beside the results.
fs::path prepare_out_dir(const RunConfig& cfg) {
  const fs::path dir = cfg.str("io.out");
  fs::create_directories(dir);
  cfg.write_resolved(dir / "resolved_config.json");
  return dir;
}

ReportExtras extras_for(const Command& cmd, const RunConfig& cfg, const std::vector<BagSelection>& attended) {
  ReportExtras ex;
  ex.class_names = class_names(cfg);
  if (!cfg.str("io.ground_truth").empty()) {
    const auto path = require_file(cmd, cfg, "io.ground_truth");
    const auto gt = ground_truth_from_json(nlohmann::json::parse(read_text_file(path)));
    ex.witness_recovery = score_witness_recovery(attended, gt);
  }
  return ex;
}

void print_summary(const std::string& what, const EvalReport& r, const ReportExtras& ex) {
  std::printf("%s: n=%zu acc %s auc %s precision %s recall %s f1 %s", what.c_str(), r.samples.size(),
              detail::fixed2(r.mean.acc).c_str(), detail::fixed2(r.mean.auc).c_str(),
              detail::fixed2(r.mean.precision).c_str(), detail::fixed2(r.mean.recall).c_str(),
              detail::fixed2(r.mean.f1).c_str());
  if (ex.witness_recovery) std::printf(" witness_recovery %.4f", *ex.witness_recovery);
  std::printf("\n");
}

int cross_validate(const Command& cmd, const RunConfig& cfg, Cohort cohort, std::vector<std::string> notes = {}) {
  const PipelineConfig p = pipeline_config(cmd, cfg);
  const auto pc = prepare_cohort(std::move(cohort), p.encoding);
  const auto res = run_cv(pc, p);
  const fs::path dir = prepare_out_dir(cfg);
  auto ex = extras_for(cmd, cfg, res.attended);
  ex.notes = std::move(notes);
  write_report(dir, res.report, ex);
  print_summary("cv (k=" + std::to_string(res.report.k) + ")", res.report, ex);
  return 0;
}

Checkpoint load_model(const Command& cmd, const RunConfig& cfg) {
  const auto path = require_file(cmd, cfg, "io.model");
  try {
    return load_checkpoint(path);
  } catch (const FormatError& e) {
    throw FlagError(cmd.flag_for("io.model"), e.what());
  }
}

// The checkpoint fixes the encoding; an explicit embedding table may stand
// in for a moved file.
PreparedCohort prepare_for_model(const Command& cmd, const RunConfig& cfg, Checkpoint& ck, Cohort cohort) {
  if (!cfg.str("encoding.embeddings").empty())
    ck.encoding.embeddings_path = require_file(cmd, cfg, "encoding.embeddings").string();
  if (cfg.flag("encoding.fallback")) ck.encoding.fallback = true;
  if (!ck.encoding.embeddings_path.empty() && !fs::is_regular_file(ck.encoding.embeddings_path))
    throw FlagError("--embeddings", "model's embedding table '" + ck.encoding.embeddings_path + "' not found; pass --embeddings");
  return prepare_cohort(std::move(cohort), ck.encoding);
}

// --- subcommands ----------------------------------------------------------

int cmd_validate(const Command& cmd, const RunConfig& cfg) {
  const Cohort cohort = load_cohort(cmd, cfg);
  const auto problems = validate_cohort(cohort);
  if (!problems.empty()) {
    std::string msg = problems.front();
    if (problems.size() > 1) msg += " (and " + std::to_string(problems.size() - 1) + " more)";
    throw Error(msg);
  }
  std::string counts;
  for (const auto& [c, n] : cohort.class_counts()) counts += (counts.empty() ? "" : " ") + std::to_string(c) + ":" + std::to_string(n);
  std::printf("ok: %zu samples, classes {%s}\n", cohort.size(), counts.c_str());
  return 0;
}

int cmd_primeseq(const Command& cmd, const RunConfig& cfg) {
  const Cohort cohort = load_cohort(cmd, cfg);
  const SelectionConfig sel{cfg.size("selection.m"), PadPolicy::no_pad};
  if (sel.m == 0) throw FlagError("--m", "must be >= 1");
  const fs::path dir = prepare_out_dir(cfg);
  fs::create_directories(dir / "repertoires");
  std::vector<SampleMeta> metas;
  for (const auto& m : cohort.metas()) {
    const auto rep = select_top_m(derive_frequencies(read_repertoire_file(cohort.path_of(m), m.sample_id)), sel);
    SampleMeta out = m;
    out.path = "repertoires/" + m.sample_id + ".tsv";
    write_repertoire_file(dir / out.path, rep);
    metas.push_back(std::move(out));
  }
  write_manifest_file(dir / "manifest.csv", Cohort(std::move(metas)));
  std::printf("selected top %zu sequences for %zu samples into %s\n", sel.m, cohort.size(), dir.string().c_str());
  return 0;
}

int cmd_encode(const Command& cmd, const RunConfig& cfg) {
  const PipelineConfig p = pipeline_config(cmd, cfg);
  const auto pc = prepare_cohort(load_cohort(cmd, cfg), p.encoding);
  const auto vocab = build_vocab(pc.selected, p.encoding.gene_slots);
  const auto source = embedding_source(pc, p.encoding);
  const fs::path dir = prepare_out_dir(cfg);
  for (const auto& rep : pc.selected) encode_cache_write(fuse_encode(rep, vocab, source), dir / (rep.sample_id + ".eamx"));
  std::string genes;
  for (const auto& g : vocab.genes()) genes += g + '\n';
  detail::write_text(dir / "vocab.txt", genes);
  std::printf("encoded %zu samples (%zu V genes) into %s\n", pc.size(), vocab.size(), dir.string().c_str());
  return 0;
}

int cmd_train(const Command& cmd, const RunConfig& cfg) {
  const PipelineConfig p = pipeline_config(cmd, cfg);
  const auto pc = prepare_cohort(load_cohort(cmd, cfg), p.encoding);
  const auto ck = train_checkpoint(pc, p);
  fs::path out = cfg.str("io.out");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, ck);
  fs::path resolved = out;
  resolved.replace_extension(".resolved_config.json");
  cfg.write_resolved(resolved);
  const auto& last = ck.loss_history.back();
  std::printf("trained %zu epochs on %zu samples, final loss %.6f -> %s\n", ck.epoch, pc.size(), last.total, out.string().c_str());
  return 0;
}

int cmd_eval(const Command& cmd, const RunConfig& cfg) {
  Checkpoint ck = load_model(cmd, cfg);
  const auto pc = prepare_for_model(cmd, cfg, ck, load_cohort(cmd, cfg));
  const auto res = evaluate_checkpoint(ck, pc, cfg.size("eval.top_instances"));
  const fs::path dir = prepare_out_dir(cfg);
  const auto ex = extras_for(cmd, cfg, res.attended);
  write_report(dir, res.report, ex);
  print_summary("eval", res.report, ex);
  return 0;
}

int cmd_cv(const Command& cmd, const RunConfig& cfg) { return cross_validate(cmd, cfg, load_cohort(cmd, cfg)); }

int resolve_target(const RunConfig& cfg) {
  const std::string t = cfg.str("experiment.target");
  if (t.empty()) throw FlagError("--target", "required");
  if (auto v = detail::parse_int<int>(t); v && *v >= 0) return *v;
  const auto names = class_names(cfg);
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == t) return static_cast<int>(i);
  throw FlagError("--target", "'" + t + "' is neither a class index nor listed in --class-names");
}

int cmd_one_vs_others(const Command& cmd, const RunConfig& cfg) {
  const int target = resolve_target(cfg);
  Cohort cohort = relabel_one_vs_others(load_cohort(cmd, cfg), target);
  return cross_validate(cmd, cfg, std::move(cohort), {"one-vs-others, target class " + std::to_string(target)});
}

int cmd_strata(const Command& cmd, const RunConfig& cfg) {
  const std::string filter = cfg.str("experiment.filter");
  if (filter.empty()) throw FlagError("--filter", "required");
  Predicate pred;
  try {
    pred = Predicate::parse(filter);
  } catch (const ConfigError& e) {
    throw FlagError("--filter", e.what());
  }
  auto res = subset_filter(load_cohort(cmd, cfg), pred);
  if (res.warning) {
    std::fprintf(stderr, "warning: %s\n", res.warning->c_str());
    prepare_out_dir(cfg);
    return 0;
  }
  std::printf("filter kept %zu samples\n", res.cohort.size());
  return cross_validate(cmd, cfg, std::move(res.cohort), {"filter: " + filter});
}

int cmd_damage(const Command& cmd, const RunConfig& cfg) {
  const std::string site = cfg.str("experiment.site");
  if (site.empty()) throw FlagError("--site", "required");
  DamageSite s;
  try {
    s = parse_damage_site(site);
  } catch (const ConfigError& e) {
    throw FlagError("--site", e.what());
  }
  return cross_validate(cmd, cfg, relabel_damage(load_cohort(cmd, cfg), s), {"organ damage: " + site});
}

int cmd_explain(const Command& cmd, const RunConfig& cfg) {
  Checkpoint ck = load_model(cmd, cfg);
  const auto pc = prepare_for_model(cmd, cfg, ck, load_cohort(cmd, cfg));
  const std::string branch = cfg.str("explain.branch");
  AttentionAccumulator acc;
  if (branch == "all") {
    for (std::size_t c = 0; c < ck.model.n_classes; ++c) acc.merge(aggregate_attention(ck, pc, c));
  } else {
    const auto b = detail::parse_int<std::size_t>(branch);
    if (!b || *b >= ck.model.n_classes)
      throw FlagError("--branch", "expected a class index below " + std::to_string(ck.model.n_classes) + " or 'all'");
    acc = aggregate_attention(ck, pc, *b, static_cast<int>(*b));
  }
  if (acc.bags() == 0) throw FlagError("--branch", "no samples carry label " + branch);
  const auto ranking = acc.ranking();
  const std::size_t top = cfg.size("explain.top");
  const fs::path dir = prepare_out_dir(cfg);
  detail::write_text(dir / "sequences.csv", ranking_csv(ranking, top));
  detail::write_text(dir / "genes.csv", gene_ranking_csv(ranking, top));
  detail::write_text(dir / "ranking.json", to_json(ranking, top).dump(2) + '\n');
  if (cfg.flag("explain.pooled_features")) export_pooled_features(ck, pc, dir / "pooled_features.csv");
  std::printf("ranked %zu sequences and %zu V genes over %zu samples into %s\n", ranking.sequences.size(), ranking.genes.size(),
              acc.bags(), dir.string().c_str());
  return 0;
}

int cmd_synth(const Command&, const RunConfig& cfg) {
  const SynthConfig sc = cfg.synth();
  const auto cohort = generate_cohort(sc);
  const fs::path dir = prepare_out_dir(cfg);
  write_synth_cohort(cohort, dir);
  std::size_t planted = 0;
  for (const auto& b : cohort.truth.bags) planted += b.witness_indices.size();
  std::printf("wrote %zu bags (%zu planted witnesses) into %s\n", cohort.cohort.size(), planted, dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"repmil: multiple-instance learning on immune repertoires"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "expand help for every subcommand");

  std::vector<std::unique_ptr<Command>> commands;
  auto make = [&](CLI::App* parent, const std::string& name, const std::string& help, const std::string& out,
                  int (*fn)(const Command&, const RunConfig&)) -> Command& {
    commands.push_back(std::make_unique<Command>(parent->add_subcommand(name, help), out));
    commands.back()->run = fn;
    return *commands.back();
  };

  {
    auto& c = make(&app, "validate", "lint a cohort manifest and its repertoire files", "", cmd_validate);
    add_manifest(c);
  }
  {
    auto& c = make(&app, "primeseq", "keep the top-M most frequent sequences per sample", "primeseq_out", cmd_primeseq);
    add_manifest(c);
    c.option("--m", "selection.m", "instances kept per sample");
    add_out(c, "output directory");
  }
  {
    auto& c = make(&app, "encode", "write per-sample EAMX feature matrices", "encode_out", cmd_encode);
    add_manifest(c);
    add_encoding(c);
    add_out(c, "output directory");
  }
  {
    auto& c = make(&app, "train", "train on a whole cohort and save a checkpoint", "model.eamc", cmd_train);
    add_manifest(c);
    add_encoding(c);
    add_training(c);
    add_out(c, "checkpoint path");
  }
  {
    auto& c = make(&app, "eval", "score a cohort with a trained checkpoint", "eval_out", cmd_eval);
    add_manifest(c);
    c.option("--model", "io.model", "EAMC checkpoint");
    c.option("--embeddings", "encoding.embeddings", "EAM1 embedding table (overrides the checkpoint's path)");
    c.toggle("--fallback-embed", "encoding.fallback", true, "embed missing sequences with the built-in embedder");
    add_eval(c);
    add_out(c, "output directory");
  }
  auto add_cv = [&](Command& c) {
    add_manifest(c);
    add_encoding(c);
    add_training(c);
    c.option("--k", "eval.k", "number of folds");
    add_eval(c);
    add_out(c, "output directory");
  };
  {
    auto& c = make(&app, "cv", "stratified k-fold cross-validation", "cv_out", cmd_cv);
    add_cv(c);
  }
  {
    CLI::App* exp = app.add_subcommand("experiment", "cross-validated task variants");
    exp->require_subcommand(1);
    auto& ovo = make(exp, "one-vs-others", "target class against everything else", "experiment_out", cmd_one_vs_others);
    add_cv(ovo);
    ovo.option("--target", "experiment.target", "class index, or a name from --class-names");
    auto& strata = make(exp, "strata", "restrict the cohort with a metadata filter", "experiment_out", cmd_strata);
    add_cv(strata);
    strata.option("--filter", "experiment.filter", "clauses such as \"sledai<=4 && sex=female\"");
    auto& damage = make(exp, "damage", "organ-damage status as the label", "experiment_out", cmd_damage);
    add_cv(damage);
    damage.option("--site", "experiment.site", "blood, kidney or joint");
  }
  {
    auto& c = make(&app, "explain", "rank sequences and V genes by cumulative attention", "explain_out", cmd_explain);
    add_manifest(c);
    c.option("--model", "io.model", "EAMC checkpoint");
    c.option("--embeddings", "encoding.embeddings", "EAM1 embedding table (overrides the checkpoint's path)");
    c.toggle("--fallback-embed", "encoding.fallback", true, "embed missing sequences with the built-in embedder");
    c.option("--top", "explain.top", "entries written per ranking");
    c.option("--branch", "explain.branch", "class branch (samples of that class), or 'all'");
    c.toggle("--pooled-features", "explain.pooled_features", true, "also export pooled per-class features");
    add_out(c, "output directory");
  }
  {
    auto& c = make(&app, "synth", "generate a synthetic cohort with planted witnesses", "synth_out", cmd_synth);
    c.option("--positives", "synth.positives", "positive bags");
    c.option("--negatives", "synth.negatives", "negative bags");
    c.option("--instances", "synth.instances", "instances per bag");
    c.option("--wr", "synth.wr", "witness rate");
    c.option("--seed", "synth.seed", "random seed");
    c.option("--motifs", "synth.motifs", "comma-separated witness motifs");
    c.option("--min-length", "synth.min_length", "shortest background CDR3");
    c.option("--max-length", "synth.max_length", "longest background CDR3");
    c.option("--zipf", "synth.zipf", "clone-size Zipf exponent");
    add_out(c, "output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << " (see --help)\n";
    return 2;
  }

  for (const auto& c : commands) {
    if (!c->app()->parsed()) continue;
    try {
      return c->run(*c, c->resolve());
    } catch (const std::exception& e) {
      std::string msg = e.what();
      for (auto& ch : msg)
        if (ch == '\n') ch = ' ';
      std::cerr << "error: " << msg << '\n';
      return 1;
    }
  }
  return 2;
}
