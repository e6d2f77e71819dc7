#include "minibert/cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "minibert/checkpoint.hpp"
#include "minibert/config.hpp"
#include "minibert/data.hpp"
#include "minibert/errors.hpp"
#include "minibert/experiments.hpp"
#include "minibert/train.hpp"

namespace minibert {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string checkpoint;
};

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot write " + path.string());
  f << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

bool is_within(const fs::path& child, const fs::path& parent) {
  const auto c = fs::weakly_canonical(child);
  const auto p = fs::weakly_canonical(parent);
  auto ci = c.begin();
  for (auto pi = p.begin(); pi != p.end(); ++pi, ++ci) {
    if (pi->empty()) continue;
    if (ci == c.end() || *ci != *pi) return false;
  }
  return true;
}

// Refuses an output directory inside any input data directory.
void check_output_dir(const fs::path& out, const DataPaths& data) {
  std::vector<fs::path> inputs;
  for (const auto* dir : {&data.corpus, &data.domain_corpus})
    if (!dir->empty()) inputs.emplace_back(*dir);
  for (const auto* file : {&data.phrasebank, &data.fiqa, &data.keywords})
    if (!file->empty()) inputs.push_back(fs::path(*file).parent_path().empty() ? fs::path(".") : fs::path(*file).parent_path());
  for (const auto& in : inputs) {
    if (is_within(out, in)) {
      throw InputError("output directory " + out.string() + " lies inside input data directory " + in.string());
    }
  }
  fs::create_directories(out);
}

struct Loaded {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  json config_json;
  std::string config_hash;
};

Loaded load(const CommonArgs& args) {
  Loaded l;
  l.config = load_config(args.config);
  if (args.seed) l.config.seeds = {*args.seed};
  l.seed = l.config.seeds.front();
  l.config_json = to_json(l.config);
  l.config_hash = config_hash(l.config_json);
  return l;
}

fs::path require_file(const std::string& path, const char* what) {
  if (path.empty()) throw InputError(std::string("config does not name a ") + what);
  if (!fs::is_regular_file(path)) throw InputError(std::string(what) + " not found: " + path);
  return path;
}

std::vector<Document> load_documents(const std::string& dir, const std::string& keywords, json& report) {
  if (dir.empty()) throw InputError("config does not name a corpus directory");
  auto docs = load_corpus(dir);
  if (docs.empty()) throw InputError("corpus directory is empty: " + dir);
  if (!keywords.empty()) {
    const auto words = load_keywords(require_file(keywords, "keyword file"));
    auto filtered = filter_corpus(docs, words);
    report["kept_documents"] = filtered.kept_count;
    report["total_documents"] = filtered.total_count;
    docs = std::move(filtered.kept);
    if (docs.empty()) throw InputError("no corpus document contains a keyword");
  } else {
    report["kept_documents"] = docs.size();
    report["total_documents"] = docs.size();
  }
  return docs;
}

std::size_t vocab_budget(const ExperimentConfig& c) {
  return c.vocab_size_cap ? std::min<std::size_t>(c.vocab_size_cap, static_cast<std::size_t>(c.model.vocab_size))
                          : static_cast<std::size_t>(c.model.vocab_size);
}

struct Start {
  ModelParams params;
  std::optional<Vocabulary> vocab;
  std::string parent_hash;
  json lineage = json::array();
};

// Parent checkpoint when given, random init otherwise.
Start starting_point(const CommonArgs& args, const ExperimentConfig& config, std::uint64_t seed) {
  Start s;
  if (!args.checkpoint.empty()) {
    if (!fs::is_regular_file(args.checkpoint)) throw InputError("checkpoint not found: " + args.checkpoint);
    auto ckpt = load_checkpoint(args.checkpoint, config.model);
    s.params = std::move(ckpt.params);
    s.vocab = std::move(ckpt.vocab);
    s.parent_hash = checkpoint_hash(args.checkpoint);
    s.lineage.push_back(s.parent_hash);
    if (!ckpt.provenance.parent_hash.empty()) s.lineage.push_back(ckpt.provenance.parent_hash);
  } else {
    s.params = init_params(config.model, seed);
  }
  return s;
}

json provenance_json(const Loaded& l, const Start& s) {
  return {{"seed", l.seed}, {"config_hash", l.config_hash}, {"parent_hash", s.parent_hash}, {"lineage", s.lineage}};
}

std::string loss_csv(std::span<const double> losses) {
  std::string text = "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) text += std::to_string(i) + "," + num(losses[i]) + "\n";
  return text;
}

json timing_json(const RunRecord& r) { return {{"epoch_seconds", r.epoch_seconds}}; }

void save_run_checkpoint(const fs::path& path, const Start& s, const Loaded& l, const Vocabulary& vocab) {
  Checkpoint ckpt{s.params.clone(), vocab, {l.seed, l.config_hash, s.parent_hash, to_string(l.config.kind)}, {}};
  save_checkpoint(path, ckpt);
}

int cmd_pretrain(const CommonArgs& args, std::ostream& out) {
  const Loaded l = load(args);
  if (l.config.kind != ExperimentKind::pretrain) throw ConfigError("pretrain expects kind 'pretrain'");
  const fs::path out_dir = args.out;
  json report;
  const auto docs = load_documents(l.config.data.corpus, l.config.data.keywords, report);
  check_output_dir(out_dir, l.config.data);
  const auto sentences = sentences_of(docs);
  Start s = starting_point(args, l.config, l.seed);
  const Vocabulary vocab = s.vocab ? *s.vocab : Vocabulary::build(sentences, vocab_budget(l.config));
  PretrainOptions options;
  options.mask_rate = l.config.mask_rate;
  if (l.config.nsp) options.nsp_documents = docs;
  const RunRecord record = pretrain_mlm(s.params, vocab, sentences, l.config.plan, l.config.epochs, l.seed, options);

  save_run_checkpoint(out_dir / "pretrained.mbf", s, l, vocab);
  report["provenance"] = provenance_json(l, s);
  report["config"] = l.config_json;
  report["sentences"] = sentences.size();
  report["run"] = to_json(record);
  write_json(out_dir / "metrics.json", report);
  write_text(out_dir / "loss.csv", loss_csv(record.step_losses));
  write_json(out_dir / "timing.json", timing_json(record));
  out << "pretrained on " << sentences.size() << " sentences from " << report["kept_documents"] << "/"
      << report["total_documents"] << " documents; checkpoint " << (out_dir / "pretrained.mbf").string() << "\n";
  return kExitOk;
}

std::string confusion_csv(const MetricsReport& m) {
  std::string text = "gold\\predicted";
  for (int c = 0; c < kNumSentiments; ++c) text += "," + to_string(static_cast<Sentiment>(c));
  text += "\n";
  for (std::size_t g = 0; g < m.confusion.size(); ++g) {
    text += to_string(static_cast<Sentiment>(g));
    for (auto v : m.confusion[g]) text += "," + std::to_string(v);
    text += "\n";
  }
  return text;
}

int finetune_classification(const CommonArgs& args, const Loaded& l, std::ostream& out) {
  if (l.config.data.phrasebank.empty() && !l.config.data.fiqa.empty()) {
    throw InputError("classification config names a regression dataset (data.fiqa); set data.phrasebank");
  }
  const auto records = load_phrasebank(require_file(l.config.data.phrasebank, "PhraseBank file"));
  const fs::path out_dir = args.out;
  check_output_dir(out_dir, l.config.data);
  const auto splits = split_dataset(records, l.seed, l.config.stratify);
  Start s = starting_point(args, l.config, l.seed);
  const Vocabulary vocab = s.vocab ? *s.vocab : Vocabulary::build(texts_of(splits.train), vocab_budget(l.config));
  const RunRecord record = finetune_classifier(s.params, vocab, splits, l.config.plan, l.config.epochs, l.seed);

  save_run_checkpoint(out_dir / "finetuned.mbf", s, l, vocab);
  json report{{"provenance", provenance_json(l, s)},
              {"config", l.config_json},
              {"split_sizes",
               {{"train", splits.train.size()}, {"validation", splits.validation.size()}, {"test", splits.test.size()}}},
              {"run", to_json(record)}};
  write_json(out_dir / "metrics.json", report);
  std::string val = "epoch,val_loss,val_accuracy\n";
  for (std::size_t e = 0; e < record.val_losses.size(); ++e)
    val += std::to_string(e + 1) + "," + num(record.val_losses[e]) + "," + num(record.val_accuracies[e]) + "\n";
  write_text(out_dir / "valloss.csv", val);
  write_text(out_dir / "loss.csv", loss_csv(record.step_losses));
  if (record.test) write_text(out_dir / "confusion.csv", confusion_csv(*record.test));
  std::string agreement = "agreement,n,accuracy,macro_f1\n";
  for (const auto& [level, m] : record.test_by_agreement)
    agreement += std::to_string(level) + "," + std::to_string(m.n) + "," + num(m.accuracy) + "," + num(m.macro_f1) + "\n";
  write_text(out_dir / "agreement.csv", agreement);
  write_json(out_dir / "timing.json", timing_json(record));
  out << "best epoch " << record.best_epoch << "; test accuracy " << (record.test ? record.test->accuracy : 0.0)
      << ", macro F1 " << (record.test ? record.test->macro_f1 : 0.0) << "\n";
  return kExitOk;
}

int finetune_regression(const CommonArgs& args, const Loaded& l, std::ostream& out) {
  if (l.config.data.fiqa.empty() && !l.config.data.phrasebank.empty()) {
    throw InputError("regression config names a classification dataset (data.phrasebank); set data.fiqa");
  }
  const auto records = parse_fiqa(require_file(l.config.data.fiqa, "FiQA file"));
  const fs::path out_dir = args.out;
  check_output_dir(out_dir, l.config.data);
  const auto folds = kfold_split(records.size(), l.config.folds, l.seed);
  Start s = starting_point(args, l.config, l.seed);
  std::vector<std::string> texts;
  for (const auto& r : records) texts.push_back(r.text);
  const Vocabulary vocab = s.vocab ? *s.vocab : Vocabulary::build(texts, vocab_budget(l.config));
  const auto summary = finetune_regressor(s.params, vocab, records, folds, l.config.plan, l.config.epochs, l.seed);

  json fold_reports = json::array();
  std::string csv = "fold,mse,r2,best_epoch\n";
  std::string val = "fold,epoch,val_loss\n";
  for (std::size_t f = 0; f < summary.folds.size(); ++f) {
    const auto& r = summary.folds[f];
    fold_reports.push_back(to_json(r));
    csv += std::to_string(f + 1) + "," + num(*r.test->mse) + "," + (r.test->r2 ? num(*r.test->r2) : "nan") + "," +
           std::to_string(r.best_epoch) + "\n";
    for (std::size_t e = 0; e < r.val_losses.size(); ++e)
      val += std::to_string(f + 1) + "," + std::to_string(e + 1) + "," + num(r.val_losses[e]) + "\n";
  }
  json report{{"provenance", provenance_json(l, s)},
              {"config", l.config_json},
              {"mean_mse", summary.mean_mse},
              {"mean_r2", summary.mean_r2 ? json(*summary.mean_r2) : json(nullptr)},
              {"r2_undefined", !summary.mean_r2.has_value()},
              {"folds", fold_reports}};
  write_json(out_dir / "metrics.json", report);
  write_text(out_dir / "folds.csv", csv);
  write_text(out_dir / "valloss.csv", val);
  out << summary.folds.size() << " folds; mean MSE " << summary.mean_mse << "\n";
  return kExitOk;
}

int cmd_finetune(const CommonArgs& args, std::ostream& out) {
  const Loaded l = load(args);
  if (l.config.kind == ExperimentKind::finetune_cls) return finetune_classification(args, l, out);
  if (l.config.kind == ExperimentKind::finetune_reg) return finetune_regression(args, l, out);
  throw ConfigError("finetune expects kind 'finetune-cls' or 'finetune-reg', got '" + to_string(l.config.kind) + "'");
}

int cmd_ablate(const CommonArgs& args, std::ostream& out) {
  const Loaded l = load(args);
  if (!is_ablation(l.config.kind)) {
    throw ConfigError("ablate expects an ablation kind (ablate-strategies, ablate-layers, ablate-lastk, "
                      "ablate-pretraining, size-sweep), got '" + to_string(l.config.kind) + "'");
  }
  const auto records = load_phrasebank(require_file(l.config.data.phrasebank, "PhraseBank file"));
  json report;
  std::vector<Document> domain_docs;
  if (l.config.kind == ExperimentKind::ablate_pretraining) {
    domain_docs = load_documents(l.config.data.domain_corpus, l.config.data.keywords, report);
  }
  const auto domain = sentences_of(domain_docs);
  const fs::path out_dir = args.out;
  check_output_dir(out_dir, l.config.data);
  // one split and one parent shared by every cell
  const auto splits = split_dataset(records, l.seed, l.config.stratify);
  Start s = starting_point(args, l.config, l.seed);
  Vocabulary vocab;
  if (s.vocab) {
    vocab = *s.vocab;
  } else {
    auto texts = texts_of(splits.train);
    texts.insert(texts.end(), domain.begin(), domain.end());
    vocab = Vocabulary::build(texts, vocab_budget(l.config));
  }
  GridInputs in{&s.params, &vocab, &splits, l.config.plan, l.config.epochs, l.config.seeds};
  std::vector<GridRow> rows;
  switch (l.config.kind) {
    case ExperimentKind::ablate_strategies: rows = ablate_strategies(in, l.config.presets); break;
    case ExperimentKind::ablate_layers: rows = ablate_layers(in); break;
    case ExperimentKind::ablate_lastk: {
      const auto ks = l.config.lastk.empty() ? default_lastk(l.config.model.num_layers) : l.config.lastk;
      rows = ablate_lastk(in, ks);
      break;
    }
    case ExperimentKind::ablate_pretraining:
      rows = ablate_pretraining(
          in, {domain_docs, l.config.pretrain_epochs, l.config.mask_rate, l.config.pretrain_lr, l.config.nsp});
      break;
    case ExperimentKind::size_sweep: rows = size_sweep_grid(in, l.config.sizes); break;
    default: break;
  }
  write_grid_csv(out_dir / "grid.csv", rows);
  const auto cells = summarize(rows);
  write_summary_csv(out_dir / "summary.csv", cells);
  std::size_t failed = 0;
  json cell_json = json::array();
  for (const auto& c : cells) {
    failed += c.failures;
    cell_json.push_back({{"cell", c.cell},
                         {"runs", c.runs},
                         {"failures", c.failures},
                         {"median_best_val_loss", c.median_best_val_loss},
                         {"median_test_accuracy", c.median_test_accuracy},
                         {"median_test_macro_f1", c.median_test_macro_f1},
                         {"median_test_weighted_ce", c.median_test_weighted_ce}});
  }
  report["provenance"] = provenance_json(l, s);
  report["config"] = l.config_json;
  report["cells"] = cell_json;
  report["failed_runs"] = failed;
  write_json(out_dir / "metrics.json", report);
  for (const auto& c : cells)
    out << c.cell << ": median test accuracy " << c.median_test_accuracy << ", median best val loss "
        << c.median_best_val_loss << (c.failures ? " (" + std::to_string(c.failures) + " failed)" : "") << "\n";
  return failed ? kExitRuntime : kExitOk;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out_path, std::ostream& out) {
  if (runs.empty()) throw InputError("report needs at least one run directory");
  json combined = json::array();
  std::string grid;
  for (const auto& run : runs) {
    const fs::path dir = run;
    const fs::path metrics = dir / "metrics.json";
    if (!fs::is_regular_file(metrics)) throw InputError("no metrics.json in " + run);
    std::ifstream in(metrics, std::ios::binary);
    json m;
    try {
      m = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), metrics.string());
    }
    combined.push_back({{"run", run}, {"metrics", m}});
    std::ifstream g(dir / "grid.csv", std::ios::binary);
    std::string line;
    bool header = true;
    while (g && std::getline(g, line)) {
      if (header) {
        if (grid.empty()) grid = "run," + line + "\n";
        header = false;
        continue;
      }
      grid += run + "," + line + "\n";
    }
    out << run << ": config " << m.value("/provenance/config_hash"_json_pointer, std::string("?")) << ", seed "
        << m.value("/provenance/seed"_json_pointer, json(nullptr)).dump() << "\n";
  }
  const fs::path out_dir = out_path;
  for (const auto& run : runs) {
    if (is_within(out_dir, run)) throw InputError("report output directory lies inside run directory " + run);
  }
  fs::create_directories(out_dir);
  write_json(out_dir / "report.json", combined);
  if (!grid.empty()) write_text(out_dir / "grid.csv", grid);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"minibert: further pre-training, fine-tuning and ablation runs"};
  app.require_subcommand(1);
  CommonArgs common;
  std::vector<std::string> report_runs;
  std::string report_out = "report";
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "experiment config (JSON)")->required();
    sub->add_option("--seed", common.seed, "overrides the config's seeds");
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--checkpoint", common.checkpoint, "parent checkpoint (.mbf)");
  };
  auto* pretrain = app.add_subcommand("pretrain", "masked-LM further pre-training");
  auto* finetune = app.add_subcommand("finetune", "classification or regression fine-tuning");
  auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
  auto* report = app.add_subcommand("report", "consolidate run directories");
  add_common(pretrain);
  add_common(finetune);
  add_common(ablate);
  report->add_option("runs", report_runs, "run directories")->required();
  report->add_option("--out", report_out, "output directory");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitInput;
  }

  try {
    if (pretrain->parsed()) return cmd_pretrain(common, out);
    if (finetune->parsed()) return cmd_finetune(common, out);
    if (ablate->parsed()) return cmd_ablate(common, out);
    if (report->parsed()) return cmd_report(report_runs, report_out, out);
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const CorruptCheckpointError& e) {
    err << "corrupt checkpoint: " << e.what() << "\n";
    return kExitParse;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitInput;
}

}  // namespace minibert
