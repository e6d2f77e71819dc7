#include "minibert/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

#include "minibert/errors.hpp"
#include "minibert/rng.hpp"

namespace minibert {

namespace {

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void check_inputs(const GridInputs& in) {
  if (!in.parent || !in.vocab || !in.splits) throw ContractError("grid inputs are incomplete");
  if (in.seeds.empty()) throw ContractError("grid needs at least one seed");
}

GridRow failed_row(const std::string& experiment, const std::string& cell, std::uint64_t seed, const std::string& why) {
  GridRow row;
  row.experiment = experiment;
  row.cell = cell;
  row.seed = seed;
  row.ok = false;
  row.error = why;
  return row;
}

// Runs `body` for one (cell, seed); errors become a failed row.
template <typename Body>
GridRow run_cell(const std::string& experiment, const std::string& cell, std::uint64_t seed, Body&& body) {
  try {
    return make_row(experiment, cell, body());
  } catch (const Error& e) {
    return failed_row(experiment, cell, seed, e.what());
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

GridRow make_row(const std::string& experiment, const std::string& cell, const RunRecord& record) {
  GridRow row;
  row.experiment = experiment;
  row.cell = cell;
  row.seed = record.seed;
  row.train_size = record.train_size;
  row.best_epoch = record.best_epoch;
  row.val_losses = record.val_losses;
  if (!record.val_losses.empty()) {
    row.best_val_loss = *std::min_element(record.val_losses.begin(), record.val_losses.end());
    row.final_val_loss = record.val_losses.back();
  }
  if (record.test) {
    row.test_accuracy = record.test->accuracy;
    row.test_macro_f1 = record.test->macro_f1;
    row.test_weighted_ce = record.test->weighted_ce;
    row.test_ce = record.test->ce;
  }
  return row;
}

TrainingPlan plan_for_preset(const TrainingPlan& base, const std::string& preset_name) {
  TrainingPlan plan = preset(preset_name);
  plan.peak_lr = base.peak_lr;
  plan.warmup_proportion = base.warmup_proportion;
  plan.total_steps = base.total_steps;
  plan.unfreeze_interval = base.unfreeze_interval;
  plan.head_source = base.head_source;
  plan.batch_size = base.batch_size;
  if (plan.discrimination_rate != 1.0) plan.discrimination_rate = base.discrimination_rate;
  return plan;
}

std::vector<GridRow> ablate_strategies(const GridInputs& in, std::span<const std::string> presets) {
  check_inputs(in);
  std::vector<GridRow> rows;
  for (const auto& name : presets) {
    for (auto seed : in.seeds) {
      rows.push_back(run_cell("strategies", name, seed, [&] {
        const TrainingPlan plan = plan_for_preset(in.plan, name);
        ModelParams params = in.parent->clone();
        return finetune_classifier(params, *in.vocab, *in.splits, plan, in.epochs, seed);
      }));
    }
  }
  return rows;
}

std::vector<GridRow> ablate_layers(const GridInputs& in) {
  check_inputs(in);
  std::vector<HeadSource> sources;
  for (int l = 1; l <= in.parent->config.num_layers; ++l) sources.push_back(HeadSource::at_layer(l));
  sources.push_back(HeadSource::mean_of_layers());
  std::vector<GridRow> rows;
  for (const auto& source : sources) {
    for (auto seed : in.seeds) {
      rows.push_back(run_cell("layers", source.to_string(), seed, [&] {
        TrainingPlan plan = in.plan;
        plan.head_source = source;
        ModelParams params = in.parent->clone();
        return finetune_classifier(params, *in.vocab, *in.splits, plan, in.epochs, seed);
      }));
    }
  }
  return rows;
}

std::vector<int> default_lastk(int num_layers) {
  std::vector<int> ks{0, 1, num_layers / 2, num_layers};
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  return ks;
}

std::vector<GridRow> ablate_lastk(const GridInputs& in, std::span<const int> ks) {
  check_inputs(in);
  std::vector<GridRow> rows;
  for (int k : ks) {
    for (auto seed : in.seeds) {
      rows.push_back(run_cell("lastk", "k=" + std::to_string(k), seed, [&] {
        TrainingPlan plan = in.plan;
        plan.gradual_unfreeze = false;
        plan.freeze_last_k = k;
        ModelParams params = in.parent->clone();
        return finetune_classifier(params, *in.vocab, *in.splits, plan, in.epochs, seed);
      }));
    }
  }
  return rows;
}

std::vector<GridRow> ablate_pretraining(const GridInputs& in, const PretrainingArms& arms) {
  check_inputs(in);
  // masked-LM runs train every group at one rate
  TrainingPlan pre = in.plan;
  pre.gradual_unfreeze = false;
  pre.freeze_last_k.reset();
  pre.discrimination_rate = 1.0;
  pre.use_stlr = true;
  pre.peak_lr = arms.peak_lr;
  const std::uint64_t pre_seed = derive_seed(in.seeds.front(), 0x9E7);
  std::vector<GridRow> rows;
  for (const std::string arm : {"vanilla", "task", "domain"}) {
    ModelParams start = in.parent->clone();
    std::string failure;
    try {
      if (arm == "task") {
        further_pretrain_on_task(start, *in.vocab, *in.splits, pre, arms.pretrain_epochs, pre_seed);
      } else if (arm == "domain") {
        const auto sentences = sentences_of(arms.domain_documents);
        if (sentences.empty()) throw InputError("domain arm needs a domain corpus");
        PretrainOptions options{arms.mask_rate, {}};
        if (arms.nsp) options.nsp_documents = arms.domain_documents;
        pretrain_mlm(start, *in.vocab, sentences, pre, arms.pretrain_epochs, pre_seed, options);
      }
    } catch (const Error& e) {
      failure = e.what();
    }
    for (auto seed : in.seeds) {
      if (!failure.empty()) {
        rows.push_back(failed_row("pretraining", arm, seed, failure));
        continue;
      }
      rows.push_back(run_cell("pretraining", arm, seed, [&] {
        ModelParams params = start.clone();
        return finetune_classifier(params, *in.vocab, *in.splits, in.plan, in.epochs, seed);
      }));
    }
  }
  return rows;
}

std::vector<GridRow> size_sweep_grid(const GridInputs& in, std::span<const std::size_t> sizes) {
  check_inputs(in);
  for (std::size_t s : sizes) {
    if (s > in.splits->train.size()) {
      throw InputError("sweep size " + std::to_string(s) + " exceeds the training split (" +
                       std::to_string(in.splits->train.size()) + ")");
    }
  }
  std::vector<GridRow> rows;
  for (std::size_t s : sizes) {
    for (auto seed : in.seeds) {
      rows.push_back(run_cell("size", "n=" + std::to_string(s), seed, [&] {
        const std::size_t one[] = {s};
        auto points = size_sweep(*in.parent, *in.vocab, *in.splits, one, in.plan, in.epochs, seed);
        return std::move(points.front().record);
      }));
    }
  }
  return rows;
}

void write_grid_csv(const std::filesystem::path& path, std::span<const GridRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "experiment,cell,seed,status,train_size,best_epoch,best_val_loss,final_val_loss,test_accuracy,"
         "test_macro_f1,test_weighted_ce,test_ce,val_losses,error\n";
  for (const auto& r : rows) {
    std::string traj;
    for (double v : r.val_losses) traj += (traj.empty() ? "" : ";") + num(v);
    out << csv_field(r.experiment) << ',' << csv_field(r.cell) << ',' << r.seed << ',' << (r.ok ? "ok" : "failed")
        << ',' << r.train_size << ',' << r.best_epoch << ',' << num(r.best_val_loss) << ',' << num(r.final_val_loss)
        << ',' << num(r.test_accuracy) << ',' << num(r.test_macro_f1) << ',' << num(r.test_weighted_ce) << ','
        << num(r.test_ce) << ',' << traj << ',' << csv_field(r.error) << '\n';
  }
}

std::vector<CellSummary> summarize(std::span<const GridRow> rows) {
  std::vector<CellSummary> cells;
  for (const auto& r : rows) {
    auto it = std::find_if(cells.begin(), cells.end(), [&](const CellSummary& c) { return c.cell == r.cell; });
    if (it == cells.end()) {
      cells.push_back({r.cell});
      it = cells.end() - 1;
    }
    ++it->runs;
    if (!r.ok) ++it->failures;
  }
  for (auto& c : cells) {
    std::vector<double> loss, acc, f1, wce;
    for (const auto& r : rows) {
      if (r.cell != c.cell || !r.ok) continue;
      loss.push_back(r.best_val_loss);
      acc.push_back(r.test_accuracy);
      f1.push_back(r.test_macro_f1);
      wce.push_back(r.test_weighted_ce);
    }
    c.median_best_val_loss = median(loss);
    c.median_test_accuracy = median(acc);
    c.median_test_macro_f1 = median(f1);
    c.median_test_weighted_ce = median(wce);
  }
  return cells;
}

void write_summary_csv(const std::filesystem::path& path, std::span<const CellSummary> cells) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "cell,runs,failures,median_best_val_loss,median_test_accuracy,median_test_macro_f1,"
         "median_test_weighted_ce\n";
  for (const auto& c : cells) {
    out << csv_field(c.cell) << ',' << c.runs << ',' << c.failures << ',' << num(c.median_best_val_loss) << ','
        << num(c.median_test_accuracy) << ',' << num(c.median_test_macro_f1) << ','
        << num(c.median_test_weighted_ce) << '\n';
  }
}

}  // namespace minibert
