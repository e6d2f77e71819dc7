#pragma once

// Ablation grids. Every cell starts from the same parent parameters and runs
// once per seed; a failing cell is recorded in its row and the grid goes on.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "minibert/data.hpp"
#include "minibert/model.hpp"
#include "minibert/strategies.hpp"
#include "minibert/train.hpp"

namespace minibert {

struct GridRow {
  std::string experiment;
  std::string cell;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::size_t train_size = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double final_val_loss = 0.0;
  double test_accuracy = 0.0;
  double test_macro_f1 = 0.0;
  double test_weighted_ce = 0.0;
  double test_ce = 0.0;
  std::vector<double> val_losses;
};

GridRow make_row(const std::string& experiment, const std::string& cell, const RunRecord& record);

// Copies the shared hyperparameters (rates, warm-up, batch size, head source,
// unfreeze interval) of `base` onto the preset's switches.
TrainingPlan plan_for_preset(const TrainingPlan& base, const std::string& preset_name);

struct GridInputs {
  const ModelParams* parent = nullptr;
  const Vocabulary* vocab = nullptr;
  const DatasetSplits<LabeledSentence>* splits = nullptr;
  TrainingPlan plan;
  int epochs = 6;
  std::vector<std::uint64_t> seeds;
};

std::vector<GridRow> ablate_strategies(const GridInputs& in, std::span<const std::string> presets);
// One cell per encoder layer plus the mean over all layers.
std::vector<GridRow> ablate_layers(const GridInputs& in);
std::vector<GridRow> ablate_lastk(const GridInputs& in, std::span<const int> ks);
// {0, 1, L/2, L} without duplicates.
std::vector<int> default_lastk(int num_layers);

struct PretrainingArms {
  std::vector<Document> domain_documents;
  int pretrain_epochs = 3;
  double mask_rate = 0.15;
  double peak_lr = 1e-3;
  bool nsp = false;  // adds next-sentence pairs from the domain documents
};

// Cells "vanilla" (parent as is), "task" (masked-LM on the training split)
// and "domain" (masked-LM on the domain documents). Each arm is pre-trained
// once from the parent, with the first seed, then fine-tuned once per seed.
std::vector<GridRow> ablate_pretraining(const GridInputs& in, const PretrainingArms& arms);

std::vector<GridRow> size_sweep_grid(const GridInputs& in, std::span<const std::size_t> sizes);

void write_grid_csv(const std::filesystem::path& path, std::span<const GridRow> rows);

struct CellSummary {
  std::string cell;
  std::size_t runs = 0;
  std::size_t failures = 0;
  double median_best_val_loss = 0.0;
  double median_test_accuracy = 0.0;
  double median_test_macro_f1 = 0.0;
  double median_test_weighted_ce = 0.0;
};

// Medians over the successful seeds of each cell, in first-seen cell order.
std::vector<CellSummary> summarize(std::span<const GridRow> rows);
void write_summary_csv(const std::filesystem::path& path, std::span<const CellSummary> cells);

double median(std::vector<double> values);

}  // namespace minibert
