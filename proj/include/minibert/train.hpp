#pragma once

// Training loops: further pre-training, classification and regression
// fine-tuning with validation-based model selection, and the size sweep.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "minibert/data.hpp"
#include "minibert/metrics.hpp"
#include "minibert/model.hpp"
#include "minibert/strategies.hpp"

namespace minibert {

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<double> step_losses;
  std::vector<double> val_losses;      // per epoch
  std::vector<double> val_accuracies;  // per epoch (classification)
  std::size_t best_epoch = 0;          // 1-based; 0 when no epoch ran
  std::optional<MetricsReport> test;
  std::map<int, MetricsReport> test_by_agreement;
  std::size_t train_size = 0;
  // Wall clock is kept out of to_json() so records stay bit-reproducible.
  std::vector<double> epoch_seconds;
};

nlohmann::json to_json(const RunRecord& record);

// 1-based index of the first minimum.
std::size_t best_epoch(std::span<const double> val_losses);

// Which parameters a task trains.
enum class Task { pretrain_mlm, pretrain_mlm_nsp, classification, regression };
std::vector<NamedParam> task_parameters(const ModelParams& params, Task task);
// Also drops encoder layers above a `layer:K` head source.
std::vector<NamedParam> task_parameters(const ModelParams& params, Task task, const HeadSource& source);

// Copies the values of `src` into the tensors of `dst` (same config).
void copy_values(ModelParams& dst, const ModelParams& src);

// Called after every optimizer update with the number of updates so far.
using StepObserver = std::function<void(long steps_done, const ModelParams& params)>;

struct PretrainOptions {
  double mask_rate = 0.15;
  // When non-empty, sentence-pair batches from these documents add an NSP
  // loss to every step alongside the MLM batches built from the corpus.
  std::vector<Document> nsp_documents;
};

// Masked-LM further pre-training. Uses the plan's schedule with every
// encoder group trainable.
RunRecord pretrain_mlm(ModelParams& params, const Vocabulary& vocab, std::span<const std::string> corpus,
                       const TrainingPlan& plan, int epochs, std::uint64_t seed, const PretrainOptions& options = {});

// Pre-training restricted to the training split's sentences.
RunRecord further_pretrain_on_task(ModelParams& params, const Vocabulary& vocab,
                                   const DatasetSplits<LabeledSentence>& splits, const TrainingPlan& plan, int epochs,
                                   std::uint64_t seed);

// Fraction of masked positions whose argmax prediction equals the original.
double mlm_accuracy(const ModelParams& params, const Vocabulary& vocab, std::span<const std::string> sentences,
                    std::uint64_t seed, double mask_rate = 0.15);

// Row-major [N, num_classes] logits in evaluation mode.
std::vector<float> predict_logits(const ModelParams& params, const Vocabulary& vocab,
                                  std::span<const std::string> texts, const HeadSource& source);
std::vector<double> predict_scores(const ModelParams& params, const Vocabulary& vocab,
                                   std::span<const std::string> texts);

MetricsReport evaluate_classifier(const ModelParams& params, const Vocabulary& vocab,
                                  std::span<const LabeledSentence> examples, std::span<const double> class_weights,
                                  const HeadSource& source);

// Weighted cross-entropy fine-tuning. After each epoch the validation loss is
// measured; `params` ends holding the epoch with the lowest one, and test
// metrics are computed once on that epoch.
RunRecord finetune_classifier(ModelParams& params, const Vocabulary& vocab,
                              const DatasetSplits<LabeledSentence>& splits, const TrainingPlan& plan, int epochs,
                              std::uint64_t seed, const StepObserver& observer = {});

struct RegressionSummary {
  std::vector<RunRecord> folds;
  double mean_mse = 0.0;
  std::optional<double> mean_r2;
};

// Independent MSE fine-tuning per fold from the same starting parameters;
// 20% of each fold's training part is held out for epoch selection.
RegressionSummary finetune_regressor(const ModelParams& start, const Vocabulary& vocab,
                                     std::span<const RegressionExample> records, std::span<const Fold> folds,
                                     const TrainingPlan& plan, int epochs, std::uint64_t seed);

struct SweepPoint {
  std::size_t size = 0;
  RunRecord record;
};

// Nested seeded subsamples of the training split; the full size leaves the
// split untouched.
std::vector<std::size_t> nested_subsample(std::size_t train_size, std::size_t size, std::uint64_t seed);

std::vector<SweepPoint> size_sweep(const ModelParams& start, const Vocabulary& vocab,
                                   const DatasetSplits<LabeledSentence>& splits, std::span<const std::size_t> sizes,
                                   const TrainingPlan& plan, int epochs, std::uint64_t seed);

std::vector<std::int32_t> labels_of(std::span<const LabeledSentence> examples);
std::vector<std::string> texts_of(std::span<const LabeledSentence> examples);

}  // namespace minibert
