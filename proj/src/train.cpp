#include "minibert/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include "minibert/errors.hpp"
#include "minibert/rng.hpp"

namespace minibert {

namespace {

constexpr std::size_t kEvalBatch = 64;

bool is_head(const NamedParam& p, const char* which) {
  return p.name.rfind(std::string("head.") + which + ".", 0) == 0;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

// Drives one run of a plan: learning rate, freezing and the Adam update for
// each step, with per-step dropout streams derived from the run seed.
class PlanRunner {
 public:
  PlanRunner(const ModelParams& params, std::vector<NamedParam> trainable, TrainingPlan plan, long steps_per_epoch,
             int epochs, std::uint64_t seed, StepObserver observer = {})
      : params_(params),
        observer_(std::move(observer)),
        trainable_(std::move(trainable)),
        plan_(std::move(plan)),
        steps_per_epoch_(steps_per_epoch),
        num_layers_(params.config.num_layers),
        seed_(seed) {
    plan_.validate();
    if (plan_.total_steps == 0) plan_.total_steps = steps_per_epoch * epochs;
    if (plan_.freeze_last_k) freeze_mask_last_k(*plan_.freeze_last_k, num_layers_);
  }

  ~PlanRunner() {
    for (auto& p : trainable_) {
      p.tensor.set_requires_grad(true);
      p.tensor.zero_grad();
    }
  }

  PlanRunner(const PlanRunner&) = delete;
  PlanRunner& operator=(const PlanRunner&) = delete;

  // Runs forward via `loss_fn`, backpropagates and applies the update.
  template <typename LossFn>
  double step(LossFn&& loss_fn) {
    const auto frozen = frozen_groups(plan_, step_, steps_per_epoch_, num_layers_);
    for (auto& p : trainable_) {
      p.tensor.set_requires_grad(!frozen.count(p.group));
      p.tensor.zero_grad();
    }
    Rng dropout_rng(derive_seed(seed_, 0xD809, static_cast<std::uint64_t>(step_)));
    ForwardContext ctx{true, &dropout_rng};
    Tensor loss = loss_fn(ctx);
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericError("non-finite training loss at step " + std::to_string(step_));
    ag::backward(loss);
    const double lr = stlr_lr(plan_, step_);
    adam_step(trainable_, state_, group_lrs(plan_, lr, num_layers_), frozen);
    ++step_;
    if (observer_) observer_(step_, params_);
    return value;
  }

  long steps_taken() const { return step_; }

 private:
  const ModelParams& params_;
  StepObserver observer_;
  std::vector<NamedParam> trainable_;
  TrainingPlan plan_;
  long steps_per_epoch_;
  int num_layers_;
  std::uint64_t seed_;
  long step_ = 0;
  OptimizerState state_;
};

template <typename T>
std::vector<T> gather(std::span<const T> items, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items[i]);
  return out;
}

long steps_for(std::size_t n, std::size_t batch) { return static_cast<long>((n + batch - 1) / batch); }

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, std::uint64_t seed) {
  auto order = iota_indices(n);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch)));
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::size_t max_len_of(const ModelParams& params) { return static_cast<std::size_t>(params.config.max_seq_len); }

}  // namespace

std::vector<std::int32_t> labels_of(std::span<const LabeledSentence> examples) {
  std::vector<std::int32_t> out;
  for (const auto& e : examples) out.push_back(static_cast<std::int32_t>(e.label));
  return out;
}

std::vector<std::string> texts_of(std::span<const LabeledSentence> examples) {
  std::vector<std::string> out;
  for (const auto& e : examples) out.push_back(e.text);
  return out;
}

nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["train_size"] = r.train_size;
  j["step_losses"] = r.step_losses;
  j["val_losses"] = r.val_losses;
  j["val_accuracies"] = r.val_accuracies;
  j["best_epoch"] = r.best_epoch;
  if (r.test) j["test"] = to_json(*r.test);
  if (!r.test_by_agreement.empty()) {
    nlohmann::json by;
    for (const auto& [agreement, m] : r.test_by_agreement) by[std::to_string(agreement)] = to_json(m);
    j["test_by_agreement"] = by;
  }
  return j;
}

std::size_t best_epoch(std::span<const double> val_losses) {
  if (val_losses.empty()) return 0;
  return static_cast<std::size_t>(std::min_element(val_losses.begin(), val_losses.end()) - val_losses.begin()) + 1;
}

std::vector<NamedParam> task_parameters(const ModelParams& params, Task task) {
  std::vector<NamedParam> out;
  for (auto& p : params.named_parameters()) {
    if (is_head(p, "cls") && task != Task::classification) continue;
    if (is_head(p, "reg") && task != Task::regression) continue;
    if (is_head(p, "mlm") && task != Task::pretrain_mlm && task != Task::pretrain_mlm_nsp) continue;
    if (is_head(p, "nsp") && task != Task::pretrain_mlm_nsp) continue;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<NamedParam> task_parameters(const ModelParams& params, Task task, const HeadSource& source) {
  auto out = task_parameters(params, task);
  if (source.kind != HeadSource::Kind::layer || source.layer < 0) return out;
  std::erase_if(out, [&](const NamedParam& p) {
    for (int l = source.layer + 1; l <= params.config.num_layers; ++l)
      if (p.group == encoder_group(l)) return true;
    return false;
  });
  return out;
}

void copy_values(ModelParams& dst, const ModelParams& src) {
  if (!(dst.config == src.config)) throw ContractError("copy_values: configurations differ");
  auto d = dst.named_parameters();
  const auto s = src.named_parameters();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto from = s[i].tensor.data();
    std::copy(from.begin(), from.end(), d[i].tensor.mutable_data().begin());
  }
}

RunRecord pretrain_mlm(ModelParams& params, const Vocabulary& vocab, std::span<const std::string> corpus,
                       const TrainingPlan& plan, int epochs, std::uint64_t seed, const PretrainOptions& options) {
  if (corpus.empty()) throw InputError("pre-training corpus is empty");
  if (epochs < 0) throw ParameterError("epochs must not be negative");
  RunRecord record;
  record.seed = seed;
  record.train_size = corpus.size();
  if (epochs == 0) return record;

  const std::size_t max_len = max_len_of(params);
  const auto contents = encode_contents(vocab, corpus);
  const bool with_nsp = !options.nsp_documents.empty();
  std::vector<std::vector<std::vector<std::int32_t>>> docs;
  for (const auto& d : options.nsp_documents) docs.push_back(encode_contents(vocab, d.sentences));

  TrainingPlan pre = plan;
  pre.gradual_unfreeze = false;
  pre.freeze_last_k.reset();
  const std::size_t batch = plan.batch_size;
  const long spe = steps_for(contents.size(), batch);
  PlanRunner runner(params, task_parameters(params, with_nsp ? Task::pretrain_mlm_nsp : Task::pretrain_mlm), pre, spe,
                    epochs, seed);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto batches = epoch_batches(contents.size(), batch, derive_seed(seed, 1, static_cast<std::uint64_t>(epoch)));
    std::vector<SentencePair> pairs;
    if (with_nsp) pairs = make_nsp_pairs(docs, derive_seed(seed, 2, static_cast<std::uint64_t>(epoch)));
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto chunk = gather(std::span<const std::vector<std::int32_t>>(contents), batches[b]);
      const auto step_seed = derive_seed(seed, 3, static_cast<std::uint64_t>(runner.steps_taken()));
      const MaskedBatch mb = make_mlm_batch(chunk, max_len, options.mask_rate, step_seed);
      std::optional<MaskedBatch> pair_batch;
      if (with_nsp && !pairs.empty()) {
        // cycle through the pairs, one slice per step
        const std::size_t per = std::max<std::size_t>(1, std::min(batch, pairs.size()));
        const std::size_t offset = (b * per) % pairs.size();
        std::vector<SentencePair> slice;
        for (std::size_t i = 0; i < per; ++i) slice.push_back(pairs[(offset + i) % pairs.size()]);
        pair_batch = make_pair_batch(docs, slice, max_len, options.mask_rate, derive_seed(step_seed, 4));
      }
      const double loss = runner.step([&](ForwardContext ctx) {
        Tensor total;
        if (!mb.masked_positions.empty()) {
          const auto out = encode(params, mb.encoder_input(), ctx);
          total = ag::cross_entropy(mlm_logits(params, out, mb.masked_positions), mb.masked_targets);
        }
        if (pair_batch) {
          const auto out = encode(params, pair_batch->encoder_input(), ctx);
          Tensor nsp = ag::cross_entropy(nsp_logits(params, out), pair_batch->is_next);
          if (!pair_batch->masked_positions.empty())
            nsp = ag::add(nsp, ag::cross_entropy(mlm_logits(params, out, pair_batch->masked_positions),
                                                 pair_batch->masked_targets));
          total = total.defined() ? ag::add(total, nsp) : nsp;
        }
        if (!total.defined()) throw InputError("pre-training batch has no maskable tokens");
        return total;
      });
      record.step_losses.push_back(loss);
    }
    record.epoch_seconds.push_back(seconds_since(start));
  }
  return record;
}

RunRecord further_pretrain_on_task(ModelParams& params, const Vocabulary& vocab,
                                   const DatasetSplits<LabeledSentence>& splits, const TrainingPlan& plan, int epochs,
                                   std::uint64_t seed) {
  const auto corpus = texts_of(splits.train);
  return pretrain_mlm(params, vocab, corpus, plan, epochs, seed);
}

double mlm_accuracy(const ModelParams& params, const Vocabulary& vocab, std::span<const std::string> sentences,
                    std::uint64_t seed, double mask_rate) {
  ag::NoGradGuard no_grad;
  const auto contents = encode_contents(vocab, sentences);
  std::size_t correct = 0, total = 0;
  for (std::size_t start = 0; start < contents.size(); start += kEvalBatch) {
    const std::size_t end = std::min(contents.size(), start + kEvalBatch);
    std::span<const std::vector<std::int32_t>> chunk(contents.data() + start, end - start);
    const auto mb = make_mlm_batch(chunk, max_len_of(params), mask_rate, derive_seed(seed, start));
    if (mb.masked_positions.empty()) continue;
    const auto out = encode(params, mb.encoder_input());
    const auto logits = mlm_logits(params, out, mb.masked_positions);
    const auto pred = argmax_rows(logits.data(), logits.dim(1));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == mb.masked_targets[i] ? 1 : 0;
    total += pred.size();
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

std::vector<float> predict_logits(const ModelParams& params, const Vocabulary& vocab,
                                  std::span<const std::string> texts, const HeadSource& source) {
  ag::NoGradGuard no_grad;
  const auto contents = encode_contents(vocab, texts);
  std::vector<float> logits;
  for (std::size_t start = 0; start < contents.size(); start += kEvalBatch) {
    const std::size_t end = std::min(contents.size(), start + kEvalBatch);
    std::span<const std::vector<std::int32_t>> chunk(contents.data() + start, end - start);
    const auto out = encode(params, make_encoder_input(chunk, max_len_of(params)));
    const auto l = classify(params, out, source);
    logits.insert(logits.end(), l.data().begin(), l.data().end());
  }
  return logits;
}

std::vector<double> predict_scores(const ModelParams& params, const Vocabulary& vocab,
                                   std::span<const std::string> texts) {
  ag::NoGradGuard no_grad;
  const auto contents = encode_contents(vocab, texts);
  std::vector<double> scores;
  for (std::size_t start = 0; start < contents.size(); start += kEvalBatch) {
    const std::size_t end = std::min(contents.size(), start + kEvalBatch);
    std::span<const std::vector<std::int32_t>> chunk(contents.data() + start, end - start);
    const auto out = encode(params, make_encoder_input(chunk, max_len_of(params)));
    const auto s = regress(params, out);
    scores.insert(scores.end(), s.data().begin(), s.data().end());
  }
  return scores;
}

MetricsReport evaluate_classifier(const ModelParams& params, const Vocabulary& vocab,
                                  std::span<const LabeledSentence> examples, std::span<const double> class_weights,
                                  const HeadSource& source) {
  const auto texts = texts_of(examples);
  const auto logits = predict_logits(params, vocab, texts, source);
  const auto gold = labels_of(examples);
  return compute_classification_metrics(logits, gold, class_weights);
}

RunRecord finetune_classifier(ModelParams& params, const Vocabulary& vocab,
                              const DatasetSplits<LabeledSentence>& splits, const TrainingPlan& plan, int epochs,
                              std::uint64_t seed, const StepObserver& observer) {
  if (splits.train.empty() || splits.validation.empty()) throw InputError("fine-tuning needs train and validation data");
  if (epochs < 1) throw ParameterError("fine-tuning needs at least one epoch");
  const int num_classes = params.config.num_classes;
  const auto train_labels = labels_of(splits.train);
  std::set<std::int32_t> train_set(train_labels.begin(), train_labels.end());
  for (const auto* part : {&splits.validation, &splits.test}) {
    for (const auto& e : *part) {
      if (!train_set.count(static_cast<std::int32_t>(e.label))) {
        throw InputError("label set mismatch: '" + to_string(e.label) + "' is absent from the training split");
      }
    }
  }
  if (static_cast<int>(train_set.size()) != num_classes || *train_set.rbegin() >= num_classes) {
    throw InputError("label set mismatch: training split covers " + std::to_string(train_set.size()) + " of " +
                     std::to_string(num_classes) + " classes");
  }
  const auto weights = class_weights_for(train_labels, num_classes);
  const auto contents = encode_contents(vocab, texts_of(splits.train));
  const std::size_t max_len = max_len_of(params);
  const std::size_t batch = plan.batch_size;
  const long spe = steps_for(contents.size(), batch);

  RunRecord record;
  record.seed = seed;
  record.train_size = splits.train.size();
  std::optional<ModelParams> best;
  double best_loss = std::numeric_limits<double>::infinity();
  {
    PlanRunner runner(params, task_parameters(params, Task::classification, plan.head_source), plan, spe, epochs, seed, observer);
    for (int epoch = 0; epoch < epochs; ++epoch) {
      const auto start = std::chrono::steady_clock::now();
      for (const auto& idx : epoch_batches(contents.size(), batch, derive_seed(seed, 11, static_cast<std::uint64_t>(epoch)))) {
        const auto chunk = gather(std::span<const std::vector<std::int32_t>>(contents), idx);
        const auto labels = gather(std::span<const std::int32_t>(train_labels), idx);
        const EncoderInput input = make_encoder_input(chunk, max_len);
        record.step_losses.push_back(runner.step([&](ForwardContext ctx) {
          const auto out = encode(params, input, ctx);
          return ag::cross_entropy_weighted(classify(params, out, plan.head_source, ctx), labels, weights);
        }));
      }
      const auto val = evaluate_classifier(params, vocab, splits.validation, weights, plan.head_source);
      record.val_losses.push_back(val.weighted_ce);
      record.val_accuracies.push_back(val.accuracy);
      if (val.weighted_ce < best_loss) {
        best_loss = val.weighted_ce;
        best = params.clone();
      }
      record.epoch_seconds.push_back(seconds_since(start));
    }
  }
  record.best_epoch = best_epoch(record.val_losses);
  if (best) copy_values(params, *best);

  if (!splits.test.empty()) {
    record.test = evaluate_classifier(params, vocab, splits.test, weights, plan.head_source);
    std::map<int, std::vector<LabeledSentence>> by_agreement;
    for (const auto& e : splits.test)
      if (e.agreement) by_agreement[*e.agreement].push_back(e);
    for (const auto& [agreement, subset] : by_agreement)
      record.test_by_agreement[agreement] = evaluate_classifier(params, vocab, subset, weights, plan.head_source);
  }
  return record;
}

namespace {

RunRecord train_regression_fold(ModelParams& params, const Vocabulary& vocab, std::span<const RegressionExample> train,
                                std::span<const RegressionExample> validation, const TrainingPlan& plan, int epochs,
                                std::uint64_t seed) {
  std::vector<std::string> texts;
  std::vector<double> targets;
  for (const auto& r : train) {
    texts.push_back(r.text);
    targets.push_back(r.score);
  }
  std::vector<std::string> val_texts;
  std::vector<double> val_targets;
  for (const auto& r : validation) {
    val_texts.push_back(r.text);
    val_targets.push_back(r.score);
  }
  const auto contents = encode_contents(vocab, texts);
  const std::size_t batch = plan.batch_size;
  const long spe = steps_for(contents.size(), batch);
  RunRecord record;
  record.seed = seed;
  record.train_size = train.size();
  std::optional<ModelParams> best;
  double best_loss = std::numeric_limits<double>::infinity();
  {
    PlanRunner runner(params, task_parameters(params, Task::regression, plan.head_source), plan, spe, epochs, seed);
    for (int epoch = 0; epoch < epochs; ++epoch) {
      const auto start = std::chrono::steady_clock::now();
      for (const auto& idx : epoch_batches(contents.size(), batch, derive_seed(seed, 21, static_cast<std::uint64_t>(epoch)))) {
        const auto chunk = gather(std::span<const std::vector<std::int32_t>>(contents), idx);
        const auto y = gather(std::span<const double>(targets), idx);
        const EncoderInput input = make_encoder_input(chunk, max_len_of(params));
        record.step_losses.push_back(runner.step([&](ForwardContext ctx) {
          const auto out = encode(params, input, ctx);
          return ag::mse_loss(regress(params, out, ctx), y);
        }));
      }
      if (!validation.empty()) {
        const auto pred = predict_scores(params, vocab, val_texts);
        const double loss = compute_regression_metrics(pred, val_targets).mse;
        record.val_losses.push_back(loss);
        if (loss < best_loss) {
          best_loss = loss;
          best = params.clone();
        }
      }
      record.epoch_seconds.push_back(seconds_since(start));
    }
  }
  if (best) {
    record.best_epoch = best_epoch(record.val_losses);
    copy_values(params, *best);
  } else {
    record.best_epoch = static_cast<std::size_t>(epochs);
  }
  return record;
}

}  // namespace

RegressionSummary finetune_regressor(const ModelParams& start, const Vocabulary& vocab,
                                     std::span<const RegressionExample> records, std::span<const Fold> folds,
                                     const TrainingPlan& plan, int epochs, std::uint64_t seed) {
  if (folds.size() < 2) throw InputError("regression cross-validation needs at least 2 folds");
  std::vector<int> owner(records.size(), -1);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::set<std::size_t> test(folds[f].test.begin(), folds[f].test.end());
    if (test.size() != folds[f].test.size()) throw InputError("fold " + std::to_string(f) + " repeats a test record");
    for (std::size_t i : folds[f].train) {
      if (i >= records.size()) throw InputError("fold index outside the dataset");
      if (test.count(i)) throw InputError("fold " + std::to_string(f) + " trains on its own test records");
    }
    for (std::size_t i : folds[f].test) {
      if (i >= records.size()) throw InputError("fold index outside the dataset");
      if (owner[i] >= 0) throw InputError("folds overlap: record " + std::to_string(i) + " is in two test folds");
      owner[i] = static_cast<int>(f);
    }
  }

  RegressionSummary summary;
  double r2_total = 0.0;
  bool all_r2 = true;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const std::uint64_t fold_seed = derive_seed(seed, 31, f);
    // hold out part of the fold's training records for epoch selection
    std::vector<std::size_t> order = folds[f].train;
    Rng rng(derive_seed(fold_seed, 1));
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t held = order.size() >= 5 ? order.size() / 5 : 0;
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    const auto train = select(records, std::span<const std::size_t>(train_idx));
    const auto val = select(records, std::span<const std::size_t>(val_idx));
    const auto test = select(records, std::span<const std::size_t>(folds[f].test));

    ModelParams params = start.clone();
    RunRecord record = train_regression_fold(params, vocab, train, val, plan, epochs, fold_seed);
    std::vector<std::string> test_texts;
    std::vector<double> test_targets;
    for (const auto& r : test) {
      test_texts.push_back(r.text);
      test_targets.push_back(r.score);
    }
    const auto m = compute_regression_metrics(predict_scores(params, vocab, test_texts), test_targets);
    MetricsReport report;
    report.n = test.size();
    report.mse = m.mse;
    report.r2 = m.r2;
    report.r2_undefined = !m.r2.has_value();
    record.test = report;
    summary.mean_mse += m.mse;
    if (m.r2) r2_total += *m.r2;
    else all_r2 = false;
    summary.folds.push_back(std::move(record));
  }
  summary.mean_mse /= static_cast<double>(folds.size());
  if (all_r2) summary.mean_r2 = r2_total / static_cast<double>(folds.size());
  return summary;
}

std::vector<std::size_t> nested_subsample(std::size_t train_size, std::size_t size, std::uint64_t seed) {
  if (size > train_size) {
    throw InputError("sweep size " + std::to_string(size) + " exceeds the training split (" +
                     std::to_string(train_size) + ")");
  }
  auto order = iota_indices(train_size);
  Rng rng(derive_seed(seed, 41));
  rng.shuffle(std::span<std::size_t>(order));
  order.resize(size);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<SweepPoint> size_sweep(const ModelParams& start, const Vocabulary& vocab,
                                   const DatasetSplits<LabeledSentence>& splits, std::span<const std::size_t> sizes,
                                   const TrainingPlan& plan, int epochs, std::uint64_t seed) {
  for (std::size_t s : sizes) {
    if (s > splits.train.size()) {
      throw InputError("sweep size " + std::to_string(s) + " exceeds the training split (" +
                       std::to_string(splits.train.size()) + ")");
    }
  }
  std::vector<SweepPoint> points;
  for (std::size_t s : sizes) {
    DatasetSplits<LabeledSentence> sub{
        select(std::span<const LabeledSentence>(splits.train),
               std::span<const std::size_t>(nested_subsample(splits.train.size(), s, seed))),
        splits.validation, splits.test};
    ModelParams params = start.clone();
    points.push_back({s, finetune_classifier(params, vocab, sub, plan, epochs, seed)});
  }
  return points;
}

}  // namespace minibert
