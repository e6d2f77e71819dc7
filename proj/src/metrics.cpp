#include "minibert/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "minibert/errors.hpp"

namespace minibert {

std::vector<double> compute_class_weights(std::span<const std::size_t> label_counts) {
  if (label_counts.empty()) throw InputError("class weights need at least one class");
  std::size_t total = 0;
  for (std::size_t c = 0; c < label_counts.size(); ++c) {
    if (label_counts[c] == 0) throw InputError("class " + std::to_string(c) + " has no training examples");
    total += label_counts[c];
  }
  std::vector<double> weights;
  for (std::size_t count : label_counts)
    weights.push_back(std::sqrt(static_cast<double>(total) / static_cast<double>(count)));
  return weights;
}

std::vector<double> class_weights_for(std::span<const std::int32_t> labels, int num_classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (auto l : labels) {
    if (l < 0 || l >= num_classes) throw InputError("label " + std::to_string(l) + " outside class range");
    ++counts[static_cast<std::size_t>(l)];
  }
  return compute_class_weights(counts);
}

std::vector<std::int32_t> argmax_rows(std::span<const float> logits, std::size_t num_classes) {
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i + num_classes <= logits.size(); i += num_classes) {
    const auto row = logits.subspan(i, num_classes);
    out.push_back(static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

MetricsReport compute_classification_metrics(std::span<const std::int32_t> predictions,
                                             std::span<const std::int32_t> gold, int num_classes) {
  if (predictions.size() != gold.size()) {
    throw InputError("metrics: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(gold.size()) + " gold labels");
  }
  if (gold.empty()) throw InputError("metrics: empty evaluation set");
  const auto c = static_cast<std::size_t>(num_classes);
  MetricsReport r;
  r.n = gold.size();
  r.confusion.assign(c, std::vector<std::size_t>(c, 0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || gold[i] >= num_classes || predictions[i] < 0 || predictions[i] >= num_classes) {
      throw InputError("metrics: label outside [0," + std::to_string(num_classes) + ")");
    }
    ++r.confusion[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(predictions[i])];
  }
  std::size_t correct = 0;
  for (std::size_t k = 0; k < c; ++k) correct += r.confusion[k][k];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  double f1_total = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t gold_k = 0, pred_k = 0;
    for (std::size_t j = 0; j < c; ++j) {
      gold_k += r.confusion[k][j];
      pred_k += r.confusion[j][k];
    }
    const double tp = static_cast<double>(r.confusion[k][k]);
    const double precision = pred_k ? tp / static_cast<double>(pred_k) : 0.0;
    const double recall = gold_k ? tp / static_cast<double>(gold_k) : 0.0;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    if (gold_k == 0 && pred_k == 0) r.absent_classes.push_back(static_cast<int>(k));
    r.per_class_f1.push_back(f1);
    f1_total += f1;
  }
  r.macro_f1 = f1_total / static_cast<double>(c);
  return r;
}

MetricsReport compute_classification_metrics(std::span<const float> logits, std::span<const std::int32_t> gold,
                                             std::span<const double> class_weights) {
  const std::size_t c = class_weights.size();
  if (c == 0 || logits.size() != gold.size() * c) {
    throw InputError("metrics: logits do not match " + std::to_string(gold.size()) + " examples x " +
                     std::to_string(c) + " classes");
  }
  auto report = compute_classification_metrics(argmax_rows(logits, c), gold, static_cast<int>(c));
  double weighted = 0.0, plain = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto row = logits.subspan(i * c, c);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (float v : row) z += std::exp(static_cast<double>(v) - mx);
    const double nll = -(static_cast<double>(row[static_cast<std::size_t>(gold[i])]) - mx - std::log(z));
    weighted += class_weights[static_cast<std::size_t>(gold[i])] * nll;
    plain += nll;
  }
  report.weighted_ce = weighted / static_cast<double>(gold.size());
  report.ce = plain / static_cast<double>(gold.size());
  return report;
}

RegressionMetrics compute_regression_metrics(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) {
    throw InputError("regression metrics: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(targets.size()) + " targets");
  }
  if (targets.empty()) throw InputError("regression metrics: empty evaluation set");
  const double n = static_cast<double>(targets.size());
  double mean = 0.0;
  for (double t : targets) mean += t;
  mean /= n;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    ss_res += (predictions[i] - targets[i]) * (predictions[i] - targets[i]);
    ss_tot += (targets[i] - mean) * (targets[i] - mean);
  }
  RegressionMetrics m;
  m.mse = ss_res / n;
  const bool constant = std::all_of(targets.begin(), targets.end(), [&](double t) { return t == targets.front(); });
  if (!constant) m.r2 = 1.0 - ss_res / ss_tot;
  return m;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["n"] = r.n;
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  j["per_class_f1"] = r.per_class_f1;
  j["absent_classes"] = r.absent_classes;
  j["weighted_ce"] = r.weighted_ce;
  j["ce"] = r.ce;
  j["confusion"] = r.confusion;
  if (r.mse) j["mse"] = *r.mse;
  if (r.r2) j["r2"] = *r.r2;
  else if (r.mse) j["r2"] = nullptr;
  j["r2_undefined"] = r.r2_undefined;
  return j;
}

}  // namespace minibert
