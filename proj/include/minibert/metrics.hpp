#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

namespace minibert {

struct MetricsReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  // Classes with no gold and no predicted example; their F1 counts as 0.
  std::vector<int> absent_classes;
  double weighted_ce = 0.0;
  double ce = 0.0;
  // rows = gold, columns = predicted
  std::vector<std::vector<std::size_t>> confusion;
  std::optional<double> mse;
  std::optional<double> r2;
  bool r2_undefined = false;
};

// sqrt(N / count_c), so a class at 25% frequency gets weight 2.
std::vector<double> compute_class_weights(std::span<const std::size_t> label_counts);
std::vector<double> class_weights_for(std::span<const std::int32_t> labels, int num_classes);

// Accuracy, per-class and macro F1 and the confusion matrix.
MetricsReport compute_classification_metrics(std::span<const std::int32_t> predictions,
                                             std::span<const std::int32_t> gold, int num_classes);

// Same, with predictions taken as the argmax of row-major logits [N, C] and
// both weighted and unweighted cross entropy filled in.
MetricsReport compute_classification_metrics(std::span<const float> logits, std::span<const std::int32_t> gold,
                                             std::span<const double> class_weights);

struct RegressionMetrics {
  double mse = 0.0;
  std::optional<double> r2;  // empty when the targets have zero variance
};

RegressionMetrics compute_regression_metrics(std::span<const double> predictions, std::span<const double> targets);

std::vector<std::int32_t> argmax_rows(std::span<const float> logits, std::size_t num_classes);

nlohmann::json to_json(const MetricsReport& report);

}  // namespace minibert
