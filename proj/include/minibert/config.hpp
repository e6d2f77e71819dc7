#pragma once

// Experiment configuration files (strict JSON: unknown keys are errors).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "minibert/errors.hpp"
#include "minibert/model.hpp"
#include "minibert/strategies.hpp"

namespace minibert {

// Invalid configuration document. Reported as an input error.
class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

enum class ExperimentKind {
  pretrain,
  finetune_cls,
  finetune_reg,
  ablate_strategies,
  ablate_layers,
  ablate_lastk,
  ablate_pretraining,
  size_sweep,
};

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& text);
bool is_ablation(ExperimentKind kind);

struct DataPaths {
  std::string phrasebank;  // "sentence@label[@agreement]" lines
  std::string fiqa;        // JSON array of {text, score, target}
  std::string corpus;      // directory, one document per file
  std::string keywords;    // one keyword per line; empty = no filtering
  std::string domain_corpus;  // used by the pre-training ablation
  bool operator==(const DataPaths&) const = default;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::finetune_cls;
  ModelConfig model;
  TrainingPlan plan;
  DataPaths data;
  std::vector<std::uint64_t> seeds{42};
  int epochs = 6;
  int pretrain_epochs = 3;
  double pretrain_lr = 1e-3;  // masked-LM arms of the pre-training ablation
  double mask_rate = 0.15;
  bool nsp = false;
  std::size_t vocab_size_cap = 0;  // 0 = model.vocab_size
  bool stratify = false;
  std::size_t folds = 10;
  std::vector<std::size_t> sizes;
  std::vector<int> lastk;          // empty = {0, 1, L/2, L}
  std::vector<std::string> presets{"NA", "STL", "STL+GU", "ALL"};

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainingPlan& plan);
TrainingPlan plan_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

// FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string config_hash(const nlohmann::json& j);

}  // namespace minibert
