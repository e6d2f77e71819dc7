#include "minibert/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

namespace minibert {

namespace {

using nlohmann::json;

void expect_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  expect_object(j, where);
  const std::set<std::string> known(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      std::string list;
      for (const char* k : allowed) list += (list.empty() ? "" : ", ") + std::string(k);
      throw ConfigError(where + ": unknown key '" + key + "' (allowed: " + list + ")");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::pretrain: return "pretrain";
    case ExperimentKind::finetune_cls: return "finetune-cls";
    case ExperimentKind::finetune_reg: return "finetune-reg";
    case ExperimentKind::ablate_strategies: return "ablate-strategies";
    case ExperimentKind::ablate_layers: return "ablate-layers";
    case ExperimentKind::ablate_lastk: return "ablate-lastk";
    case ExperimentKind::ablate_pretraining: return "ablate-pretraining";
    case ExperimentKind::size_sweep: return "size-sweep";
  }
  return "?";
}

ExperimentKind parse_experiment_kind(const std::string& text) {
  for (auto k : {ExperimentKind::pretrain, ExperimentKind::finetune_cls, ExperimentKind::finetune_reg,
                 ExperimentKind::ablate_strategies, ExperimentKind::ablate_layers, ExperimentKind::ablate_lastk,
                 ExperimentKind::ablate_pretraining, ExperimentKind::size_sweep}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown experiment kind '" + text + "'");
}

bool is_ablation(ExperimentKind kind) {
  return kind == ExperimentKind::ablate_strategies || kind == ExperimentKind::ablate_layers ||
         kind == ExperimentKind::ablate_lastk || kind == ExperimentKind::ablate_pretraining ||
         kind == ExperimentKind::size_sweep;
}

void ExperimentConfig::validate() const {
  try {
    model.validate();
    plan.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
  if (epochs < 0 || pretrain_epochs < 0) throw ConfigError("epochs must not be negative");
  if (!(pretrain_lr > 0.0)) throw ConfigError("pretrain_lr must be positive");
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must be in (0,1)");
  if (folds < 2) throw ConfigError("folds must be at least 2");
  for (int k : lastk)
    if (k < 0 || k > model.num_layers) throw ConfigError("lastk entry " + std::to_string(k) + " outside 0..L");
  for (const auto& p : presets) {
    try {
      parse_preset(p);
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
  }
  if (kind == ExperimentKind::size_sweep && sizes.empty()) throw ConfigError("size-sweep needs a non-empty sizes list");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers}, {"hidden", c.hidden},         {"num_heads", c.num_heads},
          {"ff_dim", c.ff_dim},         {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
          {"dropout", c.dropout},       {"type_vocab", c.type_vocab}, {"num_classes", c.num_classes}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  const std::string where = "model";
  check_keys(j, {"num_layers", "hidden", "num_heads", "ff_dim", "vocab_size", "max_seq_len", "dropout", "type_vocab",
                 "num_classes"},
             where);
  ModelConfig c;
  read(j, "num_layers", c.num_layers, where);
  read(j, "hidden", c.hidden, where);
  read(j, "num_heads", c.num_heads, where);
  read(j, "ff_dim", c.ff_dim, where);
  read(j, "vocab_size", c.vocab_size, where);
  read(j, "max_seq_len", c.max_seq_len, where);
  read(j, "dropout", c.dropout, where);
  read(j, "type_vocab", c.type_vocab, where);
  read(j, "num_classes", c.num_classes, where);
  return c;
}

nlohmann::json to_json(const TrainingPlan& p) {
  json j{{"preset", to_string(p.preset)},
         {"peak_lr", p.peak_lr},
         {"warmup_proportion", p.warmup_proportion},
         {"total_steps", p.total_steps},
         {"use_stlr", p.use_stlr},
         {"discrimination_rate", p.discrimination_rate},
         {"gradual_unfreeze", p.gradual_unfreeze},
         {"unfreeze_interval", p.unfreeze_interval},
         {"head_source", p.head_source.to_string()},
         {"batch_size", p.batch_size}};
  j["freeze_last_k"] = p.freeze_last_k ? json(*p.freeze_last_k) : json(nullptr);
  return j;
}

TrainingPlan plan_from_json(const nlohmann::json& j) {
  const std::string where = "plan";
  check_keys(j, {"preset", "peak_lr", "warmup_proportion", "total_steps", "use_stlr", "discrimination_rate",
                 "gradual_unfreeze", "unfreeze_interval", "freeze_last_k", "head_source", "batch_size"},
             where);
  // The preset supplies defaults; explicit fields override it.
  std::string name = "ALL";
  read(j, "preset", name, where);
  TrainingPlan p;
  try {
    p = preset(name);
  } catch (const ParameterError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  read(j, "peak_lr", p.peak_lr, where);
  read(j, "warmup_proportion", p.warmup_proportion, where);
  read(j, "total_steps", p.total_steps, where);
  read(j, "use_stlr", p.use_stlr, where);
  read(j, "discrimination_rate", p.discrimination_rate, where);
  read(j, "gradual_unfreeze", p.gradual_unfreeze, where);
  read(j, "unfreeze_interval", p.unfreeze_interval, where);
  read(j, "batch_size", p.batch_size, where);
  if (j.contains("freeze_last_k") && !j["freeze_last_k"].is_null()) {
    int k = 0;
    read(j, "freeze_last_k", k, where);
    p.freeze_last_k = k;
  }
  if (j.contains("head_source")) {
    std::string hs;
    read(j, "head_source", hs, where);
    try {
      p.head_source = HeadSource::parse(hs);
    } catch (const ParameterError& e) {
      throw ConfigError(where + ".head_source: " + e.what());
    }
  }
  return p;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  json data{{"phrasebank", c.data.phrasebank},
            {"fiqa", c.data.fiqa},
            {"corpus", c.data.corpus},
            {"keywords", c.data.keywords},
            {"domain_corpus", c.data.domain_corpus}};
  return {{"kind", to_string(c.kind)},
          {"model", to_json(c.model)},
          {"plan", to_json(c.plan)},
          {"data", data},
          {"seeds", c.seeds},
          {"epochs", c.epochs},
          {"pretrain_epochs", c.pretrain_epochs},
          {"pretrain_lr", c.pretrain_lr},
          {"mask_rate", c.mask_rate},
          {"nsp", c.nsp},
          {"vocab_size_cap", c.vocab_size_cap},
          {"stratify", c.stratify},
          {"folds", c.folds},
          {"sizes", c.sizes},
          {"lastk", c.lastk},
          {"presets", c.presets}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  const std::string where = "config";
  check_keys(j, {"kind", "model", "plan", "data", "seeds", "epochs", "pretrain_epochs", "pretrain_lr", "mask_rate", "nsp",
                 "vocab_size_cap", "stratify", "folds", "sizes", "lastk", "presets"},
             where);
  ExperimentConfig c;
  if (!j.contains("kind")) throw ConfigError("config: missing required key 'kind'");
  std::string kind;
  read(j, "kind", kind, where);
  c.kind = parse_experiment_kind(kind);
  if (j.contains("model")) c.model = model_config_from_json(j["model"]);
  if (j.contains("plan")) c.plan = plan_from_json(j["plan"]);
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, {"phrasebank", "fiqa", "corpus", "keywords", "domain_corpus"}, "data");
    read(d, "phrasebank", c.data.phrasebank, "data");
    read(d, "fiqa", c.data.fiqa, "data");
    read(d, "corpus", c.data.corpus, "data");
    read(d, "keywords", c.data.keywords, "data");
    read(d, "domain_corpus", c.data.domain_corpus, "data");
  }
  read(j, "seeds", c.seeds, where);
  read(j, "epochs", c.epochs, where);
  read(j, "pretrain_epochs", c.pretrain_epochs, where);
  read(j, "pretrain_lr", c.pretrain_lr, where);
  read(j, "mask_rate", c.mask_rate, where);
  read(j, "nsp", c.nsp, where);
  read(j, "vocab_size_cap", c.vocab_size_cap, where);
  read(j, "stratify", c.stratify, where);
  read(j, "folds", c.folds, where);
  read(j, "sizes", c.sizes, where);
  read(j, "lastk", c.lastk, where);
  read(j, "presets", c.presets, where);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  try {
    return experiment_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << to_json(config).dump(2) << '\n';
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const nlohmann::json& j) { return fnv1a_hex(j.dump()); }

}  // namespace minibert
