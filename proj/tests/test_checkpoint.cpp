#include <fstream>

#include "doctest.h"
#include "minibert/checkpoint.hpp"
#include "minibert/config.hpp"
#include "minibert/errors.hpp"
#include "scratch_dir.hpp"

using minibert::Checkpoint;
using minibert::ModelConfig;

namespace {

ModelConfig small() {
  ModelConfig c;
  c.num_layers = 2;
  c.hidden = 8;
  c.num_heads = 2;
  c.ff_dim = 16;
  c.vocab_size = 9;
  c.max_seq_len = 12;
  return c;
}

Checkpoint make(std::uint64_t seed) {
  Checkpoint c;
  c.params = minibert::init_params(small(), seed);
  c.vocab = minibert::Vocabulary(std::vector<std::string>{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "b",
                                                          "c", "d"});
  c.provenance = {seed, "00112233aabbccdd", "", "pretrain"};
  return c;
}

std::string read(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

template <typename E>
std::string error_of(const std::string& bytes) {
  try {
    minibert::deserialize_checkpoint(bytes, "ckpt");
  } catch (const E& e) {
    return e.what();
  }
  return "no error";
}

}  // namespace

TEST_CASE("round trip is bit-identical") {
  scratch::Dir dir("ckpt");
  const auto ckpt = make(3);
  minibert::save_checkpoint(dir.path / "a.mbf", ckpt);
  const auto back = minibert::load_checkpoint(dir.path / "a.mbf");
  CHECK(minibert::bit_identical(back.params, ckpt.params));
  CHECK(back.vocab == ckpt.vocab);
  CHECK(back.provenance == ckpt.provenance);
  CHECK_FALSE(back.optimizer);

  minibert::save_checkpoint(dir.path / "b.mbf", back);
  CHECK(read(dir.path / "a.mbf") == read(dir.path / "b.mbf"));
  CHECK(minibert::checkpoint_hash(dir.path / "a.mbf") == minibert::checkpoint_hash(dir.path / "b.mbf"));
  CHECK(minibert::checkpoint_hash(dir.path / "a.mbf").size() == 16);
}

TEST_CASE("file layout") {
  const auto bytes = minibert::serialize_checkpoint(make(1));
  CHECK(bytes.substr(0, 4) == "MBF1");
  CHECK(static_cast<unsigned char>(bytes[4]) == minibert::kCheckpointVersion);
  std::uint64_t header = 0;
  for (int i = 0; i < 8; ++i) header |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  const auto json = nlohmann::json::parse(bytes.substr(16, header));
  CHECK(json.contains("config"));
  CHECK(json.contains("provenance"));
  CHECK(json.at("tensors").size() == make(1).params.named_parameters().size());
  CHECK(bytes.size() == 16 + header + 4 * make(1).params.parameter_count());
}

TEST_CASE("optimizer state round trip") {
  auto ckpt = make(4);
  minibert::OptimizerState s;
  s.step = 7;
  s.moments["head.cls.bias"] = {{0.5f, -1.0f, 2.0f}, {0.25f, 1.0f, 4.0f}, 6};
  ckpt.optimizer = s;
  const auto back = minibert::deserialize_checkpoint(minibert::serialize_checkpoint(ckpt));
  REQUIRE(back.optimizer);
  CHECK(back.optimizer->step == 7);
  const auto& m = back.optimizer->moments.at("head.cls.bias");
  CHECK(m.first == std::vector<float>{0.5f, -1.0f, 2.0f});
  CHECK(m.second == std::vector<float>{0.25f, 1.0f, 4.0f});
  CHECK(m.steps == 6);
}

TEST_CASE("corrupt files are rejected with the failed check named") {
  const auto bytes = minibert::serialize_checkpoint(make(5));

  CHECK(error_of<minibert::CorruptCheckpointError>("XXXX" + bytes.substr(4)).find("magic") != std::string::npos);
  CHECK(error_of<minibert::CorruptCheckpointError>(bytes.substr(0, 10)).find("preamble") != std::string::npos);
  CHECK(error_of<minibert::CorruptCheckpointError>(bytes.substr(0, 40)).find("header") != std::string::npos);
  CHECK(error_of<minibert::CorruptCheckpointError>(bytes.substr(0, bytes.size() - 3)).find("truncated tensor data") !=
        std::string::npos);
  CHECK(error_of<minibert::CorruptCheckpointError>(bytes + "x").find("trailing") != std::string::npos);
  CHECK(error_of<minibert::CorruptCheckpointError>("").find("magic") != std::string::npos);

  auto bumped = bytes;
  bumped[4] = 2;
  const auto msg = error_of<minibert::UnsupportedVersionError>(bumped);
  CHECK(msg.find("unsupported format version 2") != std::string::npos);
}

TEST_CASE("tensor directory mismatches") {
  const auto bytes = minibert::serialize_checkpoint(make(6));
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  auto header = nlohmann::json::parse(bytes.substr(16, len));
  const std::string data = bytes.substr(16 + len);
  auto rebuild = [&](const nlohmann::json& h) {
    const std::string text = h.dump();
    std::string out = bytes.substr(0, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xFF));
    return out + text + data;
  };
  CHECK_NOTHROW(minibert::deserialize_checkpoint(rebuild(header)));

  auto renamed = header;
  renamed["tensors"][0]["name"] = "embeddings.bogus";
  CHECK(error_of<minibert::CorruptCheckpointError>(rebuild(renamed)).find("missing") != std::string::npos);

  auto reshaped = header;
  reshaped["tensors"][0]["shape"] = {3, 3};
  CHECK(error_of<minibert::CorruptCheckpointError>(rebuild(reshaped)).find("shape") != std::string::npos);

  auto bad_config = header;
  bad_config["config"]["num_heads"] = 3;
  CHECK_THROWS_AS(minibert::deserialize_checkpoint(rebuild(bad_config)), minibert::CorruptCheckpointError);
}

TEST_CASE("config must match on load") {
  scratch::Dir dir("ckpt-config");
  minibert::save_checkpoint(dir.path / "c.mbf", make(7));
  CHECK_NOTHROW(minibert::load_checkpoint(dir.path / "c.mbf", small()));
  auto other = small();
  other.num_layers = 3;
  CHECK_THROWS_AS(minibert::load_checkpoint(dir.path / "c.mbf", other), minibert::InputError);
  CHECK_THROWS_AS(minibert::load_checkpoint(dir.path / "missing.mbf"), minibert::InputError);
}

TEST_CASE("experiment config round trip") {
  minibert::ExperimentConfig c;
  c.kind = minibert::ExperimentKind::ablate_lastk;
  c.model = small();
  c.plan = minibert::preset("STL");
  c.plan.freeze_last_k = 1;
  c.plan.head_source = minibert::HeadSource::mean_of_layers();
  c.seeds = {1, 2, 3};
  c.lastk = {0, 2};
  c.data.phrasebank = "bank.txt";
  const auto j = minibert::to_json(c);
  CHECK(minibert::experiment_config_from_json(j) == c);
  CHECK(minibert::to_json(minibert::experiment_config_from_json(j)) == j);

  scratch::Dir dir("config");
  minibert::save_config(dir.path / "c.json", c);
  CHECK(minibert::load_config(dir.path / "c.json") == c);
  CHECK(minibert::config_hash(j) == minibert::config_hash(minibert::to_json(c)));
  auto changed = c;
  changed.epochs = 7;
  CHECK(minibert::config_hash(minibert::to_json(changed)) != minibert::config_hash(j));
}

TEST_CASE("config documents are strict") {
  using nlohmann::json;
  CHECK_THROWS_AS(minibert::experiment_config_from_json(json{{"kind", "finetune-cls"}, {"epoch", 3}}),
                  minibert::ConfigError);
  CHECK_THROWS_AS(minibert::experiment_config_from_json(json{{"kind", "train"}}), minibert::ConfigError);
  CHECK_THROWS_AS(minibert::experiment_config_from_json(json{{"epochs", 3}}), minibert::ConfigError);
  CHECK_THROWS_AS(minibert::experiment_config_from_json(
                      json{{"kind", "finetune-cls"}, {"model", {{"hidden", 64}, {"layers", 2}}}}),
                  minibert::ConfigError);
  CHECK_THROWS_AS(minibert::experiment_config_from_json(json{{"kind", "finetune-cls"}, {"epochs", "six"}}),
                  minibert::ConfigError);

  const auto c = minibert::experiment_config_from_json(json{{"kind", "pretrain"}, {"plan", {{"preset", "NA"}}}});
  CHECK(c.kind == minibert::ExperimentKind::pretrain);
  CHECK_FALSE(c.plan.use_stlr);
  CHECK(c.plan.discrimination_rate == 1.0);
  const auto o = minibert::experiment_config_from_json(
      json{{"kind", "pretrain"}, {"plan", {{"preset", "ALL"}, {"discrimination_rate", 0.9}}}});
  CHECK(o.plan.gradual_unfreeze);
  CHECK(o.plan.discrimination_rate == 0.9);

  scratch::Dir dir("config-bad");
  std::ofstream(dir.path / "bad.json") << "{ not json";
  CHECK_THROWS_AS(minibert::load_config(dir.path / "bad.json"), minibert::InputError);
  CHECK_THROWS_AS(minibert::load_config(dir.path / "none.json"), minibert::InputError);
}
