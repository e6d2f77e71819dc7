#include <cmath>
#include <set>

#include "doctest.h"
#include "minibert/model.hpp"
#include "minibert/strategies.hpp"
#include "minibert/train.hpp"

using minibert::EncoderInput;
using minibert::HeadSource;
using minibert::ModelConfig;
using minibert::Tensor;
namespace ag = minibert::ag;

namespace {

ModelConfig tiny(int layers = 2, int hidden = 16, int heads = 4) {
  ModelConfig c;
  c.num_layers = layers;
  c.hidden = hidden;
  c.num_heads = heads;
  c.ff_dim = 2 * hidden;
  c.vocab_size = 50;
  c.max_seq_len = 16;
  c.dropout = 0.1;
  return c;
}

EncoderInput input(std::size_t batch, std::size_t seq, std::vector<std::int32_t> ids,
                   std::vector<std::int32_t> mask = {}) {
  EncoderInput in{batch, seq, std::move(ids), std::vector<std::int32_t>(batch * seq, 0), std::move(mask)};
  if (in.attention_mask.empty()) in.attention_mask.assign(batch * seq, 1);
  return in;
}

void fill(Tensor& t, float v) {
  for (auto& x : t.mutable_data()) x = v;
}

void set(Tensor& t, std::vector<float> v) {
  REQUIRE(v.size() == t.numel());
  std::copy(v.begin(), v.end(), t.mutable_data().begin());
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(tiny().validate());
  auto c = tiny();
  c.hidden = 18;
  c.num_heads = 4;
  CHECK_THROWS_AS(c.validate(), minibert::ParameterError);
  c = tiny();
  c.max_seq_len = 2;
  CHECK_THROWS_AS(c.validate(), minibert::ParameterError);
  c = tiny();
  c.num_layers = 0;
  CHECK_THROWS_AS(minibert::init_params(c, 1), minibert::ParameterError);
}

TEST_CASE("init is deterministic with zero biases") {
  auto a = minibert::init_params(tiny(), 5);
  auto b = minibert::init_params(tiny(), 5);
  auto c = minibert::init_params(tiny(), 6);
  CHECK(minibert::bit_identical(a, b));
  CHECK_FALSE(minibert::bit_identical(a, c));
  for (const auto& p : a.named_parameters()) {
    if (p.name.ends_with(".bias")) {
      for (float v : p.tensor.data()) CHECK(v == 0.0f);
    }
    if (p.name.ends_with("norm.gain")) {
      for (float v : p.tensor.data()) CHECK(v == 1.0f);
    }
  }
}

TEST_CASE("init std of a 768-wide matrix") {
  auto c = tiny(1, 768, 12);
  c.ff_dim = 8;
  c.vocab_size = 6;
  c.max_seq_len = 3;
  auto p = minibert::init_params(c, 11);
  const auto d = p.layers[0].query_w.data();
  double mean = 0, sq = 0;
  for (float v : d) mean += v;
  mean /= static_cast<double>(d.size());
  for (float v : d) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(d.size()));
  CHECK(sd >= 0.015);
  CHECK(sd <= 0.025);
  CHECK(std::abs(mean) < 1e-3);
}

TEST_CASE("every parameter belongs to exactly one layer group") {
  const auto p = minibert::init_params(tiny(3), 1);
  const auto groups = minibert::layer_groups(3);
  CHECK(groups == std::vector<std::string>{"embeddings", "encoder.1", "encoder.2", "encoder.3", "head"});
  std::set<std::string> names;
  std::set<std::string> seen_groups;
  for (const auto& np : p.named_parameters()) {
    CHECK(std::count(groups.begin(), groups.end(), np.group) == 1);
    CHECK(np.name.starts_with(np.group + "."));
    CHECK(names.insert(np.name).second);
    seen_groups.insert(np.group);
  }
  CHECK(seen_groups.size() == groups.size());
  CHECK(names.size() == 5 + 3 * 16 + 8);
}

TEST_CASE("clone is independent") {
  auto a = minibert::init_params(tiny(), 2);
  auto b = a.clone();
  CHECK(minibert::bit_identical(a, b));
  b.token_embedding.mutable_data()[0] += 1.0f;
  CHECK_FALSE(minibert::bit_identical(a, b));
}

TEST_CASE("encoder shapes") {
  const auto p = minibert::init_params(tiny(), 3);
  std::vector<std::int32_t> ids(16);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int32_t>(5 + i);
  const auto out = minibert::encode(p, input(2, 8, ids));
  REQUIRE(out.hidden_states.size() == 3);
  for (const auto& h : out.hidden_states) CHECK(h.shape() == ag::Shape{2, 8, 16});
  REQUIRE(out.attention_probs.size() == 2);
  CHECK(out.attention_probs[0].shape() == ag::Shape{8, 8, 8});
}

TEST_CASE("encoder input errors") {
  const auto p = minibert::init_params(tiny(), 3);
  CHECK_THROWS_AS(minibert::encode(p, input(1, 3, {2, 50, 3})), minibert::IndexError);
  CHECK_THROWS_AS(minibert::encode(p, input(1, 3, {2, -1, 3})), minibert::IndexError);
  CHECK_THROWS_AS(minibert::encode(p, input(1, 3, {2, 3})), minibert::DimensionError);
  std::vector<std::int32_t> long_ids(17, 5);
  CHECK_THROWS_AS(minibert::encode(p, input(1, 17, long_ids)), minibert::DimensionError);
}

TEST_CASE("padding does not influence real positions") {
  const auto p = minibert::init_params(tiny(), 4);
  std::vector<std::int32_t> mask{1, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0};
  auto a = minibert::encode(p, input(2, 6, {2, 7, 8, 3, 0, 0, 2, 9, 3, 0, 0, 0}, mask));
  auto b = minibert::encode(p, input(2, 6, {2, 7, 8, 3, 41, 17, 2, 9, 3, 33, 12, 5}, mask));
  for (std::size_t l = 0; l < a.hidden_states.size(); ++l) {
    const auto da = a.hidden_states[l].data();
    const auto db = b.hidden_states[l].data();
    for (std::size_t t = 0; t < 12; ++t) {
      if (mask[t] == 0) continue;
      for (std::size_t k = 0; k < 16; ++k) CHECK(std::abs(da[t * 16 + k] - db[t * 16 + k]) < 1e-6);
    }
  }
}

TEST_CASE("single head attention matches hand computation") {
  ModelConfig c = tiny(1, 2, 1);
  c.ff_dim = 2;
  c.vocab_size = 8;
  c.max_seq_len = 4;
  c.dropout = 0.0;
  auto p = minibert::init_params(c, 1);
  fill(p.position_embedding, 0.0f);
  fill(p.segment_embedding, 0.0f);
  set(p.token_embedding, {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 3, 1, 1, 2, 0, 0});
  auto& layer = p.layers[0];
  set(layer.query_w, {1, 0, 0, 1});
  set(layer.key_w, {1, 0, 0, 1});
  set(layer.value_w, {1, 0, 0, 1});

  const auto out = minibert::encode(p, input(1, 2, {5, 6}));
  // Layer norm over two features maps (a, b) to (sign(a-b), sign(b-a)).
  const double x0[2][2] = {{1, -1}, {-1, 1}};
  const auto h0 = out.hidden_states[0].data();
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k) CHECK(h0[static_cast<std::size_t>(i * 2 + k)] == doctest::Approx(x0[i][k]).epsilon(1e-5));

  const double same = 2.0 / std::sqrt(2.0);
  const double other = -2.0 / std::sqrt(2.0);
  const double p_self = std::exp(same) / (std::exp(same) + std::exp(other));
  const auto probs = out.attention_probs[0].data();
  CHECK(probs[0] == doctest::Approx(p_self).epsilon(1e-5));
  CHECK(probs[1] == doctest::Approx(1 - p_self).epsilon(1e-5));
  CHECK(probs[2] == doctest::Approx(1 - p_self).epsilon(1e-5));
  CHECK(probs[3] == doctest::Approx(p_self).epsilon(1e-5));
  CHECK(p_self == doctest::Approx(0.94423).epsilon(1e-4));
}

TEST_CASE("masked keys get zero attention") {
  const auto p = minibert::init_params(tiny(1), 8);
  const auto out = minibert::encode(p, input(1, 4, {2, 9, 3, 0}, {1, 1, 1, 0}));
  const auto probs = out.attention_probs[0].data();
  for (std::size_t h = 0; h < 4; ++h)
    for (std::size_t i = 0; i < 4; ++i) CHECK(probs[(h * 4 + i) * 4 + 3] == 0.0f);
}

TEST_CASE("mlm head") {
  auto p = minibert::init_params(tiny(), 9);
  const auto out = minibert::encode(p, input(1, 5, {2, 7, 8, 9, 3}));
  const std::vector<std::int32_t> pos{1, 2, 3};
  CHECK(minibert::mlm_logits(p, out, pos).shape() == ag::Shape{3, 50});
  const std::vector<std::int32_t> bad{5};
  CHECK_THROWS_AS(minibert::mlm_logits(p, out, bad), minibert::IndexError);

  fill(p.mlm_w, 0.0f);
  for (std::size_t i = 0; i < 50; ++i) p.mlm_b.mutable_data()[i] = static_cast<float>(i) * 0.1f;
  auto zeroed = minibert::encode(p, input(1, 5, {2, 7, 8, 9, 3}));
  const auto logits = minibert::mlm_logits(p, zeroed, pos);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t v = 0; v < 50; ++v) CHECK(logits[r * 50 + v] == p.mlm_b[v]);
}

TEST_CASE("mlm loss reaches the token embeddings") {
  auto p = minibert::init_params(tiny(), 10);
  const auto out = minibert::encode(p, input(1, 5, {2, 7, 4, 9, 3}));
  const std::vector<std::int32_t> pos{2};
  const std::vector<std::int32_t> target{8};
  ag::backward(ag::cross_entropy(minibert::mlm_logits(p, out, pos), target));
  REQUIRE(p.token_embedding.has_grad());
  const auto g = p.token_embedding.grad();
  for (std::int32_t id : {2, 7, 4, 9, 3}) {
    double norm = 0;
    for (std::size_t k = 0; k < 16; ++k) norm += std::abs(g[static_cast<std::size_t>(id) * 16 + k]);
    CHECK(norm > 0);
  }
  double unused = 0;
  for (std::size_t k = 0; k < 16; ++k) unused += std::abs(g[20 * 16 + k]);
  CHECK(unused == 0);
}

TEST_CASE("nsp head") {
  auto p = minibert::init_params(tiny(), 12);
  const std::vector<std::int32_t> ids{2, 7, 3, 2, 8, 3, 2, 9, 3, 2, 10, 3};
  const auto out = minibert::encode(p, input(4, 3, ids));
  const auto logits = minibert::nsp_logits(p, out);
  CHECK(logits.shape() == ag::Shape{4, 2});

  const std::vector<std::int32_t> permuted{2, 9, 3, 2, 7, 3, 2, 10, 3, 2, 8, 3};
  const auto plogits = minibert::nsp_logits(p, minibert::encode(p, input(4, 3, permuted)));
  const std::size_t order[4] = {2, 0, 3, 1};
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t k = 0; k < 2; ++k) CHECK(plogits[b * 2 + k] == doctest::Approx(logits[order[b] * 2 + k]).epsilon(1e-6));

  fill(p.nsp_w, 0.0f);
  set(p.nsp_b, {0.25f, -0.5f});
  const auto z = minibert::nsp_logits(p, out);
  for (std::size_t b = 0; b < 4; ++b) {
    CHECK(z[b * 2] == 0.25f);
    CHECK(z[b * 2 + 1] == -0.5f);
  }
}

TEST_CASE("classification head sources") {
  auto p = minibert::init_params(tiny(3), 13);
  const auto out = minibert::encode(p, input(2, 3, {2, 7, 3, 2, 8, 3}));
  CHECK(minibert::classify(p, out, HeadSource::last()).shape() == ag::Shape{2, 3});

  const auto last = minibert::classify(p, out, HeadSource::last());
  const auto at3 = minibert::classify(p, out, HeadSource::at_layer(3));
  for (std::size_t i = 0; i < 6; ++i) CHECK(last[i] == at3[i]);
  CHECK_THROWS_AS(minibert::classify(p, out, HeadSource::at_layer(0)), minibert::ParameterError);
  CHECK_THROWS_AS(minibert::classify(p, out, HeadSource::at_layer(4)), minibert::ParameterError);

  const auto l1 = minibert::cls_vectors(out, HeadSource::at_layer(1), 3);
  const auto h1 = out.hidden_states[1].data();
  for (std::size_t k = 0; k < 16; ++k) {
    CHECK(l1[k] == h1[k]);
    CHECK(l1[16 + k] == h1[3 * 16 + k]);
  }
}

TEST_CASE("mean of layers with one layer") {
  const auto p = minibert::init_params(tiny(1), 14);
  const auto out = minibert::encode(p, input(1, 3, {2, 7, 3}));
  const auto mean = minibert::cls_vectors(out, HeadSource::mean_of_layers(), 1);
  const auto e = out.hidden_states[0].data();
  const auto l1 = out.hidden_states[1].data();
  for (std::size_t k = 0; k < 16; ++k) CHECK(mean[k] == doctest::Approx(0.5 * (e[k] + l1[k])).epsilon(1e-6));
  const auto no_emb = minibert::cls_vectors(out, HeadSource::mean_of_layers(false), 1);
  for (std::size_t k = 0; k < 16; ++k) CHECK(no_emb[k] == doctest::Approx(l1[k]).epsilon(1e-6));
}

TEST_CASE("head source parsing") {
  CHECK(HeadSource::parse("last") == HeadSource::last());
  CHECK(HeadSource::parse("layer:2") == HeadSource::at_layer(2));
  CHECK(HeadSource::parse("mean") == HeadSource::mean_of_layers());
  CHECK(HeadSource::parse("mean-no-emb").to_string() == "mean-no-emb");
  CHECK(HeadSource::at_layer(3).to_string() == "layer:3");
  CHECK_THROWS_AS(HeadSource::parse("layer:x"), minibert::ParameterError);
  CHECK_THROWS_AS(HeadSource::parse("first"), minibert::ParameterError);
}

TEST_CASE("regression head") {
  auto p = minibert::init_params(tiny(), 15);
  const auto out = minibert::encode(p, input(3, 3, {2, 7, 3, 2, 8, 3, 2, 9, 3}));
  CHECK(minibert::regress(p, out).shape() == ag::Shape{3});
  fill(p.reg_w, 0.0f);
  set(p.reg_b, {0.3f});
  const auto y = minibert::regress(p, out);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == 0.3f);
}

TEST_CASE("regression overfits sixteen pairs") {
  auto c = tiny(2, 32, 4);
  c.dropout = 0.0;
  auto p = minibert::init_params(c, 16);
  std::vector<std::int32_t> ids;
  std::vector<double> target;
  for (int i = 0; i < 16; ++i) {
    ids.insert(ids.end(), {2, 5 + i, 5 + (i * 7) % 16, 3});
    target.push_back(std::sin(i * 0.9));
  }
  const auto in = input(16, 4, ids);
  auto plan = minibert::preset(minibert::Preset::NA);
  plan.peak_lr = 1e-3;
  auto named = minibert::task_parameters(p, minibert::Task::regression);
  minibert::OptimizerState opt;
  const auto lrs = minibert::group_lrs(plan, plan.peak_lr, c.num_layers);
  double loss = 1e9;
  int steps = 0;
  for (; steps < 300 && loss >= 0.01; ++steps) {
    p.zero_grad();
    auto l = ag::mse_loss(minibert::regress(p, minibert::encode(p, in)), target);
    loss = l.item();
    ag::backward(l);
    minibert::adam_step(named, opt, lrs, {});
  }
  MESSAGE("steps to MSE < 0.01: " << steps);
  CHECK(loss < 0.01);
}
