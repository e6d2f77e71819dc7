#include "minibert/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

namespace minibert {

namespace {

constexpr float kNormEpsilon = 1e-12f;

Tensor weight(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<float> v(rows * cols);
  for (auto& x : v) x = static_cast<float>(rng.truncated_normal(0.02));
  return Tensor::from({rows, cols}, std::move(v), true);
}

Tensor zeros(std::size_t n) { return Tensor::zeros({n}, true); }
Tensor ones(std::size_t n) { return Tensor::filled({n}, 1.0f, true); }

Tensor flat(const Tensor& hidden) {
  return ag::reshape(hidden, {hidden.dim(0) * hidden.dim(1), hidden.dim(2)});
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ParameterError("model config: " + msg); };
  if (num_layers <= 0) fail("num_layers must be positive");
  if (hidden <= 0 || num_heads <= 0) fail("hidden and num_heads must be positive");
  if (hidden % num_heads != 0) fail("hidden must be divisible by num_heads");
  if (ff_dim <= 0) fail("ff_dim must be positive");
  if (vocab_size <= 5) fail("vocab_size must exceed the 5 special tokens");
  if (max_seq_len < 3) fail("max_seq_len must be at least 3");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0,1)");
  if (type_vocab != 2) fail("type_vocab must be 2");
  if (num_classes < 2) fail("num_classes must be at least 2");
}

HeadSource HeadSource::parse(const std::string& text) {
  if (text == "last") return last();
  if (text == "mean") return mean_of_layers(true);
  if (text == "mean-no-emb") return mean_of_layers(false);
  if (text.rfind("layer:", 0) == 0) {
    try {
      std::size_t used = 0;
      const int k = std::stoi(text.substr(6), &used);
      if (used == text.size() - 6) return at_layer(k);
    } catch (const std::exception&) {
    }
  }
  throw ParameterError("unknown head source '" + text + "' (expected last, layer:K, mean, mean-no-emb)");
}

std::string HeadSource::to_string() const {
  if (kind == Kind::mean) return include_embeddings ? "mean" : "mean-no-emb";
  if (layer < 0) return "last";
  return "layer:" + std::to_string(layer);
}

std::string encoder_group(int layer) { return "encoder." + std::to_string(layer); }

std::vector<std::string> layer_groups(int num_layers) {
  std::vector<std::string> groups{"embeddings"};
  for (int l = 1; l <= num_layers; ++l) groups.push_back(encoder_group(l));
  groups.push_back("head");
  return groups;
}

std::vector<NamedParam> ModelParams::named_parameters() const {
  std::vector<NamedParam> out;
  auto add = [&](std::string group, std::string name, const Tensor& t) {
    out.push_back({group + "." + name, std::move(group), t});
  };
  add("embeddings", "token", token_embedding);
  add("embeddings", "position", position_embedding);
  add("embeddings", "segment", segment_embedding);
  add("embeddings", "norm.gain", embedding_norm_gain);
  add("embeddings", "norm.bias", embedding_norm_bias);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string g = encoder_group(static_cast<int>(i) + 1);
    add(g, "attention.query.weight", l.query_w);
    add(g, "attention.query.bias", l.query_b);
    add(g, "attention.key.weight", l.key_w);
    add(g, "attention.key.bias", l.key_b);
    add(g, "attention.value.weight", l.value_w);
    add(g, "attention.value.bias", l.value_b);
    add(g, "attention.output.weight", l.output_w);
    add(g, "attention.output.bias", l.output_b);
    add(g, "attention.norm.gain", l.attention_norm_gain);
    add(g, "attention.norm.bias", l.attention_norm_bias);
    add(g, "ff.in.weight", l.ff_in_w);
    add(g, "ff.in.bias", l.ff_in_b);
    add(g, "ff.out.weight", l.ff_out_w);
    add(g, "ff.out.bias", l.ff_out_b);
    add(g, "output.norm.gain", l.output_norm_gain);
    add(g, "output.norm.bias", l.output_norm_bias);
  }
  add("head", "mlm.weight", mlm_w);
  add("head", "mlm.bias", mlm_b);
  add("head", "nsp.weight", nsp_w);
  add("head", "nsp.bias", nsp_b);
  add("head", "cls.weight", cls_w);
  add("head", "cls.bias", cls_b);
  add("head", "reg.weight", reg_w);
  add("head", "reg.bias", reg_b);
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams copy;
  copy.config = config;
  copy.token_embedding = token_embedding.clone();
  copy.position_embedding = position_embedding.clone();
  copy.segment_embedding = segment_embedding.clone();
  copy.embedding_norm_gain = embedding_norm_gain.clone();
  copy.embedding_norm_bias = embedding_norm_bias.clone();
  for (const auto& l : layers) {
    copy.layers.push_back({l.query_w.clone(), l.query_b.clone(), l.key_w.clone(), l.key_b.clone(),
                           l.value_w.clone(), l.value_b.clone(), l.output_w.clone(), l.output_b.clone(),
                           l.attention_norm_gain.clone(), l.attention_norm_bias.clone(), l.ff_in_w.clone(),
                           l.ff_in_b.clone(), l.ff_out_w.clone(), l.ff_out_b.clone(),
                           l.output_norm_gain.clone(), l.output_norm_bias.clone()});
  }
  copy.mlm_w = mlm_w.clone();
  copy.mlm_b = mlm_b.clone();
  copy.nsp_w = nsp_w.clone();
  copy.nsp_b = nsp_b.clone();
  copy.cls_w = cls_w.clone();
  copy.cls_b = cls_b.clone();
  copy.reg_w = reg_w.clone();
  copy.reg_b = reg_b.clone();
  return copy;
}

void ModelParams::zero_grad() {
  for (auto& p : named_parameters()) p.tensor.zero_grad();
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const auto h = static_cast<std::size_t>(config.hidden);
  const auto ff = static_cast<std::size_t>(config.ff_dim);
  const auto v = static_cast<std::size_t>(config.vocab_size);

  ModelParams p;
  p.config = config;
  p.token_embedding = weight(rng, v, h);
  p.position_embedding = weight(rng, static_cast<std::size_t>(config.max_seq_len), h);
  p.segment_embedding = weight(rng, static_cast<std::size_t>(config.type_vocab), h);
  p.embedding_norm_gain = ones(h);
  p.embedding_norm_bias = zeros(h);
  for (int l = 0; l < config.num_layers; ++l) {
    EncoderLayerParams layer;
    layer.query_w = weight(rng, h, h);
    layer.query_b = zeros(h);
    layer.key_w = weight(rng, h, h);
    layer.key_b = zeros(h);
    layer.value_w = weight(rng, h, h);
    layer.value_b = zeros(h);
    layer.output_w = weight(rng, h, h);
    layer.output_b = zeros(h);
    layer.attention_norm_gain = ones(h);
    layer.attention_norm_bias = zeros(h);
    layer.ff_in_w = weight(rng, h, ff);
    layer.ff_in_b = zeros(ff);
    layer.ff_out_w = weight(rng, ff, h);
    layer.ff_out_b = zeros(h);
    layer.output_norm_gain = ones(h);
    layer.output_norm_bias = zeros(h);
    p.layers.push_back(std::move(layer));
  }
  p.mlm_w = weight(rng, h, v);
  p.mlm_b = zeros(v);
  p.nsp_w = weight(rng, h, 2);
  p.nsp_b = zeros(2);
  p.cls_w = weight(rng, h, static_cast<std::size_t>(config.num_classes));
  p.cls_b = zeros(static_cast<std::size_t>(config.num_classes));
  p.reg_w = weight(rng, h, 1);
  p.reg_b = zeros(1);
  return p;
}

bool bit_identical(const ModelParams& a, const ModelParams& b) {
  if (!(a.config == b.config)) return false;
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name || pa[i].tensor.shape() != pb[i].tensor.shape()) return false;
    const auto da = pa[i].tensor.data();
    const auto db = pb[i].tensor.data();
    if (!std::equal(da.begin(), da.end(), db.begin(), [](float x, float y) {
          return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
        }))
      return false;
  }
  return true;
}

EncoderOutput encode(const ModelParams& params, const EncoderInput& input, ForwardContext ctx) {
  const ModelConfig& cfg = params.config;
  const std::size_t batch = input.batch, seq = input.seq;
  const std::size_t tokens = batch * seq;
  if (batch == 0 || seq == 0) throw DimensionError("encode: empty batch");
  if (input.token_ids.size() != tokens || input.segment_ids.size() != tokens ||
      input.attention_mask.size() != tokens) {
    throw DimensionError("encode: token, segment and mask arrays must all hold batch*seq entries");
  }
  if (seq > static_cast<std::size_t>(cfg.max_seq_len)) {
    throw DimensionError("encode: sequence length " + std::to_string(seq) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
  }
  for (std::size_t i = 0; i < tokens; ++i) {
    if (input.token_ids[i] < 0 || input.token_ids[i] >= cfg.vocab_size) {
      throw IndexError("encode: token id " + std::to_string(input.token_ids[i]) + " outside vocabulary");
    }
    if (input.segment_ids[i] < 0 || input.segment_ids[i] >= cfg.type_vocab) {
      throw IndexError("encode: segment id " + std::to_string(input.segment_ids[i]) + " invalid");
    }
    if (input.attention_mask[i] != 0 && input.attention_mask[i] != 1) {
      throw ParameterError("encode: attention mask must be 0/1");
    }
  }

  const auto h = static_cast<std::size_t>(cfg.hidden);
  const auto heads = static_cast<std::size_t>(cfg.num_heads);
  const std::size_t head_dim = h / heads;

  std::vector<std::int32_t> positions(tokens);
  for (std::size_t i = 0; i < tokens; ++i) positions[i] = static_cast<std::int32_t>(i % seq);

  Tensor x = ag::add(ag::add(ag::embedding_lookup(params.token_embedding, input.token_ids),
                             ag::embedding_lookup(params.position_embedding, positions)),
                     ag::embedding_lookup(params.segment_embedding, input.segment_ids));
  x = ag::layer_norm(x, params.embedding_norm_gain, params.embedding_norm_bias, kNormEpsilon);
  x = ag::dropout(x, cfg.dropout, ctx.training, ctx.rng);

  EncoderOutput out;
  out.batch = batch;
  out.seq = seq;
  out.attention_mask = input.attention_mask;
  out.hidden_states.push_back(ag::reshape(x, {batch, seq, h}));

  // Additive key mask: -inf on padded keys so they get exactly zero weight.
  std::vector<float> mask_values(batch * heads * seq * seq, 0.0f);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t a = 0; a < heads; ++a)
      for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t j = 0; j < seq; ++j)
          if (input.attention_mask[b * seq + j] == 0)
            mask_values[((b * heads + a) * seq + i) * seq + j] = -std::numeric_limits<float>::infinity();
  const Tensor key_mask = Tensor::from({batch * heads, seq, seq}, std::move(mask_values));
  const float score_scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

  auto split_heads = [&](const Tensor& t) {
    return ag::reshape(ag::swap_axes_12(ag::reshape(t, {batch, seq, heads, head_dim})),
                       {batch * heads, seq, head_dim});
  };

  for (const auto& layer : params.layers) {
    const Tensor q = split_heads(ag::linear(x, layer.query_w, layer.query_b));
    const Tensor k = split_heads(ag::linear(x, layer.key_w, layer.key_b));
    const Tensor v = split_heads(ag::linear(x, layer.value_w, layer.value_b));
    Tensor scores = ag::scale(ag::batched_matmul(q, k, true), score_scale);
    Tensor probs = ag::softmax(ag::add(scores, key_mask), 2);
    out.attention_probs.push_back(probs);
    probs = ag::dropout(probs, cfg.dropout, ctx.training, ctx.rng);
    Tensor context = ag::batched_matmul(probs, v);
    context = ag::reshape(ag::swap_axes_12(ag::reshape(context, {batch, heads, seq, head_dim})), {tokens, h});
    Tensor attended = ag::linear(context, layer.output_w, layer.output_b);
    attended = ag::dropout(attended, cfg.dropout, ctx.training, ctx.rng);
    x = ag::layer_norm(ag::add(x, attended), layer.attention_norm_gain, layer.attention_norm_bias, kNormEpsilon);

    Tensor ff = ag::linear(ag::gelu(ag::linear(x, layer.ff_in_w, layer.ff_in_b)), layer.ff_out_w, layer.ff_out_b);
    ff = ag::dropout(ff, cfg.dropout, ctx.training, ctx.rng);
    x = ag::layer_norm(ag::add(x, ff), layer.output_norm_gain, layer.output_norm_bias, kNormEpsilon);
    out.hidden_states.push_back(ag::reshape(x, {batch, seq, h}));
  }
  return out;
}

Tensor mlm_logits(const ModelParams& params, const EncoderOutput& out, std::span<const std::int32_t> positions) {
  const std::size_t tokens = out.batch * out.seq;
  for (std::int32_t p : positions) {
    if (p < 0 || static_cast<std::size_t>(p) >= tokens) {
      throw IndexError("mlm_logits: position " + std::to_string(p) + " outside batch of " +
                       std::to_string(tokens) + " tokens");
    }
  }
  const Tensor rows = ag::gather_rows(flat(out.last()), positions);
  return ag::linear(rows, params.mlm_w, params.mlm_b);
}

namespace {

std::vector<std::int32_t> cls_rows(const EncoderOutput& out) {
  std::vector<std::int32_t> rows(out.batch);
  for (std::size_t b = 0; b < out.batch; ++b) rows[b] = static_cast<std::int32_t>(b * out.seq);
  return rows;
}

}  // namespace

Tensor cls_vectors(const EncoderOutput& out, const HeadSource& source, int num_layers) {
  const auto rows = cls_rows(out);
  if (source.kind == HeadSource::Kind::layer) {
    const int k = source.layer < 0 ? num_layers : source.layer;
    if (k < 1 || k > num_layers) {
      throw ParameterError("head source layer " + std::to_string(k) + " outside 1.." + std::to_string(num_layers));
    }
    return ag::gather_rows(flat(out.hidden_states[static_cast<std::size_t>(k)]), rows);
  }
  const std::size_t first = source.include_embeddings ? 0 : 1;
  Tensor total = ag::gather_rows(flat(out.hidden_states[first]), rows);
  for (std::size_t i = first + 1; i < out.hidden_states.size(); ++i)
    total = ag::add(total, ag::gather_rows(flat(out.hidden_states[i]), rows));
  return ag::scale(total, 1.0f / static_cast<float>(out.hidden_states.size() - first));
}

Tensor nsp_logits(const ModelParams& params, const EncoderOutput& out) {
  return ag::linear(cls_vectors(out, HeadSource::last(), params.config.num_layers), params.nsp_w, params.nsp_b);
}

Tensor classify(const ModelParams& params, const EncoderOutput& out, const HeadSource& source, ForwardContext ctx) {
  Tensor cls = cls_vectors(out, source, params.config.num_layers);
  cls = ag::dropout(cls, params.config.dropout, ctx.training, ctx.rng);
  return ag::linear(cls, params.cls_w, params.cls_b);
}

Tensor regress(const ModelParams& params, const EncoderOutput& out, ForwardContext ctx) {
  Tensor cls = cls_vectors(out, HeadSource::last(), params.config.num_layers);
  cls = ag::dropout(cls, params.config.dropout, ctx.training, ctx.rng);
  return ag::reshape(ag::linear(cls, params.reg_w, params.reg_b), {out.batch});
}

}  // namespace minibert
