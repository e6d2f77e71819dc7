#pragma once

// BERT-style encoder with masked-LM, next-sentence, classification and
// regression heads.

#include <cstdint>
#include <string>
#include <vector>

#include "minibert/ops.hpp"
#include "minibert/rng.hpp"

namespace minibert {

struct ModelConfig {
  int num_layers = 4;
  int hidden = 64;
  int num_heads = 4;
  int ff_dim = 256;
  int vocab_size = 2000;
  int max_seq_len = 64;
  double dropout = 0.1;
  int type_vocab = 2;
  int num_classes = 3;

  // Throws ParameterError on an inconsistent configuration.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct EncoderLayerParams {
  Tensor query_w, query_b, key_w, key_b, value_w, value_b, output_w, output_b;
  Tensor attention_norm_gain, attention_norm_bias;
  Tensor ff_in_w, ff_in_b, ff_out_w, ff_out_b;
  Tensor output_norm_gain, output_norm_bias;
};

// A parameter tensor with its dotted name and its layer group.
struct NamedParam {
  std::string name;
  std::string group;
  Tensor tensor;
};

// Which hidden state feeds the classification head.
struct HeadSource {
  enum class Kind { layer, mean };
  Kind kind = Kind::layer;
  int layer = -1;  // 1..L; -1 means the last layer
  bool include_embeddings = true;  // only for Kind::mean

  static HeadSource last() { return {}; }
  static HeadSource at_layer(int k) { return {Kind::layer, k, true}; }
  static HeadSource mean_of_layers(bool with_embeddings = true) { return {Kind::mean, -1, with_embeddings}; }

  // "last", "layer:K", "mean", "mean-no-emb"
  static HeadSource parse(const std::string& text);
  std::string to_string() const;

  bool operator==(const HeadSource&) const = default;
};

// Layer group names in bottom-to-top order: embeddings, encoder.1..L, head.
std::vector<std::string> layer_groups(int num_layers);
std::string encoder_group(int layer);

class ModelParams {
 public:
  ModelConfig config;
  Tensor token_embedding, position_embedding, segment_embedding;
  Tensor embedding_norm_gain, embedding_norm_bias;
  std::vector<EncoderLayerParams> layers;
  Tensor mlm_w, mlm_b;
  Tensor nsp_w, nsp_b;
  Tensor cls_w, cls_b;
  Tensor reg_w, reg_b;

  ModelParams() = default;
  ModelParams(ModelParams&&) = default;
  ModelParams& operator=(ModelParams&&) = default;
  // Tensors are shared handles; use clone() for an independent copy.
  ModelParams(const ModelParams&) = delete;
  ModelParams& operator=(const ModelParams&) = delete;

  ModelParams clone() const;

  // Every learnable tensor, in a fixed order.
  std::vector<NamedParam> named_parameters() const;

  void zero_grad();
  std::size_t parameter_count() const;
};

// Truncated-normal (sigma 0.02) weights, zero biases, unit norm gains.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

bool bit_identical(const ModelParams& a, const ModelParams& b);

// Dropout is active only when training is set; rng must then be non-null.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

struct EncoderInput {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> token_ids;      // [batch*seq]
  std::vector<std::int32_t> segment_ids;    // [batch*seq]
  std::vector<std::int32_t> attention_mask; // [batch*seq], 1 = real token
};

struct EncoderOutput {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<Tensor> hidden_states;    // L+1 tensors [batch, seq, H]
  std::vector<Tensor> attention_probs;  // L tensors [batch*heads, seq, seq]
  std::vector<std::int32_t> attention_mask;

  const Tensor& last() const { return hidden_states.back(); }
};

EncoderOutput encode(const ModelParams& params, const EncoderInput& input, ForwardContext ctx = {});

// positions are flat indices b*seq + s into the batch.
Tensor mlm_logits(const ModelParams& params, const EncoderOutput& out, std::span<const std::int32_t> positions);
Tensor nsp_logits(const ModelParams& params, const EncoderOutput& out);
Tensor classify(const ModelParams& params, const EncoderOutput& out, const HeadSource& source,
                ForwardContext ctx = {});
Tensor regress(const ModelParams& params, const EncoderOutput& out, ForwardContext ctx = {});

// [CLS] vectors ([batch, H]) of the selected hidden state.
Tensor cls_vectors(const EncoderOutput& out, const HeadSource& source, int num_layers);

}  // namespace minibert
