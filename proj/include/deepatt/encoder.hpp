#pragma once

// The full tagger network: word + predicate-mask embeddings, a position
// signal, N layers of (nonlinear sub-layer, self-attention) each wrapped in
// residual + layer norm, and a per-token softmax projection.

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "deepatt/attention.hpp"
#include "deepatt/sublayers.hpp"
#include "deepatt/tensor.hpp"

namespace deepatt {

enum class PositionMode { kTiming, kEmbedding, kNone };
// How the Gaussian init spread 1/sqrt(d) is read: as a variance or as a std.
enum class InitStdMode { kVariance, kStd };

std::string to_string(PositionMode mode);
std::string to_string(ScaleMode mode);
std::string to_string(InitStdMode mode);
PositionMode parse_position_mode(std::string_view text);
ScaleMode parse_scale_mode(std::string_view text);
InitStdMode parse_init_std_mode(std::string_view text);

struct ModelConfig {
  std::size_t depth = 10;
  std::size_t width = 200;
  std::size_t heads = 8;
  std::size_t ffn_width = 800;
  SublayerKind sublayer = SublayerKind::kFeedForward;
  PositionMode position = PositionMode::kTiming;
  std::size_t word_dim = 100;
  std::size_t mask_dim = 100;
  double residual_keep = 0.8;
  double attention_keep = 0.9;
  double relu_keep = 0.9;
  double label_smoothing = 0.1;
  ScaleMode scale_mode = ScaleMode::kPerHead;
  InitStdMode init_std_mode = InitStdMode::kVariance;
  std::size_t conv_width = 3;
  std::size_t max_positions = 512;

  MultiHeadConfig attention() const { return {width, heads, scale_mode}; }
  // Standard deviation of the Gaussian used for non-orthogonal parameters.
  double init_std() const;
  void validate() const;

  // `key=value` lines in a fixed order.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  // Returns false when `key` is not a model key.
  bool set(std::string_view key, std::string_view value);

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> bias;
};

template <typename T>
struct EncoderLayerParams {
  std::optional<FeedForwardParams<T>> ffn;
  std::optional<GluConvParams<T>> conv;
  std::optional<BiLstmParams<T>> lstm;
  std::optional<LayerNormParams<T>> sublayer_norm;
  AttentionParams<T> attention;
  LayerNormParams<T> attention_norm;
};

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;  // aliases the model's storage
};

template <typename T>
struct ModelParameters {
  Tensor<T> word_embedding;  // [|V|, word_dim]
  Tensor<T> mask_embedding;  // [2, mask_dim]
  std::optional<Tensor<T>> position_embedding;  // [max_positions, d]
  std::vector<EncoderLayerParams<T>> layers;
  Tensor<T> output_weight;  // [d, K]

  // Zero-filled parameters with the shapes implied by config and sizes.
  static ModelParameters zeros(const ModelConfig& config, std::size_t vocab_size, std::size_t num_tags);

  // Every tensor with a stable hierarchical name, in a fixed order.
  std::vector<NamedParameter<T>> named() const;
  std::size_t scalar_count() const;
  std::size_t vocab_size() const { return word_embedding.dim(0); }
  std::size_t num_tags() const { return output_weight.dim(1); }
  // Deep copy with fresh storage.
  ModelParameters clone() const;
  void zero_grad();
};

// Random orthogonal [rows, cols] matrix: QR of a Gaussian matrix in the
// taller orientation with the signs of R's diagonal folded into Q.
std::vector<double> orthogonal_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

template <typename T>
ModelParameters<T> init_parameters(const ModelConfig& config, std::size_t vocab_size, std::size_t num_tags,
                                   std::mt19937_64& rng);

// Channel 2i = sin(t / 10000^(2i/d)), channel 2i+1 = cos(...). d must be even.
std::vector<double> timing_signal(std::size_t t, std::size_t width);

// Token ids for a padded batch, row-major [batch, max_len].
struct Batch {
  std::size_t size = 0;
  std::size_t max_len = 0;
  std::vector<std::size_t> words;
  std::vector<std::size_t> masks;
  std::vector<int> tags;  // -1 on padding or when gold tags are absent
  PaddingMask padding;
};

// [B, n, word_dim + mask_dim]: per-position concatenation of the two lookups.
template <typename T>
Tensor<T> embed_inputs(const Batch& batch, const ModelParameters<T>& params);

// Adds timing signal or learned position embedding according to config.
template <typename T>
Tensor<T> add_position_signal(const Tensor<T>& embedded, const ModelConfig& config,
                              const ModelParameters<T>& params);

// N layers of X <- LN(X + Drop(Sub(X))); X <- LN(X + Drop(Att(X))).
template <typename T>
Tensor<T> encode(const Tensor<T>& input, const ModelConfig& config, const ModelParameters<T>& params,
                 const PaddingMask* mask, const ForwardContext& ctx = {});

// Full forward pass to unnormalized tag scores [B, n, K].
template <typename T>
Tensor<T> forward_logits(const Batch& batch, const ModelConfig& config, const ModelParameters<T>& params,
                         const ForwardContext& ctx = {});

}  // namespace deepatt
