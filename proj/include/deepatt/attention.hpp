#pragma once

#include <cstddef>
#include <vector>

#include "deepatt/tensor.hpp"

namespace deepatt {

// Divisor inside softmax(QK^T / sqrt(divisor)).
enum class ScaleMode {
  kPerHead,  // sqrt(d / h)
  kFullWidth // sqrt(d)
};

struct MultiHeadConfig {
  std::size_t width = 200;
  std::size_t heads = 8;
  ScaleMode scale_mode = ScaleMode::kPerHead;

  std::size_t head_width() const { return width / heads; }
  double scale_divisor() const;
  // Throws ConfigError unless heads divides width.
  void validate() const;
};

// Per (sentence, position) validity for a padded batch.
struct PaddingMask {
  std::size_t batch = 0;
  std::size_t max_len = 0;
  std::vector<std::size_t> lengths;
  std::vector<unsigned char> valid;  // batch * max_len

  bool is_valid(std::size_t b, std::size_t t) const { return valid[b * max_len + t] != 0; }
};

inline constexpr double kMaskedLogit = -1e9;

// Throws DataError for a zero length or one exceeding max_len.
PaddingMask build_padding_mask(const std::vector<std::size_t>& lengths, std::size_t max_len);

// [B, n, n] additive bias: 0 on valid keys, kMaskedLogit on padded keys.
template <typename T>
Tensor<T> key_mask_bias(const PaddingMask& mask);

template <typename T>
struct AttentionOutput {
  Tensor<T> values;   // [B, n, d']
  Tensor<T> weights;  // [B, n, n], after softmax (before dropout)
};

// softmax(Q K^T / sqrt(divisor)) V over [B, n, d'] or [n, d'] operands.
// `mask` may be null (all keys valid). Dropout with `attention_keep` is
// applied to the probability matrix.
template <typename T>
AttentionOutput<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                                const PaddingMask* mask, double scale_divisor,
                                                const ForwardContext& ctx = {}, double attention_keep = 1.0);

// Concatenated per-head projections: query/key/value are [d, d] where
// columns [i*d/h, (i+1)*d/h) hold head i's map; output is the [d, d] mix.
template <typename T>
struct AttentionParams {
  Tensor<T> query;
  Tensor<T> key;
  Tensor<T> value;
  Tensor<T> output;
};

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const AttentionParams<T>& params, const MultiHeadConfig& config,
                               const PaddingMask* mask, const ForwardContext& ctx = {},
                               double attention_keep = 1.0);

}  // namespace deepatt
