#include "deepatt/attention.hpp"

#include <cmath>
#include <string>

namespace deepatt {

double MultiHeadConfig::scale_divisor() const {
  return scale_mode == ScaleMode::kPerHead ? static_cast<double>(head_width()) : static_cast<double>(width);
}

void MultiHeadConfig::validate() const {
  if (heads == 0 || width == 0 || width % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(width) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

PaddingMask build_padding_mask(const std::vector<std::size_t>& lengths, std::size_t max_len) {
  PaddingMask mask;
  mask.batch = lengths.size();
  mask.max_len = max_len;
  mask.lengths = lengths;
  mask.valid.assign(lengths.size() * max_len, 0);
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    if (lengths[b] == 0) throw DataError("padding mask: sentence " + std::to_string(b) + " has zero length");
    if (lengths[b] > max_len) {
      throw DataError("padding mask: sentence " + std::to_string(b) + " has length " + std::to_string(lengths[b]) +
                      " > max_len " + std::to_string(max_len));
    }
    for (std::size_t t = 0; t < lengths[b]; ++t) mask.valid[b * max_len + t] = 1;
  }
  return mask;
}

template <typename T>
Tensor<T> key_mask_bias(const PaddingMask& mask) {
  const std::size_t n = mask.max_len;
  std::vector<T> bias(mask.batch * n * n, T(0));
  for (std::size_t b = 0; b < mask.batch; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (!mask.is_valid(b, j)) bias[(b * n + i) * n + j] = T(kMaskedLogit);
  return Tensor<T>(Shape{mask.batch, n, n}, std::move(bias));
}

template <typename T>
AttentionOutput<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                                const PaddingMask* mask, double scale_divisor,
                                                const ForwardContext& ctx, double attention_keep) {
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("attention: Q " + shape_to_string(q.shape()) + ", K " + shape_to_string(k.shape()) + ", V " +
                     shape_to_string(v.shape()) + " must share a shape");
  }
  if (q.rank() == 2) {
    const Shape batched{1, q.dim(0), q.dim(1)};
    auto out = scaled_dot_product_attention(reshape(q, batched), reshape(k, batched), reshape(v, batched), mask,
                                            scale_divisor, ctx, attention_keep);
    return {reshape(out.values, q.shape()), reshape(out.weights, Shape{q.dim(0), q.dim(0)})};
  }
  if (q.rank() != 3) throw ShapeError("attention: expected [B, n, d'] operands, got " + shape_to_string(q.shape()));
  if (!(scale_divisor > 0)) throw ConfigError("attention: scale divisor must be positive");

  Tensor<T> logits = scale(matmul(q, transpose_last2(k)), T(1.0 / std::sqrt(scale_divisor)));
  if (mask != nullptr) {
    if (mask->batch != q.dim(0) || mask->max_len != q.dim(1)) {
      throw ShapeError("attention: padding mask [" + std::to_string(mask->batch) + "x" +
                       std::to_string(mask->max_len) + "] does not match operands " + shape_to_string(q.shape()));
    }
    logits = add(logits, key_mask_bias<T>(*mask));
  }
  Tensor<T> weights = softmax_lastdim(logits);
  Tensor<T> values = matmul(dropout(weights, attention_keep, ctx), v);
  return {values, weights};
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const AttentionParams<T>& params, const MultiHeadConfig& config,
                               const PaddingMask* mask, const ForwardContext& ctx, double attention_keep) {
  config.validate();
  if (x.rank() < 2 || x.shape().back() != config.width) {
    throw ShapeError("multi_head_attention: input " + shape_to_string(x.shape()) + " does not have width " +
                     std::to_string(config.width));
  }
  const std::size_t dk = config.head_width();
  const Tensor<T> queries = matmul(x, params.query);
  const Tensor<T> keys = matmul(x, params.key);
  const Tensor<T> values = matmul(x, params.value);
  std::vector<Tensor<T>> heads;
  heads.reserve(config.heads);
  for (std::size_t h = 0; h < config.heads; ++h) {
    auto head = scaled_dot_product_attention(slice_lastdim(queries, h * dk, dk), slice_lastdim(keys, h * dk, dk),
                                             slice_lastdim(values, h * dk, dk), mask, config.scale_divisor(), ctx,
                                             attention_keep);
    heads.push_back(head.values);
  }
  return matmul(concat_lastdim(heads), params.output);
}

template Tensor<float> key_mask_bias<float>(const PaddingMask&);
template Tensor<double> key_mask_bias<double>(const PaddingMask&);
template AttentionOutput<float> scaled_dot_product_attention<float>(const Tensor<float>&, const Tensor<float>&,
                                                                    const Tensor<float>&, const PaddingMask*, double,
                                                                    const ForwardContext&, double);
template AttentionOutput<double> scaled_dot_product_attention<double>(const Tensor<double>&, const Tensor<double>&,
                                                                      const Tensor<double>&, const PaddingMask*,
                                                                      double, const ForwardContext&, double);
template Tensor<float> multi_head_attention<float>(const Tensor<float>&, const AttentionParams<float>&,
                                                   const MultiHeadConfig&, const PaddingMask*, const ForwardContext&,
                                                   double);
template Tensor<double> multi_head_attention<double>(const Tensor<double>&, const AttentionParams<double>&,
                                                     const MultiHeadConfig&, const PaddingMask*,
                                                     const ForwardContext&, double);

}  // namespace deepatt
