#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "deepatt/attention.hpp"
#include "deepatt/tensor.hpp"

namespace deepatt {

// The nonlinear sub-layer placed before attention in every encoder layer.
enum class SublayerKind { kFeedForward, kGluConv, kBiLstm, kNone };

std::string to_string(SublayerKind kind);
// Accepts "ffn", "cnn", "rnn", "none". Throws ConfigError otherwise.
SublayerKind parse_sublayer_kind(std::string_view text);

// ReLU(X W1 + b1) W2 + b2
template <typename T>
struct FeedForwardParams {
  Tensor<T> w1;  // [d, h_f]
  Tensor<T> b1;  // [h_f]
  Tensor<T> w2;  // [h_f, d]
  Tensor<T> b2;  // [d]
};

// Dropout with `hidden_keep` is applied after the ReLU.
template <typename T>
Tensor<T> ffn_sublayer(const Tensor<T>& x, const FeedForwardParams<T>& params, const ForwardContext& ctx = {},
                       double hidden_keep = 1.0);

// Centered width-k convolution; filters are [k, d, d] with tap j reading
// position t + j - (k - 1) / 2.
template <typename T>
struct GluConvParams {
  Tensor<T> w;       // linear path filters
  Tensor<T> w_bias;  // [d]
  Tensor<T> v;       // gate path filters
  Tensor<T> v_bias;  // [d]
};

// (X*W + bw) * sigmoid(X*V + bv). With a mask, padded inputs are zeroed so
// they cannot leak into the windows of valid positions.
template <typename T>
Tensor<T> glu_conv_sublayer(const Tensor<T>& x, const GluConvParams<T>& params, const PaddingMask* mask = nullptr);

// Gate layout along the 4d axis: input, forget, candidate, output.
template <typename T>
struct LstmParams {
  Tensor<T> input_weight;      // [d, 4d]
  Tensor<T> recurrent_weight;  // [d, 4d]
  Tensor<T> bias;              // [4d]
};

template <typename T>
struct BiLstmParams {
  LstmParams<T> forward;
  LstmParams<T> backward;
};

// Left-to-right pass over [B, n, d]; padded steps sit after the valid ones.
template <typename T>
Tensor<T> lstm_pass(const Tensor<T>& x, const LstmParams<T>& params);

// y_t = forward_h_t + backward_h_t. The backward direction starts at each
// sentence's last valid token when a mask is given.
template <typename T>
Tensor<T> bilstm_sublayer(const Tensor<T>& x, const BiLstmParams<T>& params, const PaddingMask* mask = nullptr);

// Zeroes padded positions of x[B, n, d].
template <typename T>
Tensor<T> apply_position_mask(const Tensor<T>& x, const PaddingMask& mask);

}  // namespace deepatt
