#include "deepatt/sublayers.hpp"

#include <string>

namespace deepatt {

std::string to_string(SublayerKind kind) {
  switch (kind) {
    case SublayerKind::kFeedForward: return "ffn";
    case SublayerKind::kGluConv: return "cnn";
    case SublayerKind::kBiLstm: return "rnn";
    case SublayerKind::kNone: return "none";
  }
  return "none";
}

SublayerKind parse_sublayer_kind(std::string_view text) {
  if (text == "ffn") return SublayerKind::kFeedForward;
  if (text == "cnn") return SublayerKind::kGluConv;
  if (text == "rnn") return SublayerKind::kBiLstm;
  if (text == "none") return SublayerKind::kNone;
  throw ConfigError("unknown sublayer kind '" + std::string(text) + "' (expected ffn, cnn, rnn or none)");
}

namespace {

// Runs `f` on a [B, n, d] view of a [n, d] or [B, n, d] input.
template <typename T, typename F>
Tensor<T> as_batched(const Tensor<T>& x, const char* op, F f) {
  if (x.rank() == 3) return f(x);
  if (x.rank() == 2) return reshape(f(reshape(x, Shape{1, x.dim(0), x.dim(1)})), x.shape());
  throw ShapeError(std::string(op) + ": expected [n, d] or [B, n, d], got " + shape_to_string(x.shape()));
}

void require_mask_matches(const char* op, const PaddingMask& mask, const Shape& s) {
  if (mask.batch != s[0] || mask.max_len != s[1]) {
    throw ShapeError(std::string(op) + ": padding mask does not match input " + shape_to_string(s));
  }
}

}  // namespace

template <typename T>
Tensor<T> apply_position_mask(const Tensor<T>& x, const PaddingMask& mask) {
  require_mask_matches("apply_position_mask", mask, x.shape());
  const std::size_t d = x.dim(2);
  std::vector<T> keep(x.numel());
  for (std::size_t b = 0; b < mask.batch; ++b)
    for (std::size_t t = 0; t < mask.max_len; ++t)
      for (std::size_t j = 0; j < d; ++j) keep[(b * mask.max_len + t) * d + j] = mask.is_valid(b, t) ? T(1) : T(0);
  return mul(x, Tensor<T>(x.shape(), std::move(keep)));
}

template <typename T>
Tensor<T> ffn_sublayer(const Tensor<T>& x, const FeedForwardParams<T>& params, const ForwardContext& ctx,
                       double hidden_keep) {
  const Tensor<T> hidden = relu(add_bias(matmul(x, params.w1), params.b1));
  return add_bias(matmul(dropout(hidden, hidden_keep, ctx), params.w2), params.b2);
}

template <typename T>
Tensor<T> glu_conv_sublayer(const Tensor<T>& x, const GluConvParams<T>& params, const PaddingMask* mask) {
  return as_batched<T>(x, "glu_conv_sublayer", [&](const Tensor<T>& xb) {
    const Shape& fs = params.w.shape();
    if (fs.size() != 3 || fs != params.v.shape() || fs[1] != xb.dim(2) || fs[2] != xb.dim(2)) {
      throw ShapeError("glu_conv_sublayer: filters " + shape_to_string(fs) + " / " +
                       shape_to_string(params.v.shape()) + " do not fit input " + shape_to_string(xb.shape()));
    }
    const std::size_t k = fs[0], d = fs[1];
    if (k % 2 == 0) throw ConfigError("glu_conv_sublayer: filter width must be odd, got " + std::to_string(k));
    Tensor<T> input = xb;
    if (mask != nullptr) input = apply_position_mask(xb, *mask);
    const auto center = static_cast<std::ptrdiff_t>((k - 1) / 2);
    std::vector<Tensor<T>> taps;
    taps.reserve(k);
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t offset = static_cast<std::ptrdiff_t>(j) - center;
      taps.push_back(offset == 0 ? input : time_shift(input, offset));
    }
    // Column block j of the window lines up with filter tap j.
    const Tensor<T> window = k == 1 ? taps[0] : concat_lastdim(taps);
    const Tensor<T> linear = add_bias(matmul(window, reshape(params.w, Shape{k * d, d})), params.w_bias);
    const Tensor<T> gate = add_bias(matmul(window, reshape(params.v, Shape{k * d, d})), params.v_bias);
    return mul(linear, sigmoid(gate));
  });
}

template <typename T>
Tensor<T> lstm_pass(const Tensor<T>& x, const LstmParams<T>& params) {
  if (x.rank() != 3) throw ShapeError("lstm_pass: expected [B, n, d], got " + shape_to_string(x.shape()));
  const std::size_t batch = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (params.input_weight.shape() != Shape{d, 4 * d} || params.recurrent_weight.shape() != Shape{d, 4 * d} ||
      params.bias.shape() != Shape{4 * d}) {
    throw ShapeError("lstm_pass: parameters do not match width " + std::to_string(d));
  }
  // Input projections for all steps at once; only the recurrence is serial.
  const Tensor<T> projected = add_bias(matmul(x, params.input_weight), params.bias);
  Tensor<T> h = Tensor<T>::zeros(Shape{batch, d});
  Tensor<T> c = Tensor<T>::zeros(Shape{batch, d});
  std::vector<Tensor<T>> outputs;
  outputs.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    Tensor<T> z = select_time(projected, t);
    if (t > 0) z = add(z, matmul(h, params.recurrent_weight));
    const Tensor<T> in_gate = sigmoid(slice_lastdim(z, 0, d));
    const Tensor<T> forget_gate = sigmoid(slice_lastdim(z, d, d));
    const Tensor<T> candidate = tanh(slice_lastdim(z, 2 * d, d));
    const Tensor<T> out_gate = sigmoid(slice_lastdim(z, 3 * d, d));
    c = t > 0 ? add(mul(forget_gate, c), mul(in_gate, candidate)) : mul(in_gate, candidate);
    h = mul(out_gate, tanh(c));
    outputs.push_back(h);
  }
  return stack_time(outputs);
}

template <typename T>
Tensor<T> bilstm_sublayer(const Tensor<T>& x, const BiLstmParams<T>& params, const PaddingMask* mask) {
  return as_batched<T>(x, "bilstm_sublayer", [&](const Tensor<T>& xb) {
    const std::size_t batch = xb.dim(0), n = xb.dim(1), d = xb.dim(2);
    if (mask != nullptr) require_mask_matches("bilstm_sublayer", *mask, xb.shape());
    // Row permutation reversing each sentence within its own length; an involution.
    std::vector<std::size_t> reversal(batch * n);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t len = mask != nullptr ? mask->lengths[b] : n;
      for (std::size_t t = 0; t < n; ++t) reversal[b * n + t] = b * n + (t < len ? len - 1 - t : t);
    }
    const auto reverse = [&](const Tensor<T>& v) {
      return reshape(gather_rows(reshape(v, Shape{batch * n, d}), std::span<const std::size_t>(reversal)),
                     Shape{batch, n, d});
    };
    const Tensor<T> forward_h = lstm_pass(xb, params.forward);
    const Tensor<T> backward_h = reverse(lstm_pass(reverse(xb), params.backward));
    return add(forward_h, backward_h);
  });
}

#define DEEPATT_INSTANTIATE(T)                                                                                \
  template Tensor<T> apply_position_mask<T>(const Tensor<T>&, const PaddingMask&);                            \
  template Tensor<T> ffn_sublayer<T>(const Tensor<T>&, const FeedForwardParams<T>&, const ForwardContext&,    \
                                     double);                                                                 \
  template Tensor<T> glu_conv_sublayer<T>(const Tensor<T>&, const GluConvParams<T>&, const PaddingMask*);     \
  template Tensor<T> lstm_pass<T>(const Tensor<T>&, const LstmParams<T>&);                                    \
  template Tensor<T> bilstm_sublayer<T>(const Tensor<T>&, const BiLstmParams<T>&, const PaddingMask*);

DEEPATT_INSTANTIATE(float)
DEEPATT_INSTANTIATE(double)

#undef DEEPATT_INSTANTIATE

}  // namespace deepatt
