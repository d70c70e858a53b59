#include "deepatt/encoder.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "deepatt/text.hpp"

namespace deepatt {

std::string to_string(PositionMode mode) {
  switch (mode) {
    case PositionMode::kTiming: return "timing";
    case PositionMode::kEmbedding: return "embedding";
    case PositionMode::kNone: return "none";
  }
  return "none";
}

std::string to_string(ScaleMode mode) { return mode == ScaleMode::kPerHead ? "per_head" : "full_d"; }

std::string to_string(InitStdMode mode) { return mode == InitStdMode::kVariance ? "variance" : "std"; }

PositionMode parse_position_mode(std::string_view text) {
  if (text == "timing") return PositionMode::kTiming;
  if (text == "embedding") return PositionMode::kEmbedding;
  if (text == "none") return PositionMode::kNone;
  throw ConfigError("unknown position mode '" + std::string(text) + "' (expected timing, embedding or none)");
}

ScaleMode parse_scale_mode(std::string_view text) {
  if (text == "per_head") return ScaleMode::kPerHead;
  if (text == "full_d") return ScaleMode::kFullWidth;
  throw ConfigError("unknown scale mode '" + std::string(text) + "' (expected per_head or full_d)");
}

InitStdMode parse_init_std_mode(std::string_view text) {
  if (text == "variance") return InitStdMode::kVariance;
  if (text == "std") return InitStdMode::kStd;
  throw ConfigError("unknown init_std_mode '" + std::string(text) + "' (expected variance or std)");
}

double ModelConfig::init_std() const {
  const double spread = 1.0 / std::sqrt(static_cast<double>(width));
  return init_std_mode == InitStdMode::kVariance ? std::sqrt(spread) : spread;
}

void ModelConfig::validate() const {
  const auto keep_ok = [](double p) { return p > 0.0 && p <= 1.0; };
  if (depth < 1) throw ConfigError("depth must be at least 1");
  if (word_dim + mask_dim != width) {
    throw ConfigError("word_dim + mask_dim (" + std::to_string(word_dim) + " + " + std::to_string(mask_dim) +
                      ") must equal width " + std::to_string(width));
  }
  attention().validate();
  if (ffn_width < 1) throw ConfigError("ffn_width must be positive");
  if (!keep_ok(residual_keep) || !keep_ok(attention_keep) || !keep_ok(relu_keep)) {
    throw ConfigError("keep probabilities must lie in (0, 1]");
  }
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
  if (conv_width % 2 == 0) throw ConfigError("conv_width must be odd");
  if (position == PositionMode::kTiming && width % 2 != 0) throw ConfigError("timing signal needs an even width");
  if (position == PositionMode::kEmbedding && max_positions < 1) throw ConfigError("max_positions must be positive");
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_pairs() const {
  return {
      {"depth", std::to_string(depth)},
      {"width", std::to_string(width)},
      {"heads", std::to_string(heads)},
      {"ffn_width", std::to_string(ffn_width)},
      {"sublayer", to_string(sublayer)},
      {"position", to_string(position)},
      {"word_dim", std::to_string(word_dim)},
      {"mask_dim", std::to_string(mask_dim)},
      {"residual_keep", format_double(residual_keep)},
      {"attention_keep", format_double(attention_keep)},
      {"relu_keep", format_double(relu_keep)},
      {"label_smoothing", format_double(label_smoothing)},
      {"scale_mode", to_string(scale_mode)},
      {"init_std_mode", to_string(init_std_mode)},
      {"conv_width", std::to_string(conv_width)},
      {"max_positions", std::to_string(max_positions)},
  };
}

bool ModelConfig::set(std::string_view key, std::string_view value) {
  if (key == "depth") depth = parse_size(value, key);
  else if (key == "width") width = parse_size(value, key);
  else if (key == "heads") heads = parse_size(value, key);
  else if (key == "ffn_width") ffn_width = parse_size(value, key);
  else if (key == "sublayer") sublayer = parse_sublayer_kind(value);
  else if (key == "position") position = parse_position_mode(value);
  else if (key == "word_dim") word_dim = parse_size(value, key);
  else if (key == "mask_dim") mask_dim = parse_size(value, key);
  else if (key == "residual_keep") residual_keep = parse_double(value, key);
  else if (key == "attention_keep") attention_keep = parse_double(value, key);
  else if (key == "relu_keep") relu_keep = parse_double(value, key);
  else if (key == "label_smoothing") label_smoothing = parse_double(value, key);
  else if (key == "scale_mode") scale_mode = parse_scale_mode(value);
  else if (key == "init_std_mode") init_std_mode = parse_init_std_mode(value);
  else if (key == "conv_width") conv_width = parse_size(value, key);
  else if (key == "max_positions") max_positions = parse_size(value, key);
  else return false;
  return true;
}

// ---- parameters -----------------------------------------------------------

namespace {

template <typename T, typename Params, typename F>
void for_each_parameter(Params& p, F&& f) {
  f("embedding/word", p.word_embedding);
  f("embedding/mask", p.mask_embedding);
  if (p.position_embedding) f("embedding/position", *p.position_embedding);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& layer = p.layers[i];
    const std::string prefix = "layer_" + std::to_string(i) + "/";
    if (layer.ffn) {
      f(prefix + "ffn/w1", layer.ffn->w1);
      f(prefix + "ffn/b1", layer.ffn->b1);
      f(prefix + "ffn/w2", layer.ffn->w2);
      f(prefix + "ffn/b2", layer.ffn->b2);
    }
    if (layer.conv) {
      f(prefix + "conv/w", layer.conv->w);
      f(prefix + "conv/w_bias", layer.conv->w_bias);
      f(prefix + "conv/v", layer.conv->v);
      f(prefix + "conv/v_bias", layer.conv->v_bias);
    }
    if (layer.lstm) {
      for (auto [dir, cell] : {std::pair{"lstm_fw/", &layer.lstm->forward}, std::pair{"lstm_bw/", &layer.lstm->backward}}) {
        f(prefix + dir + "input_weight", cell->input_weight);
        f(prefix + dir + "recurrent_weight", cell->recurrent_weight);
        f(prefix + dir + "bias", cell->bias);
      }
    }
    if (layer.sublayer_norm) {
      f(prefix + "sublayer_norm/gain", layer.sublayer_norm->gain);
      f(prefix + "sublayer_norm/bias", layer.sublayer_norm->bias);
    }
    f(prefix + "attention/query", layer.attention.query);
    f(prefix + "attention/key", layer.attention.key);
    f(prefix + "attention/value", layer.attention.value);
    f(prefix + "attention/output", layer.attention.output);
    f(prefix + "attention_norm/gain", layer.attention_norm.gain);
    f(prefix + "attention_norm/bias", layer.attention_norm.bias);
  }
  f("output/weight", p.output_weight);
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

template <typename T>
ModelParameters<T> ModelParameters<T>::zeros(const ModelConfig& config, std::size_t vocab_size,
                                              std::size_t num_tags) {
  config.validate();
  if (vocab_size < 2) throw ConfigError("vocabulary must hold at least the <pad> and <unk> entries");
  if (num_tags < 1) throw ConfigError("tag set must be non-empty");
  const std::size_t d = config.width;
  const auto z = [](Shape s) { return Tensor<T>::zeros(std::move(s), true); };
  ModelParameters p;
  p.word_embedding = z({vocab_size, config.word_dim});
  p.mask_embedding = z({2, config.mask_dim});
  if (config.position == PositionMode::kEmbedding) p.position_embedding = z({config.max_positions, d});
  for (std::size_t i = 0; i < config.depth; ++i) {
    EncoderLayerParams<T> layer;
    switch (config.sublayer) {
      case SublayerKind::kFeedForward:
        layer.ffn = FeedForwardParams<T>{z({d, config.ffn_width}), z({config.ffn_width}), z({config.ffn_width, d}),
                                         z({d})};
        break;
      case SublayerKind::kGluConv:
        layer.conv = GluConvParams<T>{z({config.conv_width, d, d}), z({d}), z({config.conv_width, d, d}), z({d})};
        break;
      case SublayerKind::kBiLstm:
        layer.lstm = BiLstmParams<T>{LstmParams<T>{z({d, 4 * d}), z({d, 4 * d}), z({4 * d})},
                                     LstmParams<T>{z({d, 4 * d}), z({d, 4 * d}), z({4 * d})}};
        break;
      case SublayerKind::kNone: break;
    }
    if (config.sublayer != SublayerKind::kNone) layer.sublayer_norm = LayerNormParams<T>{z({d}), z({d})};
    layer.attention = AttentionParams<T>{z({d, d}), z({d, d}), z({d, d}), z({d, d})};
    layer.attention_norm = LayerNormParams<T>{z({d}), z({d})};
    p.layers.push_back(std::move(layer));
  }
  p.output_weight = z({d, num_tags});
  return p;
}

template <typename T>
std::vector<NamedParameter<T>> ModelParameters<T>::named() const {
  std::vector<NamedParameter<T>> out;
  for_each_parameter<T>(*this, [&](const std::string& name, const Tensor<T>& t) { out.push_back({name, t}); });
  return out;
}

template <typename T>
std::size_t ModelParameters<T>::scalar_count() const {
  std::size_t total = 0;
  for_each_parameter<T>(*this, [&](const std::string&, const Tensor<T>& t) { total += t.numel(); });
  return total;
}

template <typename T>
ModelParameters<T> ModelParameters<T>::clone() const {
  ModelParameters copy = *this;
  for_each_parameter<T>(copy, [](const std::string&, Tensor<T>& t) {
    Tensor<T> fresh = t.detach();
    fresh.set_requires_grad(true);
    t = fresh;
  });
  return copy;
}

template <typename T>
void ModelParameters<T>::zero_grad() {
  for_each_parameter<T>(*this, [](const std::string&, Tensor<T>& t) { t.zero_grad(); });
}

std::vector<double> orthogonal_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const std::size_t tall = std::max(rows, cols), narrow = std::min(rows, cols);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd gaussian(tall, narrow);
  for (Eigen::Index j = 0; j < gaussian.cols(); ++j)
    for (Eigen::Index i = 0; i < gaussian.rows(); ++i) gaussian(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, narrow);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(narrow).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out[i * cols + j] = rows >= cols ? q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))
                                       : q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
  return out;
}

template <typename T>
ModelParameters<T> init_parameters(const ModelConfig& config, std::size_t vocab_size, std::size_t num_tags,
                                   std::mt19937_64& rng) {
  ModelParameters<T> params = ModelParameters<T>::zeros(config, vocab_size, num_tags);
  std::normal_distribution<double> gaussian(0.0, config.init_std());
  const std::size_t d = config.width;
  for (auto& [name, tensor] : params.named()) {
    auto values = tensor.mutable_data();
    const Shape& s = tensor.shape();
    if (name.rfind("embedding/", 0) == 0 || name == "output/weight") {
      for (auto& v : values) v = T(gaussian(rng));
    } else if (ends_with(name, "/gain")) {
      std::fill(values.begin(), values.end(), T(1));
    } else if (s.size() == 1) {
      // Biases start at zero; the LSTM forget gate starts open.
      if (ends_with(name, "lstm_fw/bias") || ends_with(name, "lstm_bw/bias"))
        std::fill(values.begin() + static_cast<std::ptrdiff_t>(d), values.begin() + static_cast<std::ptrdiff_t>(2 * d),
                  T(1));
    } else if (s.size() == 3) {
      for (std::size_t tap = 0; tap < s[0]; ++tap) {
        const auto q = orthogonal_matrix(s[1], s[2], rng);
        for (std::size_t i = 0; i < q.size(); ++i) values[tap * q.size() + i] = T(q[i]);
      }
    } else {
      const auto q = orthogonal_matrix(s[0], s[1], rng);
      for (std::size_t i = 0; i < q.size(); ++i) values[i] = T(q[i]);
    }
  }
  return params;
}

std::vector<double> timing_signal(std::size_t t, std::size_t width) {
  if (width % 2 != 0) throw ConfigError("timing signal needs an even width, got " + std::to_string(width));
  std::vector<double> out(width);
  for (std::size_t i = 0; 2 * i < width; ++i) {
    const double angle =
        static_cast<double>(t) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(width));
    out[2 * i] = std::sin(angle);
    out[2 * i + 1] = std::cos(angle);
  }
  return out;
}

// ---- forward --------------------------------------------------------------

template <typename T>
Tensor<T> embed_inputs(const Batch& batch, const ModelParameters<T>& params) {
  const std::size_t tokens = batch.size * batch.max_len;
  if (batch.words.size() != tokens || batch.masks.size() != tokens) {
    throw ShapeError("embed_inputs: word/mask id sequences do not match the batch layout");
  }
  for (std::size_t m : batch.masks)
    if (m > 1) throw DataError("embed_inputs: predicate mask id " + std::to_string(m) + " is not 0 or 1");
  const Tensor<T> words = gather_rows(params.word_embedding, std::span<const std::size_t>(batch.words));
  const Tensor<T> masks = gather_rows(params.mask_embedding, std::span<const std::size_t>(batch.masks));
  const Tensor<T> joined = concat_lastdim(std::vector<Tensor<T>>{words, masks});
  return reshape(joined, Shape{batch.size, batch.max_len, joined.dim(1)});
}

template <typename T>
Tensor<T> add_position_signal(const Tensor<T>& embedded, const ModelConfig& config,
                              const ModelParameters<T>& params) {
  if (embedded.rank() != 3) throw ShapeError("add_position_signal: expected [B, n, d]");
  const std::size_t batch = embedded.dim(0), n = embedded.dim(1), d = embedded.dim(2);
  switch (config.position) {
    case PositionMode::kNone: return embedded;
    case PositionMode::kTiming: {
      std::vector<T> signal(batch * n * d);
      for (std::size_t t = 0; t < n; ++t) {
        const auto row = timing_signal(t, d);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t j = 0; j < d; ++j) signal[(b * n + t) * d + j] = T(row[j]);
      }
      return add(embedded, Tensor<T>(embedded.shape(), std::move(signal)));
    }
    case PositionMode::kEmbedding: {
      if (!params.position_embedding) throw ConfigError("position embedding table is missing");
      if (n > params.position_embedding->dim(0)) {
        throw DataError("sentence length " + std::to_string(n) + " exceeds the position table size " +
                        std::to_string(params.position_embedding->dim(0)));
      }
      std::vector<std::size_t> positions(batch * n);
      for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % n;
      const Tensor<T> table = gather_rows(*params.position_embedding, std::span<const std::size_t>(positions));
      return add(embedded, reshape(table, embedded.shape()));
    }
  }
  return embedded;
}

template <typename T>
Tensor<T> encode(const Tensor<T>& input, const ModelConfig& config, const ModelParameters<T>& params,
                 const PaddingMask* mask, const ForwardContext& ctx) {
  if (input.rank() != 3 || input.dim(2) != config.width) {
    throw ShapeError("encode: expected [B, n, " + std::to_string(config.width) + "], got " +
                     shape_to_string(input.shape()));
  }
  const MultiHeadConfig attention = config.attention();
  Tensor<T> x = input;
  for (const auto& layer : params.layers) {
    if (config.sublayer != SublayerKind::kNone) {
      Tensor<T> y;
      switch (config.sublayer) {
        case SublayerKind::kFeedForward: y = ffn_sublayer(x, *layer.ffn, ctx, config.relu_keep); break;
        case SublayerKind::kGluConv: y = glu_conv_sublayer(x, *layer.conv, mask); break;
        case SublayerKind::kBiLstm: y = bilstm_sublayer(x, *layer.lstm, mask); break;
        case SublayerKind::kNone: break;
      }
      x = layer_norm(add(x, dropout(y, config.residual_keep, ctx)), layer.sublayer_norm->gain,
                     layer.sublayer_norm->bias);
    }
    const Tensor<T> a = multi_head_attention(x, layer.attention, attention, mask, ctx, config.attention_keep);
    x = layer_norm(add(x, dropout(a, config.residual_keep, ctx)), layer.attention_norm.gain, layer.attention_norm.bias);
  }
  return x;
}

template <typename T>
Tensor<T> forward_logits(const Batch& batch, const ModelConfig& config, const ModelParameters<T>& params,
                         const ForwardContext& ctx) {
  const Tensor<T> embedded = add_position_signal(embed_inputs(batch, params), config, params);
  const Tensor<T> hidden = encode(embedded, config, params, &batch.padding, ctx);
  return matmul(hidden, params.output_weight);
}

#define DEEPATT_INSTANTIATE(T)                                                                                    \
  template struct ModelParameters<T>;                                                                             \
  template ModelParameters<T> init_parameters<T>(const ModelConfig&, std::size_t, std::size_t, std::mt19937_64&); \
  template Tensor<T> embed_inputs<T>(const Batch&, const ModelParameters<T>&);                                    \
  template Tensor<T> add_position_signal<T>(const Tensor<T>&, const ModelConfig&, const ModelParameters<T>&);     \
  template Tensor<T> encode<T>(const Tensor<T>&, const ModelConfig&, const ModelParameters<T>&,                   \
                               const PaddingMask*, const ForwardContext&);                                        \
  template Tensor<T> forward_logits<T>(const Batch&, const ModelConfig&, const ModelParameters<T>&,               \
                                       const ForwardContext&);

DEEPATT_INSTANTIATE(float)
DEEPATT_INSTANTIATE(double)

#undef DEEPATT_INSTANTIATE

}  // namespace deepatt
