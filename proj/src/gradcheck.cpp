#include "deepatt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "deepatt/attention.hpp"
#include "deepatt/encoder.hpp"
#include "deepatt/errors.hpp"
#include "deepatt/sublayers.hpp"
#include "deepatt/tensor.hpp"
#include "deepatt/training.hpp"

namespace deepatt {

namespace {

using T64 = Tensor<double>;

struct Instance {
  std::vector<T64> leaves;
  std::function<T64()> forward;
};

using Builder = std::function<Instance(std::mt19937_64&)>;

T64 random_leaf(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return T64(std::move(shape), std::move(v), true);
}

// Entries bounded away from zero so kinks are not straddled by the step.
T64 kink_safe_leaf(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return T64(std::move(shape), std::move(v), true);
}

Instance unary(std::mt19937_64& rng, Shape shape, std::function<T64(const T64&)> f) {
  T64 x = random_leaf(std::move(shape), rng);
  return {{x}, [x, f] { return f(x); }};
}

Instance binary(std::mt19937_64& rng, Shape sa, Shape sb, std::function<T64(const T64&, const T64&)> f) {
  T64 a = random_leaf(std::move(sa), rng);
  T64 b = random_leaf(std::move(sb), rng);
  return {{a, b}, [a, b, f] { return f(a, b); }};
}

FeedForwardParams<double> random_ffn(std::size_t d, std::size_t hf, std::mt19937_64& rng) {
  return {random_leaf({d, hf}, rng), random_leaf({hf}, rng), random_leaf({hf, d}, rng), random_leaf({d}, rng)};
}

LstmParams<double> random_lstm(std::size_t d, std::mt19937_64& rng) {
  return {random_leaf({d, 4 * d}, rng, -0.5, 0.5), random_leaf({d, 4 * d}, rng, -0.5, 0.5),
          random_leaf({4 * d}, rng, -0.5, 0.5)};
}

Instance model_instance(std::mt19937_64& rng, SublayerKind kind) {
  ModelConfig config;
  config.depth = 1;
  config.width = 8;
  config.heads = 2;
  config.ffn_width = 6;
  config.word_dim = 4;
  config.mask_dim = 4;
  config.sublayer = kind;
  config.label_smoothing = 0.1;
  auto params = init_parameters<double>(config, 6, 5, rng);
  // Layer-norm gains and biases start at 1 and 0; randomize them so their
  // gradients are exercised away from the initial point.
  std::vector<T64> leaves;
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  for (auto& p : params.named()) {
    for (auto& v : p.tensor.mutable_data()) v += jitter(rng);
    p.tensor.set_requires_grad(true);
    leaves.push_back(p.tensor);
  }
  auto batch = std::make_shared<Batch>();
  batch->size = 2;
  batch->max_len = 3;
  std::uniform_int_distribution<std::size_t> word(0, 5);
  for (int i = 0; i < 6; ++i) batch->words.push_back(word(rng));
  batch->masks = {0, 1, 0, 1, 0, 0};
  batch->tags = {0, 3, 4, 1, 2, -1};
  batch->padding = build_padding_mask({3, 2}, 3);
  auto shared = std::make_shared<ModelParameters<double>>(params);
  return {leaves, [config, batch, shared] {
            std::mt19937_64 drop_rng(99);
            const ForwardContext ctx{true, &drop_rng};
            return smoothed_cross_entropy(forward_logits(*batch, config, *shared, ctx), batch->tags,
                                          config.label_smoothing);
          }};
}

struct Entry {
  std::string name;
  Builder build;
};

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      {"matmul", [](auto& rng) { return binary(rng, {3, 4}, {4, 2}, [](auto& a, auto& b) { return matmul(a, b); }); }},
      {"matmul_batched",
       [](auto& rng) { return binary(rng, {2, 3, 4}, {2, 4, 3}, [](auto& a, auto& b) { return matmul(a, b); }); }},
      {"transpose_last2", [](auto& rng) { return unary(rng, {2, 3, 4}, [](auto& x) { return transpose_last2(x); }); }},
      {"add", [](auto& rng) { return binary(rng, {2, 3}, {2, 3}, [](auto& a, auto& b) { return add(a, b); }); }},
      {"sub", [](auto& rng) { return binary(rng, {2, 3}, {2, 3}, [](auto& a, auto& b) { return sub(a, b); }); }},
      {"mul", [](auto& rng) { return binary(rng, {2, 3}, {2, 3}, [](auto& a, auto& b) { return mul(a, b); }); }},
      {"add_bias",
       [](auto& rng) { return binary(rng, {2, 3, 4}, {4}, [](auto& a, auto& b) { return add_bias(a, b); }); }},
      {"scale", [](auto& rng) { return unary(rng, {3, 2}, [](auto& x) { return scale(x, 1.7); }); }},
      {"relu",
       [](auto& rng) {
         T64 x = kink_safe_leaf({3, 4}, rng);
         return Instance{{x}, [x] { return relu(x); }};
       }},
      {"sigmoid", [](auto& rng) { return unary(rng, {3, 4}, [](auto& x) { return sigmoid(x); }); }},
      {"tanh", [](auto& rng) { return unary(rng, {3, 4}, [](auto& x) { return tanh(x); }); }},
      {"softmax_lastdim", [](auto& rng) { return unary(rng, {3, 5}, [](auto& x) { return softmax_lastdim(x); }); }},
      {"layer_norm",
       [](auto& rng) {
         T64 x = random_leaf({3, 5}, rng), g = random_leaf({5}, rng), b = random_leaf({5}, rng);
         return Instance{{x, g, b}, [x, g, b] { return layer_norm(x, g, b); }};
       }},
      {"dropout",
       [](auto& rng) {
         return unary(rng, {4, 5}, [](auto& x) {
           std::mt19937_64 drop_rng(7);
           return dropout(x, 0.7, ForwardContext{true, &drop_rng});
         });
       }},
      {"concat_lastdim",
       [](auto& rng) {
         return binary(rng, {2, 3}, {2, 2}, [](auto& a, auto& b) { return concat_lastdim<double>({a, b}); });
       }},
      {"slice_lastdim", [](auto& rng) { return unary(rng, {2, 6}, [](auto& x) { return slice_lastdim(x, 2, 3); }); }},
      {"gather_rows",
       [](auto& rng) {
         return unary(rng, {4, 3}, [](auto& x) {
           const std::vector<std::size_t> rows{2, 0, 2, 3};
           return gather_rows(x, std::span<const std::size_t>(rows));
         });
       }},
      {"reshape", [](auto& rng) { return unary(rng, {2, 6}, [](auto& x) { return reshape(x, {3, 4}); }); }},
      {"sum", [](auto& rng) { return unary(rng, {2, 3}, [](auto& x) { return sum(x); }); }},
      {"time_shift",
       [](auto& rng) {
         return unary(rng, {2, 4, 3}, [](auto& x) { return add(time_shift(x, 1), time_shift(x, -2)); });
       }},
      {"select_time", [](auto& rng) { return unary(rng, {2, 4, 3}, [](auto& x) { return select_time(x, 2); }); }},
      {"stack_time",
       [](auto& rng) {
         return binary(rng, {2, 3}, {2, 3}, [](auto& a, auto& b) { return stack_time<double>({a, b, a}); });
       }},
      {"smoothed_cross_entropy",
       [](auto& rng) {
         return unary(rng, {2, 3, 4}, [](auto& x) {
           return smoothed_cross_entropy(x, {0, 3, 1, 2, -1, 3}, 0.1);
         });
       }},
      {"scaled_dot_product_attention",
       [](auto& rng) {
         T64 q = random_leaf({2, 3, 4}, rng), k = random_leaf({2, 3, 4}, rng), v = random_leaf({2, 3, 4}, rng);
         return Instance{{q, k, v}, [q, k, v] {
                           const PaddingMask mask = build_padding_mask({3, 2}, 3);
                           return scaled_dot_product_attention(q, k, v, &mask, 4.0).values;
                         }};
       }},
      {"multi_head_attention",
       [](auto& rng) {
         T64 x = random_leaf({2, 3, 4}, rng);
         AttentionParams<double> p{random_leaf({4, 4}, rng), random_leaf({4, 4}, rng), random_leaf({4, 4}, rng),
                                   random_leaf({4, 4}, rng)};
         return Instance{{x, p.query, p.key, p.value, p.output}, [x, p] {
                           const PaddingMask mask = build_padding_mask({3, 2}, 3);
                           std::mt19937_64 drop_rng(3);
                           return multi_head_attention(x, p, MultiHeadConfig{4, 2, ScaleMode::kPerHead}, &mask,
                                                       ForwardContext{true, &drop_rng}, 0.8);
                         }};
       }},
      {"ffn_sublayer",
       [](auto& rng) {
         T64 x = random_leaf({2, 3, 4}, rng);
         auto p = random_ffn(4, 6, rng);
         return Instance{{x, p.w1, p.b1, p.w2, p.b2}, [x, p] {
                           std::mt19937_64 drop_rng(5);
                           return ffn_sublayer(x, p, ForwardContext{true, &drop_rng}, 0.9);
                         }};
       }},
      {"glu_conv_sublayer",
       [](auto& rng) {
         T64 x = random_leaf({2, 4, 3}, rng);
         GluConvParams<double> p{random_leaf({3, 3, 3}, rng), random_leaf({3}, rng), random_leaf({3, 3, 3}, rng),
                                 random_leaf({3}, rng)};
         return Instance{{x, p.w, p.w_bias, p.v, p.v_bias}, [x, p] {
                           const PaddingMask mask = build_padding_mask({4, 2}, 4);
                           return glu_conv_sublayer(x, p, &mask);
                         }};
       }},
      {"bilstm_sublayer",
       [](auto& rng) {
         T64 x = random_leaf({2, 4, 3}, rng);
         BiLstmParams<double> p{random_lstm(3, rng), random_lstm(3, rng)};
         return Instance{{x, p.forward.input_weight, p.forward.recurrent_weight, p.forward.bias,
                          p.backward.input_weight, p.backward.recurrent_weight, p.backward.bias},
                         [x, p] {
                           const PaddingMask mask = build_padding_mask({4, 3}, 4);
                           return bilstm_sublayer(x, p, &mask);
                         }};
       }},
      {"model_ffn", [](auto& rng) { return model_instance(rng, SublayerKind::kFeedForward); }},
      {"model_cnn", [](auto& rng) { return model_instance(rng, SublayerKind::kGluConv); }},
      {"model_rnn", [](auto& rng) { return model_instance(rng, SublayerKind::kBiLstm); }},
  };
  return entries;
}

double weighted_loss(const T64& out, const std::vector<double>& weights) {
  double total = 0.0;
  const auto v = out.data();
  for (std::size_t i = 0; i < v.size(); ++i) total += v[i] * weights[i];
  return total;
}

double check_once(const Entry& entry, std::uint64_t seed, const GradCheckOptions& options) {
  std::mt19937_64 rng(seed);
  Instance inst = entry.build(rng);

  T64 out = inst.forward();
  std::vector<double> weights(out.numel());
  std::uniform_real_distribution<double> wdist(-1.0, 1.0);
  for (auto& w : weights) w = wdist(rng);
  T64 loss = sum(mul(out, T64(out.shape(), weights, false)));
  backward(loss);

  std::vector<std::vector<double>> analytic;
  for (auto& leaf : inst.leaves) {
    if (!leaf.has_grad()) leaf.mutable_grad();
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
  }
  if (entry.name == options.corrupt && !analytic.empty() && !analytic[0].empty()) {
    for (auto& g : analytic[0]) g = g * 1.05 + 1e-2;
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t li = 0; li < inst.leaves.size(); ++li) {
    auto data = inst.leaves[li].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + options.step;
      const double plus = weighted_loss(inst.forward(), weights);
      data[i] = saved - options.step;
      const double minus = weighted_loss(inst.forward(), weights);
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[li][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace

std::vector<std::string> gradcheck_ops() {
  std::vector<std::string> names;
  for (const auto& e : registry()) names.push_back(e.name);
  return names;
}

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& options) {
  if (options.seeds == 0) throw ConfigError("gradcheck needs at least one seed");
  if (!options.corrupt.empty()) {
    const auto names = gradcheck_ops();
    if (std::find(names.begin(), names.end(), options.corrupt) == names.end()) {
      throw ConfigError("unknown gradcheck op '" + options.corrupt + "'");
    }
  }
  std::vector<GradCheckResult> results;
  for (const auto& entry : registry()) {
    GradCheckResult r{entry.name, 0.0, options.seeds, false};
    for (std::size_t s = 0; s < options.seeds; ++s) {
      const double err = check_once(entry, options.base_seed * 1000003ULL + s, options);
      r.max_rel_err = std::isnan(err) ? INFINITY : std::max(r.max_rel_err, err);
    }
    r.pass = r.max_rel_err < options.tolerance;
    results.push_back(r);
  }
  return results;
}

std::string format_gradcheck_line(const GradCheckResult& result) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "op=%s max_rel_err=%.3e %s", result.op.c_str(), result.max_rel_err,
                result.pass ? "PASS" : "FAIL");
  return buf;
}

}  // namespace deepatt
