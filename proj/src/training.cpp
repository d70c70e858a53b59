#include "deepatt/training.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "deepatt/checkpoint.hpp"
#include "deepatt/metrics.hpp"
#include "deepatt/tagger.hpp"
#include "deepatt/text.hpp"

namespace deepatt {

void TrainSchedule::validate() const {
  if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
  if (halving_interval < 1) throw ConfigError("halving_interval must be positive");
  if (plateau_steps > total_steps) throw ConfigError("plateau_steps must not exceed total_steps");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  if (token_budget < 1) throw ConfigError("token_budget must be positive");
  if (!(rho > 0 && rho < 1)) throw ConfigError("rho must lie in (0, 1)");
  if (!(epsilon > 0)) throw ConfigError("epsilon must be positive");
}

std::vector<std::pair<std::string, std::string>> TrainSchedule::to_pairs() const {
  return {
      {"base_lr", format_double(base_lr)},
      {"plateau_steps", std::to_string(plateau_steps)},
      {"halving_interval", std::to_string(halving_interval)},
      {"total_steps", std::to_string(total_steps)},
      {"clip_norm", format_double(clip_norm)},
      {"token_budget", std::to_string(token_budget)},
      {"rho", format_double(rho)},
      {"epsilon", format_double(epsilon)},
      {"eval_interval", std::to_string(eval_interval)},
  };
}

bool TrainSchedule::set(std::string_view key, std::string_view value) {
  if (key == "base_lr") base_lr = parse_double(value, key);
  else if (key == "plateau_steps") plateau_steps = parse_size(value, key);
  else if (key == "halving_interval") halving_interval = parse_size(value, key);
  else if (key == "total_steps") total_steps = parse_size(value, key);
  else if (key == "clip_norm") clip_norm = parse_double(value, key);
  else if (key == "token_budget") token_budget = parse_size(value, key);
  else if (key == "rho") rho = parse_double(value, key);
  else if (key == "epsilon") epsilon = parse_double(value, key);
  else if (key == "eval_interval") eval_interval = parse_size(value, key);
  else return false;
  return true;
}

double lr_at(std::size_t step, const TrainSchedule& schedule) {
  if (step < schedule.plateau_steps) return schedule.base_lr;
  const std::size_t halvings = 1 + (step - schedule.plateau_steps) / schedule.halving_interval;
  return schedule.base_lr * std::pow(0.5, static_cast<double>(halvings));
}

template <typename T>
Tensor<T> smoothed_cross_entropy(const Tensor<T>& logits, const std::vector<int>& gold, double epsilon) {
  if (logits.rank() < 1) throw ShapeError("smoothed_cross_entropy: logits must have a class axis");
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.numel() / k;
  if (gold.size() != rows) {
    throw ShapeError("smoothed_cross_entropy: " + std::to_string(gold.size()) + " gold ids for logits " +
                     shape_to_string(logits.shape()));
  }
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("label smoothing must lie in [0, 1)");
  std::size_t count = 0;
  for (int g : gold) {
    if (g >= static_cast<int>(k)) {
      throw DataError("smoothed_cross_entropy: gold id " + std::to_string(g) + " out of range for " +
                      std::to_string(k) + " classes");
    }
    count += g >= 0;
  }
  if (count == 0) throw UsageError("smoothed_cross_entropy: no unmasked positions");

  const double off = epsilon / static_cast<double>(k);
  const double on = 1.0 - epsilon + off;
  auto probs = std::make_shared<std::vector<double>>(logits.numel(), 0.0);
  double total = 0.0;
  const auto x = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (gold[r] < 0) continue;
    double mx = -INFINITY;
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(x[r * k + c]));
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(static_cast<double>(x[r * k + c]) - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t c = 0; c < k; ++c) {
      const double log_p = static_cast<double>(x[r * k + c]) - log_z;
      (*probs)[r * k + c] = std::exp(log_p);
      total -= (static_cast<int>(c) == gold[r] ? on : off) * log_p;
    }
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  return detail::make_op_result<T>(
      "smoothed_cross_entropy", Shape{}, std::vector<T>{T(total * inv_count)}, {logits},
      [probs, gold, k, rows, on, off, inv_count](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        const double g = static_cast<double>(self.grad[0]) * inv_count;
        for (std::size_t r = 0; r < rows; ++r) {
          if (gold[r] < 0) continue;
          for (std::size_t c = 0; c < k; ++c) {
            const double target = static_cast<int>(c) == gold[r] ? on : off;
            px.grad[r * k + c] += T(g * ((*probs)[r * k + c] - target));
          }
        }
      });
}

template <typename T>
double clip_global_norm(const std::vector<std::span<T>>& grads, double threshold) {
  if (!(threshold > 0)) throw ConfigError("clip threshold must be positive");
  double sq = 0.0;
  for (const auto& g : grads)
    for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm > threshold) {
    const double factor = threshold / norm;
    for (const auto& g : grads)
      for (T& v : g) v = T(static_cast<double>(v) * factor);
  }
  return norm;
}

template <typename T>
void adadelta_step(std::span<T> param, std::span<const T> grad, AdadeltaSlot<T>& slot, double rho, double epsilon,
                   double lr) {
  if (param.size() != grad.size()) throw ShapeError("adadelta_step: parameter and gradient sizes differ");
  if (slot.mean_sq_grad.size() != param.size()) {
    slot.mean_sq_grad.assign(param.size(), T(0));
    slot.mean_sq_update.assign(param.size(), T(0));
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double eg = rho * static_cast<double>(slot.mean_sq_grad[i]) + (1.0 - rho) * g * g;
    const double delta = -std::sqrt(static_cast<double>(slot.mean_sq_update[i]) + epsilon) / std::sqrt(eg + epsilon) * g;
    slot.mean_sq_grad[i] = T(eg);
    slot.mean_sq_update[i] = T(rho * static_cast<double>(slot.mean_sq_update[i]) + (1.0 - rho) * delta * delta);
    param[i] = T(static_cast<double>(param[i]) + lr * delta);
  }
}

template <typename T>
void Adadelta<T>::step(const std::vector<NamedParameter<T>>& params, double lr) {
  if (slots_.size() != params.size()) slots_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i].tensor;
    if (!p.has_grad()) p.mutable_grad();
    adadelta_step<T>(p.mutable_data(), p.grad(), slots_[i], rho_, epsilon_, lr);
  }
}

namespace {

template <typename T>
double dev_f1(const Corpus& dev, const Vocabulary& vocab, const TagSet& tags, const ModelConfig& config,
              const ModelParameters<T>& params, std::size_t budget) {
  const Tagger<T> tagger{config, params, vocab, tags};
  const Corpus predicted = tag_corpus(tagger, dev, DecodeMode::kArgmax, budget);
  return 100.0 * span_prf(corpus_spans(predicted), corpus_spans(dev)).overall.f1;
}

}  // namespace

template <typename T>
TrainResult<T> train_loop(const Corpus& train, const Corpus* dev, const Vocabulary& vocab, const TagSet& tags,
                          const ModelConfig& config, const TrainSchedule& schedule, std::uint64_t seed,
                          const TrainOptions& options, const ModelParameters<T>* initial) {
  config.validate();
  schedule.validate();
  if (train.empty()) throw DataError("training corpus is empty");
  for (const auto& s : train)
    if (!s.has_tags()) throw DataError("training corpus must carry gold tags");

  std::mt19937_64 rng(seed);
  ModelParameters<T> params = initial ? initial->clone() : init_parameters<T>(config, vocab.size(), tags.size(), rng);
  Adadelta<T> optimizer(schedule.rho, schedule.epsilon);
  TrainResult<T> result{params, params, {}, {}, std::nullopt};

  std::vector<std::size_t> lengths;
  for (const auto& s : train) lengths.push_back(s.size());
  const bool evaluate = dev != nullptr && !dev->empty();

  std::size_t step = 0;
  for (std::uint64_t epoch = 0; step < schedule.total_steps; ++epoch) {
    const auto batches = batch_by_tokens(lengths, schedule.token_budget, seed + 0x9E3779B97F4A7C15ULL * (epoch + 1));
    for (std::size_t bi = 0; bi < batches.size() && step < schedule.total_steps; ++bi) {
      std::vector<const LabeledSentence*> members;
      for (std::size_t idx : batches[bi]) members.push_back(&train[idx]);
      const Batch batch = make_batch(members, vocab, &tags);

      params.zero_grad();
      const ForwardContext ctx{true, &rng};
      const Tensor<T> loss = smoothed_cross_entropy(forward_logits(batch, config, params, ctx), batch.tags,
                                                    config.label_smoothing);
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite loss at step " + std::to_string(step + 1) + " (epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(bi) + ")");
      }
      backward(loss);

      const auto named = params.named();
      std::vector<std::span<T>> grads;
      for (auto p : named) grads.push_back(p.tensor.mutable_grad());
      clip_global_norm(grads, schedule.clip_norm);
      const double lr = lr_at(step, schedule);
      optimizer.step(named, lr);
      ++step;
      result.losses.push_back(loss_value);

      char buf[128];
      std::snprintf(buf, sizeof(buf), "step=%zu loss=%.6f lr=%.6f", step, loss_value, lr);
      std::string line = buf;
      const bool periodic = schedule.eval_interval > 0 && step % schedule.eval_interval == 0;
      if (evaluate && (periodic || step == schedule.total_steps)) {
        const double f1 = dev_f1(*dev, vocab, tags, config, params, schedule.token_budget);
        std::snprintf(buf, sizeof(buf), " dev_f1=%.4f", f1);
        line += buf;
        if (!result.best_dev_f1 || f1 > *result.best_dev_f1) {
          result.best_dev_f1 = f1;
          result.best_params = params.clone();
        }
      }
      if (options.log) *options.log << line << "\n";
      result.log_lines.push_back(std::move(line));
    }
  }

  result.final_params = params;
  if (!result.best_dev_f1) result.best_params = params;
  if (!options.checkpoint_path.empty()) save_checkpoint(options.checkpoint_path, config, result.best_params);
  return result;
}

#define DEEPATT_INSTANTIATE(T)                                                                                      \
  template Tensor<T> smoothed_cross_entropy<T>(const Tensor<T>&, const std::vector<int>&, double);                  \
  template double clip_global_norm<T>(const std::vector<std::span<T>>&, double);                                    \
  template void adadelta_step<T>(std::span<T>, std::span<const T>, AdadeltaSlot<T>&, double, double, double);       \
  template class Adadelta<T>;                                                                                       \
  template TrainResult<T> train_loop<T>(const Corpus&, const Corpus*, const Vocabulary&, const TagSet&,             \
                                        const ModelConfig&, const TrainSchedule&, std::uint64_t, const TrainOptions&, \
                                        const ModelParameters<T>*);

DEEPATT_INSTANTIATE(float)
DEEPATT_INSTANTIATE(double)

#undef DEEPATT_INSTANTIATE

}  // namespace deepatt
