#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepatt/data_io.hpp"
#include "deepatt/encoder.hpp"
#include "deepatt/tensor.hpp"

namespace deepatt {

struct TrainSchedule {
  double base_lr = 1.0;
  std::size_t plateau_steps = 400000;
  std::size_t halving_interval = 100000;
  std::size_t total_steps = 600000;
  double clip_norm = 1.0;
  std::size_t token_budget = 4096;
  double rho = 0.95;
  double epsilon = 1e-6;
  std::size_t eval_interval = 1000;  // 0 disables periodic dev evaluation

  void validate() const;
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  bool set(std::string_view key, std::string_view value);
  bool operator==(const TrainSchedule&) const = default;
};

// base_lr before plateau_steps, then halved at plateau_steps and every
// halving_interval steps after it.
double lr_at(std::size_t step, const TrainSchedule& schedule);

// Mean over tokens with gold >= 0 of the cross-entropy between
// softmax(logits) and (1 - eps) * onehot(gold) + eps / K. Negative gold ids
// mark padding. logits is [..., K].
template <typename T>
Tensor<T> smoothed_cross_entropy(const Tensor<T>& logits, const std::vector<int>& gold, double epsilon);

// Scales all gradients by threshold / norm when the global L2 norm exceeds
// threshold. Returns the norm before clipping.
template <typename T>
double clip_global_norm(const std::vector<std::span<T>>& grads, double threshold);

template <typename T>
struct AdadeltaSlot {
  std::vector<T> mean_sq_grad;
  std::vector<T> mean_sq_update;
};

// One Adadelta update of `param` in place.
template <typename T>
void adadelta_step(std::span<T> param, std::span<const T> grad, AdadeltaSlot<T>& slot, double rho, double epsilon,
                   double lr);

template <typename T>
class Adadelta {
 public:
  Adadelta(double rho, double epsilon) : rho_(rho), epsilon_(epsilon) {}

  void step(const std::vector<NamedParameter<T>>& params, double lr);
  const std::vector<AdadeltaSlot<T>>& slots() const { return slots_; }

 private:
  double rho_;
  double epsilon_;
  std::vector<AdadeltaSlot<T>> slots_;
};

struct TrainOptions {
  std::ostream* log = nullptr;        // receives metrics lines
  std::string checkpoint_path;        // best-dev (or final) model, when set
};

template <typename T>
struct TrainResult {
  ModelParameters<T> final_params;
  ModelParameters<T> best_params;  // best dev F1, or final when no dev set
  std::vector<double> losses;      // one per step
  std::vector<std::string> log_lines;
  std::optional<double> best_dev_f1;
};

// Deterministic for a fixed seed. Throws NumericError naming the step and
// batch when the loss stops being finite.
template <typename T>
TrainResult<T> train_loop(const Corpus& train, const Corpus* dev, const Vocabulary& vocab, const TagSet& tags,
                          const ModelConfig& config, const TrainSchedule& schedule, std::uint64_t seed,
                          const TrainOptions& options = {}, const ModelParameters<T>* initial = nullptr);

}  // namespace deepatt
