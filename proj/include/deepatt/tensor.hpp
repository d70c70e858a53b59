#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage and graph node.
// Every op executed while grad mode is enabled and at least one operand
// requires a gradient records a node holding its parents and a backward
// closure. backward() sweeps the recorded graph once in reverse topological
// order and then releases it; a second sweep over the same graph throws.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "deepatt/errors.hpp"

namespace deepatt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Thread-local switch; when disabled no graph nodes are recorded.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward_fn;
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const T> data() const { return node_->data; }
  // Direct write access, for parameter updates and initialization only.
  std::span<T> mutable_data() { return node_->data; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value);
  bool is_leaf() const { return node_->leaf; }
  const char* op_name() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad();
  void zero_grad();

  // New leaf holding a copy of the values, detached from any graph.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

// Builds the result of an op. When grad mode is on and some parent requires
// a gradient the result records `backward_fn`; otherwise it is a plain leaf.
template <typename T>
Tensor<T> make_op_result(const char* op, Shape shape, std::vector<T> data,
                         std::vector<Tensor<T>> parents,
                         std::function<void(Node<T>&)> backward_fn);

}  // namespace detail

// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls
// until cleared with zero_grad().
template <typename T>
void backward(const Tensor<T>& loss);

// Dropout needs randomness only in training mode.
struct ForwardContext {
  bool train = false;
  std::mt19937_64* rng = nullptr;
};

// ---- primitive ops --------------------------------------------------------

// a[..., k] x b[k, n] -> a[..., n], or batched a[B, m, k] x b[B, k, n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Swaps the last two axes.
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// x[..., d] + bias[d]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

// Max-subtracted softmax over the last axis.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

inline constexpr double kLayerNormEps = 1e-6;

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     double eps = kLayerNormEps);

// Inverted dropout. Returns `x` itself outside training or when keep_prob == 1.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double keep_prob, const ForwardContext& ctx);

template <typename T>
Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& x, std::size_t offset, std::size_t length);

// table[R, C] indexed by rows -> [rows.size(), C].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> rows);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Sum of all entries as a rank-0 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

// out[b, t] = x[b, t + offset], zero outside [0, n).
template <typename T>
Tensor<T> time_shift(const Tensor<T>& x, std::ptrdiff_t offset);
// x[B, n, d] -> x[:, t, :] of shape [B, d]
template <typename T>
Tensor<T> select_time(const Tensor<T>& x, std::size_t t);
// n tensors [B, d] -> [B, n, d]
template <typename T>
Tensor<T> stack_time(const std::vector<Tensor<T>>& steps);

}  // namespace deepatt
