#include "deepatt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace deepatt {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- Tensor ---------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor() : Tensor(Shape{}, std::vector<T>{T(0)}) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_to_string(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  if (!node_->leaf) throw UsageError("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

namespace detail {

template <typename T>
Tensor<T> make_op_result(const char* op, Shape shape, std::vector<T> data,
                         std::vector<Tensor<T>> parents,
                         std::function<void(Node<T>&)> backward_fn) {
  Tensor<T> out(std::move(shape), std::move(data));
  auto& node = *out.node();
  node.op = op;
  const bool needs = grad_enabled() && std::any_of(parents.begin(), parents.end(),
                                                   [](const Tensor<T>& p) { return p.requires_grad(); });
  if (needs) {
    node.requires_grad = true;
    node.leaf = false;
    node.backward_fn = std::move(backward_fn);
    node.parents.reserve(parents.size());
    for (auto& p : parents) node.parents.push_back(p.node());
  }
  return out;
}

}  // namespace detail

template <typename T>
void backward(const Tensor<T>& loss) {
  using NodeT = detail::Node<T>;
  if (loss.numel() != 1 || loss.rank() != 0) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw UsageError("backward on a loss that does not depend on any tensor requiring grad");
  }
  NodeT* root = loss.node().get();
  if (root->consumed) throw UsageError("backward called twice on the same graph; run a new forward pass");

  // Iterative post-order DFS yields a topological order (parents first).
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        if (parent->consumed) {
          throw UsageError("backward reaches a graph that was already consumed by a previous backward");
        }
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT* node : order) {
    if (!node->leaf) {
      node->grad.assign(node->data.size(), T(0));
    } else if (node->grad.empty()) {
      node->grad.assign(node->data.size(), T(0));
    }
  }
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
  for (NodeT* node : order) {
    if (node->leaf) continue;
    node->consumed = true;
    node->backward_fn = nullptr;
    node->parents.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

// ---- kernels --------------------------------------------------------------

namespace {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
detail::Node<T>& parent(detail::Node<T>& self, std::size_t i) {
  return *self.parents[i];
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a) + " vs " +
                     shape_to_string(b));
  }
}

std::size_t last_dim(const char* op, const Shape& s) {
  if (s.empty()) throw ShapeError(std::string(op) + ": expected rank >= 1, got scalar");
  return s.back();
}

template <typename T, typename Forward, typename Derivative>
Tensor<T> unary_op(const char* op, const Tensor<T>& x, Forward f, Derivative df) {
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return detail::make_op_result<T>(op, x.shape(), std::move(out), {x}, [df](detail::Node<T>& self) {
    auto& px = parent(self, 0);
    if (!px.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      px.grad[i] += self.grad[i] * df(px.data[i], self.data[i]);
    }
  });
}

}  // namespace

// ---- ops ------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const auto mismatch = [&] {
    return ShapeError("matmul: incompatible shapes " + shape_to_string(as) + " and " +
                      shape_to_string(bs));
  };
  if (as.size() < 2 || (bs.size() != 2 && bs.size() != 3)) throw mismatch();

  if (bs.size() == 2) {
    const std::size_t k = bs[0], n = bs[1];
    if (as.back() != k) throw mismatch();
    const std::size_t m = a.numel() / k;
    Shape out_shape = as;
    out_shape.back() = n;
    std::vector<T> out(m * n, T(0));
    gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
    return detail::make_op_result<T>("matmul", std::move(out_shape), std::move(out), {a, b},
                                     [m, k, n](detail::Node<T>& self) {
                                       auto& pa = parent(self, 0);
                                       auto& pb = parent(self, 1);
                                       if (pa.requires_grad)
                                         gemm_nt(m, n, k, self.grad.data(), pb.data.data(), pa.grad.data());
                                       if (pb.requires_grad)
                                         gemm_tn(k, m, n, pa.data.data(), self.grad.data(), pb.grad.data());
                                     });
  }

  if (as.size() != 3 || as[0] != bs[0] || as[2] != bs[1]) throw mismatch();
  const std::size_t batch = as[0], m = as[1], k = as[2], n = bs[2];
  std::vector<T> out(batch * m * n, T(0));
  for (std::size_t s = 0; s < batch; ++s) {
    gemm_nn(m, k, n, a.data().data() + s * m * k, b.data().data() + s * k * n, out.data() + s * m * n);
  }
  return detail::make_op_result<T>(
      "bmm", Shape{batch, m, n}, std::move(out), {a, b}, [batch, m, k, n](detail::Node<T>& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        for (std::size_t s = 0; s < batch; ++s) {
          const T* g = self.grad.data() + s * m * n;
          if (pa.requires_grad)
            gemm_nt(m, n, k, g, pb.data.data() + s * k * n, pa.grad.data() + s * m * k);
          if (pb.requires_grad)
            gemm_tn(k, m, n, pa.data.data() + s * m * k, g, pb.grad.data() + s * k * n);
        }
      });
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("transpose_last2: rank < 2 for shape " + shape_to_string(s));
  const std::size_t r = s[s.size() - 2], c = s.back();
  const std::size_t outer = x.numel() / (r * c);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape.back());
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[o * r * c + j * r + i] = in[o * r * c + i * c + j];
  return detail::make_op_result<T>("transpose", std::move(out_shape), std::move(out), {x},
                                   [outer, r, c](detail::Node<T>& self) {
                                     auto& px = parent(self, 0);
                                     if (!px.requires_grad) return;
                                     for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t i = 0; i < r; ++i)
                                         for (std::size_t j = 0; j < c; ++j)
                                           px.grad[o * r * c + i * c + j] += self.grad[o * r * c + j * r + i];
                                   });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_op_result<T>("add", a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      auto& pp = parent(self, p);
      if (!pp.requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) pp.grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_op_result<T>("sub", a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_op_result<T>("mul", a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.data[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.data[i];
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t d = last_dim("add_bias", x.shape());
  if (bias.rank() != 1 || bias.dim(0) != d) {
    throw ShapeError("add_bias: bias " + shape_to_string(bias.shape()) + " does not match input " +
                     shape_to_string(x.shape()));
  }
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + bias.data()[i % d];
  return detail::make_op_result<T>("add_bias", x.shape(), std::move(out), {x, bias},
                                   [d](detail::Node<T>& self) {
                                     auto& px = parent(self, 0);
                                     auto& pb = parent(self, 1);
                                     if (px.requires_grad)
                                       for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
                                     if (pb.requires_grad)
                                       for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i % d] += self.grad[i];
                                   });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return detail::make_op_result<T>("scale", x.shape(), std::move(out), {x}, [factor](detail::Node<T>& self) {
    auto& px = parent(self, 0);
    if (!px.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_op<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T out) { return out * (T(1) - out); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary_op<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T out) { return T(1) - out * out; });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const std::size_t n = last_dim("softmax_lastdim", x.shape());
  if (n == 0) throw ShapeError("softmax_lastdim: empty last dimension");
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = in.data() + r * n;
    T* yr = out.data() + r * n;
    const T mx = *std::max_element(xr, xr + n);
    if (!std::isfinite(mx)) throw NumericError("softmax_lastdim: non-finite input");
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    if (!std::isfinite(total)) throw NumericError("softmax_lastdim: non-finite input");
    for (std::size_t j = 0; j < n; ++j) yr[j] /= total;
  }
  return detail::make_op_result<T>("softmax", x.shape(), std::move(out), {x}, [rows, n](detail::Node<T>& self) {
    auto& px = parent(self, 0);
    if (!px.requires_grad) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * n;
      const T* g = self.grad.data() + r * n;
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) px.grad[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps) {
  const std::size_t d = last_dim("layer_norm", x.shape());
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain " + shape_to_string(gain.shape()) + " / bias " +
                     shape_to_string(bias.shape()) + " do not match input " + shape_to_string(x.shape()));
  }
  if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  auto normalized = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = in.data() + r * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + T(eps));
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T xh = (xr[j] - mean) * is;
      (*normalized)[r * d + j] = xh;
      out[r * d + j] = xh * gain.data()[j] + bias.data()[j];
    }
  }
  return detail::make_op_result<T>(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [rows, d, normalized, inv_std](detail::Node<T>& self) {
        auto& px = parent(self, 0);
        auto& pg = parent(self, 1);
        auto& pb = parent(self, 2);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = self.grad.data() + r * d;
          const T* xh = normalized->data() + r * d;
          if (pg.requires_grad)
            for (std::size_t j = 0; j < d; ++j) pg.grad[j] += g[j] * xh[j];
          if (pb.requires_grad)
            for (std::size_t j = 0; j < d; ++j) pb.grad[j] += g[j];
          if (!px.requires_grad) continue;
          T mean_dxh = T(0), mean_dxh_xh = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            const T dxh = g[j] * pg.data[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
          }
          mean_dxh /= T(d);
          mean_dxh_xh /= T(d);
          const T is = (*inv_std)[r];
          for (std::size_t j = 0; j < d; ++j) {
            const T dxh = g[j] * pg.data[j];
            px.grad[r * d + j] += is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
          }
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double keep_prob, const ForwardContext& ctx) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw ConfigError("dropout: keep probability must lie in (0, 1], got " + std::to_string(keep_prob));
  }
  if (!ctx.train || keep_prob == 1.0) return x;
  if (ctx.rng == nullptr) throw UsageError("dropout: training mode requires a random generator");
  std::bernoulli_distribution keep(keep_prob);
  const T factor = T(1.0 / keep_prob);
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep(*ctx.rng) ? factor : T(0);
    out[i] = x.data()[i] * (*mask)[i];
  }
  return detail::make_op_result<T>("dropout", x.shape(), std::move(out), {x}, [mask](detail::Node<T>& self) {
    auto& px = parent(self, 0);
    if (!px.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i] * (*mask)[i];
  });
}

template <typename T>
Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_lastdim: no inputs");
  Shape lead = parts[0].shape();
  last_dim("concat_lastdim", lead);
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape pl = p.shape();
    last_dim("concat_lastdim", pl);
    widths.push_back(pl.back());
    total += pl.back();
    pl.pop_back();
    if (pl != lead) {
      throw ShapeError("concat_lastdim: leading shapes differ " + shape_to_string(parts[0].shape()) + " vs " +
                       shape_to_string(p.shape()));
    }
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<T> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto in = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(in.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    offset += widths[k];
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  return detail::make_op_result<T>("concat_lastdim", std::move(out_shape), std::move(out), parts,
                                   [rows, total, widths](detail::Node<T>& self) {
                                     std::size_t off = 0;
                                     for (std::size_t k = 0; k < widths.size(); ++k) {
                                       auto& pk = parent(self, k);
                                       if (pk.requires_grad) {
                                         for (std::size_t r = 0; r < rows; ++r)
                                           for (std::size_t j = 0; j < widths[k]; ++j)
                                             pk.grad[r * widths[k] + j] += self.grad[r * total + off + j];
                                       }
                                       off += widths[k];
                                     }
                                   });
}

template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& x, std::size_t offset, std::size_t length) {
  const std::size_t d = last_dim("slice_lastdim", x.shape());
  if (length == 0 || offset + length > d) {
    throw ShapeError("slice_lastdim: slice [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                     ") out of range for shape " + shape_to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().data() + r * d + offset, length, out.data() + r * length);
  Shape out_shape = x.shape();
  out_shape.back() = length;
  return detail::make_op_result<T>("slice_lastdim", std::move(out_shape), std::move(out), {x},
                                   [rows, d, offset, length](detail::Node<T>& self) {
                                     auto& px = parent(self, 0);
                                     if (!px.requires_grad) return;
                                     for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t j = 0; j < length; ++j)
                                         px.grad[r * d + offset + j] += self.grad[r * length + j];
                                   });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> rows) {
  if (table.rank() != 2) throw ShapeError("gather_rows: table must be rank 2, got " + shape_to_string(table.shape()));
  const std::size_t nrows = table.dim(0), c = table.dim(1);
  std::vector<std::size_t> index(rows.begin(), rows.end());
  std::vector<T> out(index.size() * c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= nrows) {
      throw DataError("gather_rows: row " + std::to_string(index[i]) + " out of range for table " +
                      shape_to_string(table.shape()));
    }
    std::copy_n(table.data().data() + index[i] * c, c, out.data() + i * c);
  }
  const std::size_t count = index.size();
  return detail::make_op_result<T>("gather_rows", Shape{count, c}, std::move(out), {table},
                                   [index = std::move(index), c](detail::Node<T>& self) {
                                     auto& pt = parent(self, 0);
                                     if (!pt.requires_grad) return;
                                     for (std::size_t i = 0; i < index.size(); ++i)
                                       for (std::size_t j = 0; j < c; ++j)
                                         pt.grad[index[i] * c + j] += self.grad[i * c + j];
                                   });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_op_result<T>("reshape", std::move(shape), std::move(out), {x}, [](detail::Node<T>& self) {
    auto& px = parent(self, 0);
    if (!px.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return detail::make_op_result<T>("sum", Shape{}, std::vector<T>{total}, {x}, [](detail::Node<T>& self) {
    auto& px = parent(self, 0);
    if (!px.requires_grad) return;
    for (auto& g : px.grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> time_shift(const Tensor<T>& x, std::ptrdiff_t offset) {
  if (x.rank() != 3) throw ShapeError("time_shift: expected [B, n, d], got " + shape_to_string(x.shape()));
  const std::size_t batch = x.dim(0), n = x.dim(1), d = x.dim(2);
  std::vector<T> out(x.numel(), T(0));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < n; ++t) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + offset;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
      std::copy_n(x.data().data() + (b * n + static_cast<std::size_t>(src)) * d, d, out.data() + (b * n + t) * d);
    }
  return detail::make_op_result<T>("time_shift", x.shape(), std::move(out), {x},
                                   [batch, n, d, offset](detail::Node<T>& self) {
                                     auto& px = parent(self, 0);
                                     if (!px.requires_grad) return;
                                     for (std::size_t b = 0; b < batch; ++b)
                                       for (std::size_t t = 0; t < n; ++t) {
                                         const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + offset;
                                         if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
                                         const std::size_t s = static_cast<std::size_t>(src);
                                         for (std::size_t j = 0; j < d; ++j)
                                           px.grad[(b * n + s) * d + j] += self.grad[(b * n + t) * d + j];
                                       }
                                   });
}

template <typename T>
Tensor<T> select_time(const Tensor<T>& x, std::size_t t) {
  if (x.rank() != 3 || t >= x.dim(1)) {
    throw ShapeError("select_time: step " + std::to_string(t) + " invalid for shape " + shape_to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), n = x.dim(1), d = x.dim(2);
  std::vector<T> out(batch * d);
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(x.data().data() + (b * n + t) * d, d, out.data() + b * d);
  return detail::make_op_result<T>("select_time", Shape{batch, d}, std::move(out), {x},
                                   [batch, n, d, t](detail::Node<T>& self) {
                                     auto& px = parent(self, 0);
                                     if (!px.requires_grad) return;
                                     for (std::size_t b = 0; b < batch; ++b)
                                       for (std::size_t j = 0; j < d; ++j)
                                         px.grad[(b * n + t) * d + j] += self.grad[b * d + j];
                                   });
}

template <typename T>
Tensor<T> stack_time(const std::vector<Tensor<T>>& steps) {
  if (steps.empty()) throw ShapeError("stack_time: no steps");
  const Shape& first = steps[0].shape();
  if (first.size() != 2) throw ShapeError("stack_time: steps must be [B, d], got " + shape_to_string(first));
  for (const auto& s : steps) require_same_shape("stack_time", first, s.shape());
  const std::size_t batch = first[0], d = first[1], n = steps.size();
  std::vector<T> out(batch * n * d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(steps[t].data().data() + b * d, d, out.data() + (b * n + t) * d);
  return detail::make_op_result<T>("stack_time", Shape{batch, n, d}, std::move(out), steps,
                                   [batch, n, d](detail::Node<T>& self) {
                                     for (std::size_t t = 0; t < n; ++t) {
                                       auto& pt = parent(self, t);
                                       if (!pt.requires_grad) continue;
                                       for (std::size_t b = 0; b < batch; ++b)
                                         for (std::size_t j = 0; j < d; ++j)
                                           pt.grad[b * d + j] += self.grad[(b * n + t) * d + j];
                                     }
                                   });
}

// ---- instantiations -------------------------------------------------------

#define DEEPATT_INSTANTIATE(T)                                                                          \
  template class Tensor<T>;                                                                             \
  template Tensor<T> detail::make_op_result<T>(const char*, Shape, std::vector<T>, std::vector<Tensor<T>>, \
                                               std::function<void(detail::Node<T>&)>);                  \
  template void backward<T>(const Tensor<T>&);                                                          \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> transpose_last2<T>(const Tensor<T>&);                                              \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                     \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                         \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                      \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                                         \
  template Tensor<T> softmax_lastdim<T>(const Tensor<T>&);                                              \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);       \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, const ForwardContext&);                       \
  template Tensor<T> concat_lastdim<T>(const std::vector<Tensor<T>>&);                                  \
  template Tensor<T> slice_lastdim<T>(const Tensor<T>&, std::size_t, std::size_t);                      \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);                    \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                               \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                          \
  template Tensor<T> time_shift<T>(const Tensor<T>&, std::ptrdiff_t);                                   \
  template Tensor<T> select_time<T>(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> stack_time<T>(const std::vector<Tensor<T>>&);

DEEPATT_INSTANTIATE(float)
DEEPATT_INSTANTIATE(double)

#undef DEEPATT_INSTANTIATE

}  // namespace deepatt
