// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "occlm/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "occlm/errors.hpp"

namespace occlm {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

void check_finite(const char* op, const std::vector<float>& values) {
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

NodePtr new_node(Shape shape, std::vector<float> data) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

/// Wraps an op result, wiring the backward rule when any input needs grads.
Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward) {
  check_finite(op, data);
  auto node = new_node(std::move(shape), std::move(data));
  node->op = op;
  bool needs = false;
  if (t_grad_enabled) {
    for (const Tensor* in : inputs) needs = needs || in->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const Tensor* in : inputs) node->inputs.push_back(in->node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

/// Accepts equal shapes or `b` matching a trailing suffix of `a`.
void check_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return;
  if (b.size() <= a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin())) return;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " +
                       shape_str(a));
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::vector<float>& detail::Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  return grad;
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
  }
  const std::size_t n = numel(shape);
  auto node = new_node(std::move(shape), std::vector<float>(n, value));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
  }
  if (numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  check_finite("Tensor::from", values);
  auto node = new_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::size() const { return defined() ? node_->data.size() : 0; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::span<const float> Tensor::data() const {
  require_defined(*this, "data");
  return node_->data;
}

std::span<float> Tensor::mutable_data() {
  require_defined(*this, "mutable_data");
  return node_->data;
}

float Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  require_defined(*this, "set_requires_grad");
  if (!node_->is_leaf()) throw ContractError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return defined() && node_->grad.size() == node_->data.size(); }

std::span<const float> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient; call backward() first");
  return node_->grad;
}

std::span<float> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  if (defined() && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::clone(bool requires_grad) const {
  return from(shape(), node_->data, requires_grad);
}

const char* Tensor::op_name() const { return defined() ? node_->op : "undefined"; }

ComputationTape ComputationTape::record(const Tensor& root) {
  ComputationTape tape;
  if (!root.requires_grad()) return tape;
  std::vector<Node*> stack{root.node().get()};
  std::vector<Node*> seen;
  std::unordered_set<Node*> visited;
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!visited.insert(n).second) continue;
    seen.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad) stack.push_back(in.get());
    }
  }
  // Creation order is a valid topological order: an op's inputs exist
  // before the op runs.
  std::sort(seen.begin(), seen.end(), [](const Node* a, const Node* b) { return a->seq < b->seq; });
  tape.entries_ = std::move(seen);
  return tape;
}

void Tensor::backward() const {
  require_defined(*this, "backward");
  if (size() != 1) {
    throw ContractError("backward() needs a scalar root, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) {
    throw ContractError("backward() root does not depend on any tensor requiring grad");
  }
  const ComputationTape tape = ComputationTape::record(*this);
  for (Node* n : tape.entries()) {
    if (n->is_leaf()) {
      n->ensure_grad();
    } else {
      n->grad.assign(n->data.size(), 0.0f);
    }
  }
  node_->grad[0] += 1.0f;
  const auto& entries = tape.entries();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

TokenGrid::TokenGrid(std::size_t b, std::size_t t, std::vector<TokenId> values)
    : batch(b), time(t), ids(std::move(values)) {
  if (ids.size() != b * t) {
    throw DimensionError("token grid " + std::to_string(b) + "x" + std::to_string(t) +
                         " given " + std::to_string(ids.size()) + " ids");
  }
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  check_broadcast("add", a.shape(), b.shape());
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t n = ad.size();
  const std::size_t m = bd.size();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; i += m) {
    for (std::size_t j = 0; j < m; ++j) out[i + j] = ad[i + j] + bd[j];
  }
  return make_result("add", a.shape(), std::move(out), {&a, &b}, [m](Node& self) {
    const auto& g = self.grad;
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& ga = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (nb.requires_grad) {
      auto& gb = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); i += m) {
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i + j];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  check_broadcast("mul", a.shape(), b.shape());
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t n = ad.size();
  const std::size_t m = bd.size();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; i += m) {
    for (std::size_t j = 0; j < m; ++j) out[i + j] = ad[i + j] * bd[j];
  }
  return make_result("mul", a.shape(), std::move(out), {&a, &b}, [m](Node& self) {
    const auto& g = self.grad;
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& ga = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); i += m) {
        for (std::size_t j = 0; j < m; ++j) ga[i + j] += g[i + j] * nb.data[j];
      }
    }
    if (nb.requires_grad) {
      auto& gb = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); i += m) {
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i + j] * na.data[i + j];
      }
    }
  });
}

Tensor scale(const Tensor& x, float factor) {
  require_defined(x, "scale");
  std::vector<float> out(x.data().begin(), x.data().end());
  for (float& v : out) v *= factor;
  return make_result("scale", x.shape(), std::move(out), {&x}, [factor](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * factor;
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return make_result("sum", {}, {static_cast<float>(acc)}, {&x}, [](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    const float g = self.grad[0];
    for (float& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  return scale(sum(x), 1.0f / static_cast<float>(x.size()));
}

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(as) + " and " +
                         shape_str(bs));
  }
  const std::size_t k = as.back();
  const std::size_t bk = transpose_b ? bs[bs.size() - 1] : bs[bs.size() - 2];
  const std::size_t n = transpose_b ? bs[bs.size() - 2] : bs[bs.size() - 1];
  if (k != bk) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(as) + " x " +
                         shape_str(bs) + (transpose_b ? "^T" : ""));
  }
  const bool shared = bs.size() == 2;
  std::size_t batch = 1;
  std::size_t m = as[as.size() - 2];
  if (shared) {
    m = a.size() / k;
  } else {
    if (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) {
      throw DimensionError("matmul batch axes disagree: " + shape_str(as) + " x " + shape_str(bs));
    }
    batch = a.size() / (m * k);
  }
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(n);
  std::vector<float> out(batch * m * n);
  const std::size_t b_rows = transpose_b ? n : k;
  const std::size_t b_cols = transpose_b ? k : n;
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMatMap A(a.data().data() + i * m * k, m, k);
    ConstMatMap B(b.data().data() + (shared ? 0 : i * k * n), b_rows, b_cols);
    MatMap C(out.data() + i * m * n, m, n);
    if (transpose_b) {
      C.noalias() = A * B.transpose();
    } else {
      C.noalias() = A * B;
    }
  }
  return make_result("matmul", std::move(out_shape), std::move(out), {&a, &b},
                     [=](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       for (std::size_t i = 0; i < batch; ++i) {
                         ConstMatMap dC(self.grad.data() + i * m * n, m, n);
                         const std::size_t boff = shared ? 0 : i * k * n;
                         if (na.requires_grad) {
                           MatMap dA(na.ensure_grad().data() + i * m * k, m, k);
                           ConstMatMap B(nb.data.data() + boff, b_rows, b_cols);
                           if (transpose_b) {
                             dA.noalias() += dC * B;
                           } else {
                             dA.noalias() += dC * B.transpose();
                           }
                         }
                         if (nb.requires_grad) {
                           MatMap dB(nb.ensure_grad().data() + boff, b_rows, b_cols);
                           ConstMatMap A(na.data.data() + i * m * k, m, k);
                           if (transpose_b) {
                             dB.noalias() += dC.transpose() * A;
                           } else {
                             dB.noalias() += A.transpose() * dC;
                           }
                         }
                       }
                     });
}

// ---- softmax / normalization / activations ---------------------------------

Tensor softmax_lastdim(const Tensor& x) {
  require_defined(x, "softmax_lastdim");
  if (x.rank() == 0) throw DimensionError("softmax_lastdim on a rank-0 tensor");
  const std::size_t width = x.shape().back();
  const auto xd = x.data();
  const std::size_t rows = xd.size() / width;
  std::vector<float> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = xd.data() + r * width;
    float* y = out.data() + r * width;
    const float mx = *std::max_element(in, in + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      y[j] = std::exp(in[j] - mx);
      total += y[j];
    }
    const float inv = static_cast<float>(1.0 / total);
    for (std::size_t j = 0; j < width; ++j) y[j] *= inv;
  }
  return make_result("softmax_lastdim", x.shape(), std::move(out), {&x}, [width](Node& self) {
    const auto& y = self.data;
    auto& gx = self.inputs[0]->ensure_grad();
    const std::size_t rows = y.size() / width;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * width;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += self.grad[off + j] * y[off + j];
      for (std::size_t j = 0; j < width; ++j) {
        gx[off + j] += y[off + j] * (self.grad[off + j] - static_cast<float>(dot));
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require_defined(x, "layer_norm");
  if (x.rank() == 0) throw DimensionError("layer_norm on a rank-0 tensor");
  const std::size_t width = x.shape().back();
  if (gamma.shape() != Shape{width} || beta.shape() != Shape{width}) {
    throw DimensionError("layer_norm affine params must be [" + std::to_string(width) + "], got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  const auto xd = x.data();
  const auto g = gamma.data();
  const auto b = beta.data();
  const std::size_t rows = xd.size() / width;
  std::vector<float> out(xd.size());
  auto xhat = std::make_shared<std::vector<float>>(xd.size());
  auto rstd = std::make_shared<std::vector<float>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = xd.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += in[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(width);
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < width; ++j) {
      const float h = static_cast<float>(in[j] - mu) * rs;
      (*xhat)[r * width + j] = h;
      out[r * width + j] = h * g[j] + b[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [width, rows, xhat, rstd](Node& self) {
        Node& nx = *self.inputs[0];
        Node& ng = *self.inputs[1];
        Node& nb = *self.inputs[2];
        const auto& dy = self.grad;
        if (ng.requires_grad) {
          auto& gg = ng.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) gg[j] += dy[r * width + j] * (*xhat)[r * width + j];
          }
        }
        if (nb.requires_grad) {
          auto& gb = nb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) gb[j] += dy[r * width + j];
          }
        }
        if (nx.requires_grad) {
          auto& gx = nx.ensure_grad();
          const float inv_w = 1.0f / static_cast<float>(width);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t off = r * width;
            float mean_d = 0.0f;
            float mean_dh = 0.0f;
            for (std::size_t j = 0; j < width; ++j) {
              const float d = dy[off + j] * ng.data[j];
              mean_d += d;
              mean_dh += d * (*xhat)[off + j];
            }
            mean_d *= inv_w;
            mean_dh *= inv_w;
            for (std::size_t j = 0; j < width; ++j) {
              const float d = dy[off + j] * ng.data[j];
              gx[off + j] += (*rstd)[r] * (d - mean_d - (*xhat)[off + j] * mean_dh);
            }
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float kA = 0.044715f;
  const auto xd = x.data();
  std::vector<float> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const float v = xd[i];
    out[i] = 0.5f * v * (1.0f + std::tanh(kC * (v + kA * v * v * v)));
  }
  return make_result("gelu", x.shape(), std::move(out), {&x}, [](Node& self) {
    Node& nx = *self.inputs[0];
    auto& gx = nx.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const float v = nx.data[i];
      const float t = std::tanh(kC * (v + kA * v * v * v));
      const float dt = (1.0f - t * t) * kC * (1.0f + 3.0f * kA * v * v);
      gx[i] += self.grad[i] * (0.5f * (1.0f + t) + 0.5f * v * dt);
    }
  });
}

Tensor relu(const Tensor& x) {
  require_defined(x, "relu");
  std::vector<float> out(x.data().begin(), x.data().end());
  for (float& v : out) v = v > 0.0f ? v : 0.0f;
  return make_result("relu", x.shape(), std::move(out), {&x}, [](Node& self) {
    Node& nx = *self.inputs[0];
    auto& gx = nx.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (nx.data[i] > 0.0f) gx[i] += self.grad[i];
    }
  });
}

Tensor activate(const Tensor& x, Activation act) {
  return act == Activation::kGelu ? gelu(x) : relu(x);
}

// ---- indexing / layout -----------------------------------------------------

Tensor embedding_lookup(const Tensor& weight, const TokenGrid& ids) {
  require_defined(weight, "embedding_lookup");
  if (weight.rank() != 2) throw DimensionError("embedding table must be rank 2, got " + shape_str(weight.shape()));
  if (ids.batch == 0 || ids.time == 0) throw DimensionError("embedding_lookup on an empty token grid");
  const std::size_t vocab = weight.dim(0);
  const std::size_t width = weight.dim(1);
  const auto wd = weight.data();
  std::vector<float> out(ids.ids.size() * width);
  for (std::size_t i = 0; i < ids.ids.size(); ++i) {
    const TokenId id = ids.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
    std::copy_n(wd.data() + static_cast<std::size_t>(id) * width, width, out.data() + i * width);
  }
  auto idx = std::make_shared<std::vector<TokenId>>(ids.ids);
  return make_result("embedding_lookup", {ids.batch, ids.time, width}, std::move(out), {&weight},
                     [idx, width](Node& self) {
                       auto& gw = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < idx->size(); ++i) {
                         float* dst = gw.data() + static_cast<std::size_t>((*idx)[i]) * width;
                         const float* src = self.grad.data() + i * width;
                         for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor dropout(const Tensor& x, float p, bool train, Rng& rng) {
  require_defined(x, "dropout");
  if (!(p >= 0.0f && p < 1.0f)) throw ConfigError("dropout probability must lie in [0, 1)");
  if (!train || p == 0.0f) return x;
  const float keep_scale = 1.0f / (1.0f - p);
  const auto xd = x.data();
  auto mask = std::make_shared<std::vector<float>>(xd.size());
  std::vector<float> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const float m = rng.uniform() < p ? 0.0f : keep_scale;
    (*mask)[i] = m;
    out[i] = xd[i] * m;
  }
  return make_result("dropout", x.shape(), std::move(out), {&x}, [mask](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (numel(shape) != x.size()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<float> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {&x}, [](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

namespace {

/// For each output element, the flat index of its source after swapping two axes.
std::vector<std::size_t> transpose_gather(const Shape& in_shape, std::size_t a, std::size_t b) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  Shape out_shape = in_shape;
  std::swap(out_shape[a], out_shape[b]);
  std::vector<std::size_t> strides = in_strides;
  std::swap(strides[a], strides[b]);
  const std::size_t n = numel(in_shape);
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> coord(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++coord[d];
      offset += strides[d];
      if (coord[d] < out_shape[d]) break;
      offset -= strides[d] * coord[d];
      coord[d] = 0;
    }
  }
  return src;
}

}  // namespace

Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b) {
  require_defined(x, "transpose");
  const Shape& s = x.shape();
  if (axis_a >= s.size() || axis_b >= s.size()) {
    throw DimensionError("transpose axes out of range for " + shape_str(s));
  }
  if (axis_a == axis_b) return x;
  auto src = std::make_shared<std::vector<std::size_t>>(transpose_gather(s, axis_a, axis_b));
  Shape out_shape = s;
  std::swap(out_shape[axis_a], out_shape[axis_b]);
  const auto xd = x.data();
  std::vector<float> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[(*src)[i]];
  return make_result("transpose", std::move(out_shape), std::move(out), {&x}, [src](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < src->size(); ++i) gx[(*src)[i]] += self.grad[i];
  });
}

Tensor causal_mask_fill(const Tensor& x) {
  require_defined(x, "causal_mask_fill");
  if (x.rank() < 2) throw DimensionError("causal_mask_fill needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t cols = x.shape()[x.rank() - 1];
  const std::size_t rows = x.shape()[x.rank() - 2];
  std::vector<float> out(x.data().begin(), x.data().end());
  const std::size_t mats = out.size() / (rows * cols);
  for (std::size_t m = 0; m < mats; ++m) {
    for (std::size_t i = 0; i < rows; ++i) {
      float* row = out.data() + (m * rows + i) * cols;
      for (std::size_t j = i + 1; j < cols; ++j) row[j] = kMaskedScore;
    }
  }
  return make_result("causal_mask_fill", x.shape(), std::move(out), {&x}, [rows, cols](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    const std::size_t mats = gx.size() / (rows * cols);
    for (std::size_t m = 0; m < mats; ++m) {
      for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t off = (m * rows + i) * cols;
        const std::size_t keep = std::min(cols, i + 1);
        for (std::size_t j = 0; j < keep; ++j) gx[off + j] += self.grad[off + j];
      }
    }
  });
}

// ---- loss ------------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                     std::span<const std::uint8_t> ignore, std::span<const float> weights) {
  require_defined(logits, "cross_entropy");
  if (logits.rank() < 2) throw DimensionError("cross_entropy logits must be rank >= 2, got " + shape_str(logits.shape()));
  const std::size_t vocab = logits.shape().back();
  const std::size_t rows = logits.size() / vocab;
  if (targets.size() != rows || ignore.size() != rows || (!weights.empty() && weights.size() != rows)) {
    throw DimensionError("cross_entropy: " + std::to_string(rows) + " positions but " +
                         std::to_string(targets.size()) + " targets / " + std::to_string(ignore.size()) +
                         " ignore flags / " + std::to_string(weights.size()) + " weights");
  }
  const auto ld = logits.data();
  auto probs = std::make_shared<std::vector<float>>(ld.size());
  auto coef = std::make_shared<std::vector<float>>(rows, 0.0f);
  auto tgt = std::make_shared<std::vector<TokenId>>(targets.begin(), targets.end());
  double total_weight = 0.0;
  double total_loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (ignore[r]) continue;
    const TokenId t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexError("target id " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));
    }
    const float* row = ld.data() + r * vocab;
    float* p = probs->data() + r * vocab;
    const float mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < vocab; ++j) {
      p[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - log_z));
    }
    const double w = weights.empty() ? 1.0 : weights[r];
    total_weight += w;
    total_loss += w * (log_z - row[t]);
    (*coef)[r] = static_cast<float>(w);
  }
  if (total_weight <= 0.0) throw DataError("cross_entropy: every position is ignored (degenerate batch)");
  for (float& c : *coef) c = static_cast<float>(c / total_weight);
  const float loss = static_cast<float>(total_loss / total_weight);
  return make_result("cross_entropy", {}, {loss}, {&logits},
                     [probs, coef, tgt, vocab](Node& self) {
                       auto& gl = self.inputs[0]->ensure_grad();
                       const float g = self.grad[0];
                       for (std::size_t r = 0; r < coef->size(); ++r) {
                         const float c = (*coef)[r] * g;
                         if (c == 0.0f) continue;
                         float* dst = gl.data() + r * vocab;
                         const float* p = probs->data() + r * vocab;
                         for (std::size_t j = 0; j < vocab; ++j) dst[j] += c * p[j];
                         dst[(*tgt)[r]] -= c;
                       }
                     });
}

}  // namespace occlm
