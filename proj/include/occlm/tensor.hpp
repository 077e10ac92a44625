// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "occlm/rng.hpp"

namespace occlm {

using Shape = std::vector<std::size_t>;
using TokenId = std::int32_t;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first backward touches the node
  bool requires_grad = false;
  std::uint64_t seq = 0;  // creation order; inputs always have smaller seq
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<float>& ensure_grad();
};

}  // namespace detail

/// Dense row-major float32 tensor with reverse-mode autodiff.
///
/// A `Tensor` is a shared handle: copies alias the same storage. Values are
/// fixed once an op has produced them; only `grad` accumulates. The one
/// sanctioned in-place path is `mutable_data()`, which optimizers and
/// initializers use on leaf parameters.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const;
  /// Only meaningful on leaves; toggled by freeze masks between steps.
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  /// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
  /// calls until `zero_grad()`; interior gradients are reset on every call.
  void backward() const;

  /// Detached deep copy of the values.
  Tensor clone(bool requires_grad = false) const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  const char* op_name() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of the ops reachable from a root.
///
/// Every entry's inputs precede it; `backward()` walks the entries in
/// reverse, visiting each exactly once.
class ComputationTape {
 public:
  static ComputationTape record(const Tensor& root);

  const std::vector<detail::Node*>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<detail::Node*> entries_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Row-major grid of token ids, e.g. a batch of B sequences of length T.
struct TokenGrid {
  std::size_t batch = 0;
  std::size_t time = 0;
  std::vector<TokenId> ids;

  TokenGrid() = default;
  TokenGrid(std::size_t b, std::size_t t, TokenId fill = 0) : batch(b), time(t), ids(b * t, fill) {}
  TokenGrid(std::size_t b, std::size_t t, std::vector<TokenId> values);

  TokenId& at(std::size_t b, std::size_t t) { return ids[b * time + t]; }
  TokenId at(std::size_t b, std::size_t t) const { return ids[b * time + t]; }
  bool operator==(const TokenGrid&) const = default;
};

enum class Activation { kGelu, kRelu };

// ---- kernels ---------------------------------------------------------------
// Binary elementwise ops accept either equal shapes or a `b` whose shape is a
// trailing suffix of `a`'s (bias-style broadcast over leading axes).

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// a[..., m, k] x b[k, n] (shared weight) or a[..., m, k] x b[..., k, n]
/// (matching leading axes). With `transpose_b`, b is read as [..., n, k].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor softmax_lastdim(const Tensor& x);

/// Normalizes over the last axis, then applies gamma/beta of that width.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

/// Tanh-approximated GELU.
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor activate(const Tensor& x, Activation act);

/// weight[V, d] gathered at ids -> [B, T, d].
Tensor embedding_lookup(const Tensor& weight, const TokenGrid& ids);

/// Inverted dropout. Identity when `!train` or `p == 0`.
Tensor dropout(const Tensor& x, float p, bool train, Rng& rng);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b);

/// Sets x[..., i, j] for j > i to a large negative constant.
Tensor causal_mask_fill(const Tensor& x);

/// Value written into masked attention scores.
inline constexpr float kMaskedScore = -1e9f;

/// Mean (optionally weighted) negative log-likelihood of `targets` under
/// softmax(logits) over positions whose `ignore` flag is 0.
/// logits: [B, T, V]; targets/ignore: B*T row-major; weights: B*T or empty.
Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                     std::span<const std::uint8_t> ignore, std::span<const float> weights = {});

}  // namespace occlm
