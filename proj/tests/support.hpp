// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

// Helpers shared by the unit tests and the acceptance runner.

#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "occlm/bpe.hpp"
#include "occlm/corpus.hpp"
#include "occlm/demo_corpus.hpp"
#include "occlm/model.hpp"
#include "occlm/rng.hpp"
#include "occlm/tensor.hpp"

namespace occlm::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("occlm-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(const Shape& shape, Rng& rng, double stddev = 1.0, bool requires_grad = true) {
  std::vector<float> v(numel(shape));
  for (float& x : v) x = static_cast<float>(rng.normal() * stddev);
  return Tensor::from(shape, std::move(v), requires_grad);
}

/// Per-leaf relative error between backprop and central differences.
struct GradCheckResult {
  std::vector<double> relative_errors;  // one per leaf
  std::vector<double> analytic_norms;
  std::vector<double> numeric_norms;
  /// Leaf i agrees when the relative error is below `tol`, or when both
  /// gradients are zero up to float32 noise. The attention key bias is such a
  /// case: adding a constant to every key shifts a whole score row, which
  /// softmax cancels, so its true gradient is exactly zero.
  bool matches(std::size_t i, double tol) const {
    if (relative_errors[i] < tol) return true;
    return analytic_norms[i] < 1e-6 && numeric_norms[i] < 1e-3;
  }
  bool all_match(double tol) const {
    for (std::size_t i = 0; i < relative_errors.size(); ++i) {
      if (!matches(i, tol)) return false;
    }
    return true;
  }
  double max_error() const {
    double m = 0.0;
    for (double e : relative_errors) m = std::max(m, e);
    return m;
  }
};

/// Checks d(readout)/d(leaf) for every leaf, where readout = sum(w * f())
/// with fixed random w. The numeric side perturbs each leaf element by +-h
/// and accumulates the readout in double. `f` must rebuild its output from
/// the current leaf values on every call.
inline GradCheckResult gradient_check(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                                      std::uint64_t seed, double h = 1e-3) {
  Rng rng(seed);
  Tensor y = f();
  std::vector<double> w(y.size());
  for (double& x : w) x = rng.normal();
  std::vector<float> wf(w.begin(), w.end());
  for (Tensor leaf : leaves) leaf.zero_grad();
  Tensor readout = sum(mul(y, Tensor::from(y.shape(), wf)));
  readout.backward();

  auto evaluate = [&] {
    NoGradGuard guard;
    Tensor out = f();
    double acc = 0.0;
    const auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) acc += w[i] * static_cast<double>(d[i]);
    return acc;
  };

  GradCheckResult result;
  for (Tensor leaf : leaves) {
    std::vector<double> analytic(leaf.size(), 0.0);
    if (leaf.has_grad()) {
      const auto g = leaf.grad();
      for (std::size_t i = 0; i < g.size(); ++i) analytic[i] = g[i];
    }
    double diff2 = 0.0;
    double a2 = 0.0;
    double n2 = 0.0;
    auto data = leaf.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float saved = data[i];
      data[i] = saved + static_cast<float>(h);
      const double plus = evaluate();
      data[i] = saved - static_cast<float>(h);
      const double minus = evaluate();
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    result.relative_errors.push_back(std::sqrt(diff2) / denom);
    result.analytic_norms.push_back(std::sqrt(a2));
    result.numeric_norms.push_back(std::sqrt(n2));
  }
  return result;
}

/// Token grid with ids drawn uniformly from [lo, hi).
inline TokenGrid random_grid(std::size_t b, std::size_t t, TokenId lo, TokenId hi, Rng& rng) {
  TokenGrid g(b, t);
  for (TokenId& id : g.ids) id = lo + static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(hi - lo)));
  return g;
}

inline ModelConfig tiny_config(std::size_t vocab = 16, std::size_t block = 8, std::size_t d = 8, std::size_t layers = 1,
                               std::size_t heads = 2) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.block_size = block;
  c.d_model = d;
  c.n_layers = layers;
  c.n_heads = heads;
  c.dropout = 0.0f;
  return c;
}

/// Redraws every parameter with a larger spread so gradients sit well above
/// float32 rounding noise in finite-difference checks.
inline void spread_parameters(GptModel& model, std::uint64_t seed, double stddev = 0.4) {
  Rng rng(seed);
  for (auto& [name, t] : model.params().entries()) {
    const bool is_norm_scale = name.find("ln") != std::string::npos && name.ends_with(".weight");
    for (float& x : t.mutable_data()) {
      x = static_cast<float>(is_norm_scale ? 1.0 + 0.2 * rng.normal() : stddev * rng.normal());
    }
  }
}

/// 32 distinct content ids, repeated: the memorization corpus.
inline std::vector<TokenId> memorization_sequence(std::size_t distinct = 32, TokenId first = 3) {
  std::vector<TokenId> seq(distinct);
  for (std::size_t i = 0; i < distinct; ++i) seq[i] = first + static_cast<TokenId>(i);
  return seq;
}

/// Dataset whose windows each hold the memorization sequence followed by
/// its first id, so every window has exactly `distinct` targets.
inline TokenDataset memorization_dataset(std::size_t copies, std::size_t distinct = 32, TokenId first = 3) {
  TokenDataset ds(distinct, 0);
  std::vector<TokenId> w = memorization_sequence(distinct, first);
  w.push_back(first);
  for (std::size_t i = 0; i < copies; ++i) ds.append_window(w);
  return ds;
}

/// Small cleaned demo corpus with its own vocabulary, packed for training.
struct TextFixture {
  Vocabulary vocab;
  std::vector<std::string> train_lines;
  std::vector<std::string> valid_lines;
  TokenDataset train;
  TokenDataset valid;
};

inline TextFixture text_fixture(std::size_t raw_lines = 120, std::size_t vocab_size = 300, std::size_t block = 16,
                                DemoStyle style = DemoStyle::kGeneral, std::uint64_t seed = 1) {
  TextFixture f;
  const auto cleaned = clean(demo_corpus(style, raw_lines, seed));
  const SplitResult parts = split(cleaned, SplitSpec{0.85, 0.15, 0.0, seed});
  f.train_lines = parts.train;
  f.valid_lines = parts.valid;
  f.vocab = train_bpe(f.train_lines, vocab_size);
  f.train = pack(f.train_lines, f.vocab, block);
  f.valid = pack(f.valid_lines, f.vocab, block);
  return f;
}

}  // namespace occlm::testing
