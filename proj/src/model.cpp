// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "occlm/model.hpp"

#include <algorithm>
#include <cmath>

#include "occlm/errors.hpp"

namespace occlm {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (vocab_size == 0) fail("vocab_size must be positive");
  if (block_size < 2) fail("block_size >= 2 required");
  if (d_model == 0) fail("d_model must be positive");
  if (n_layers < 1) fail("n_layers >= 1 required");
  if (n_heads == 0) fail("n_heads must be positive");
  if (d_model % n_heads != 0) {
    fail("d_model mod n_heads == 0 required (d_model=" + std::to_string(d_model) +
         ", n_heads=" + std::to_string(n_heads) + ")");
  }
  if (!(dropout >= 0.0f && dropout < 1.0f)) fail("0 <= dropout < 1 required");
  if (ffn_mult == 0) fail("ffn_mult must be positive");
}

std::size_t ModelConfig::parameter_count() const {
  const std::size_t d = d_model;
  const std::size_t f = ffn_mult * d;
  const std::size_t per_block = 2 * (2 * d)          // two layer norms
                                + 4 * (d * d + d)    // q, k, v, out
                                + (d * f + f)        // fc1
                                + (f * d + d);       // fc2
  std::size_t total = vocab_size * d + block_size * d + n_layers * per_block + 2 * d;
  if (!tie_embeddings) total += vocab_size * d;
  return total;
}

// ---- ParameterSet ----------------------------------------------------------

void ParameterSet::add(std::string name, Tensor tensor) {
  if (contains(name)) throw ConfigError("duplicate parameter name " + name);
  entries_.push_back({std::move(name), std::move(tensor)});
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
}

const Tensor& ParameterSet::at(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw IndexError("no parameter named " + std::string(name));
}

Tensor& ParameterSet::at(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.clone(e.tensor.requires_grad()));
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

// ---- freezing --------------------------------------------------------------

LayerGroup layer_group_of(std::string_view name) {
  if (name.rfind("blocks.", 0) == 0) {
    const auto dot = name.find('.', 7);
    return {LayerGroup::kBlock, std::stoul(std::string(name.substr(7, dot - 7)))};
  }
  if (name == "tok_emb" || name == "pos_emb") return {LayerGroup::kEmbeddings, 0};
  return {LayerGroup::kHead, 0};
}

FreezeMask FreezeMask::all_trainable(std::size_t n_layers) {
  FreezeMask m;
  m.blocks.assign(n_layers, true);
  return m;
}

bool FreezeMask::any_trainable() const {
  return embeddings || head || std::any_of(blocks.begin(), blocks.end(), [](bool b) { return b; });
}

bool FreezeMask::trainable(std::string_view name) const {
  const LayerGroup g = layer_group_of(name);
  switch (g.kind) {
    case LayerGroup::kEmbeddings:
      return embeddings;
    case LayerGroup::kBlock:
      return g.block < blocks.size() && blocks[g.block];
    case LayerGroup::kHead:
      return head;
  }
  return false;
}

// ---- model -----------------------------------------------------------------

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t f = c.ffn_mult * d;
  std::vector<std::pair<std::string, Shape>> layout{{"tok_emb", {c.vocab_size, d}}, {"pos_emb", {c.block_size, d}}};
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    layout.push_back({p + "ln1.weight", {d}});
    layout.push_back({p + "ln1.bias", {d}});
    for (const char* proj : {"q", "k", "v", "out"}) {
      layout.push_back({p + "attn." + proj + ".weight", {d, d}});
      layout.push_back({p + "attn." + proj + ".bias", {d}});
    }
    layout.push_back({p + "ln2.weight", {d}});
    layout.push_back({p + "ln2.bias", {d}});
    layout.push_back({p + "ffn.fc1.weight", {d, f}});
    layout.push_back({p + "ffn.fc1.bias", {f}});
    layout.push_back({p + "ffn.fc2.weight", {f, d}});
    layout.push_back({p + "ffn.fc2.bias", {d}});
  }
  layout.push_back({"ln_f.weight", {d}});
  layout.push_back({"ln_f.bias", {d}});
  if (!c.tie_embeddings) layout.push_back({"head.weight", {c.vocab_size, d}});
  return layout;
}

GptModel::GptModel(ModelConfig config, ParameterSet params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size()) {
    throw CheckpointError("parameter set has " + std::to_string(params_.size()) + " tensors, config expects " +
                          std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& e = params_.entries()[i];
    if (e.name != layout[i].first || e.tensor.shape() != layout[i].second) {
      throw CheckpointError("parameter " + e.name + " " + shape_str(e.tensor.shape()) + " does not match expected " +
                            layout[i].first + " " + shape_str(layout[i].second));
    }
  }
}

GptModel GptModel::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ParameterSet params;
  for (auto& [name, shape] : parameter_layout(config)) {
    const bool is_norm = name.find("ln") != std::string::npos;
    const bool is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    std::vector<float> values(numel(shape), 0.0f);
    if (is_norm && !is_bias) {
      std::fill(values.begin(), values.end(), 1.0f);
    } else if (!is_bias) {
      for (float& v : values) v = static_cast<float>(0.02 * rng.normal());
    }
    params.add(name, Tensor::from(shape, std::move(values), true));
  }
  return GptModel(config, std::move(params));
}

const Tensor& GptModel::head_weight() const {
  return config_.tie_embeddings ? params_.at("tok_emb") : params_.at("head.weight");
}

Tensor GptModel::linear(const Tensor& x, const std::string& prefix) const {
  return add(matmul(x, params_.at(prefix + ".weight")), params_.at(prefix + ".bias"));
}

Tensor GptModel::forward(const TokenGrid& ids, bool train, Rng* rng) const {
  const ModelConfig& c = config_;
  if (ids.batch == 0 || ids.time == 0) throw DimensionError("forward on an empty token grid");
  if (ids.time > c.block_size) {
    throw LengthError("sequence length " + std::to_string(ids.time) + " exceeds block_size " +
                      std::to_string(c.block_size));
  }
  for (TokenId id : ids.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(c.vocab_size));
    }
  }
  const bool use_dropout = train && c.dropout > 0.0f;
  if (use_dropout && rng == nullptr) throw ContractError("training forward with dropout needs an Rng");
  Rng unused(0);
  Rng& r = rng ? *rng : unused;

  const std::size_t B = ids.batch;
  const std::size_t T = ids.time;
  const std::size_t d = c.d_model;
  const std::size_t H = c.n_heads;
  const std::size_t hd = c.head_dim();

  TokenGrid positions(B, T);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) positions.at(b, t) = static_cast<TokenId>(t);
  }
  Tensor x = add(embedding_lookup(params_.at("tok_emb"), ids), embedding_lookup(params_.at("pos_emb"), positions));
  x = dropout(x, c.dropout, use_dropout, r);

  const float attn_scale = 1.0f / std::sqrt(static_cast<float>(hd));
  auto split_heads = [&](const Tensor& t) {
    return reshape(transpose(reshape(t, {B, T, H, hd}), 1, 2), {B * H, T, hd});
  };
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    const Tensor h = layer_norm(x, params_.at(p + "ln1.weight"), params_.at(p + "ln1.bias"));
    const Tensor q = split_heads(linear(h, p + "attn.q"));
    const Tensor k = split_heads(linear(h, p + "attn.k"));
    const Tensor v = split_heads(linear(h, p + "attn.v"));
    Tensor att = causal_mask_fill(scale(matmul(q, k, /*transpose_b=*/true), attn_scale));
    att = dropout(softmax_lastdim(att), c.dropout, use_dropout, r);
    Tensor y = reshape(transpose(reshape(matmul(att, v), {B, H, T, hd}), 1, 2), {B, T, d});
    y = dropout(linear(y, p + "attn.out"), c.dropout, use_dropout, r);
    x = add(x, y);

    const Tensor h2 = layer_norm(x, params_.at(p + "ln2.weight"), params_.at(p + "ln2.bias"));
    Tensor f = linear(activate(linear(h2, p + "ffn.fc1"), c.activation), p + "ffn.fc2");
    f = dropout(f, c.dropout, use_dropout, r);
    x = add(x, f);
  }
  x = layer_norm(x, params_.at("ln_f.weight"), params_.at("ln_f.bias"));
  return matmul(x, head_weight(), /*transpose_b=*/true);
}

std::vector<double> log_softmax_row(std::span<const float> logits) {
  double mx = -INFINITY;
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (float v : logits) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
  return out;
}

double GptModel::sequence_logprob(std::span<const TokenId> ids) const {
  if (ids.size() < 2) throw LengthError("sequence_logprob needs at least 2 tokens");
  NoGradGuard no_grad;
  const std::size_t T = ids.size() - 1;
  const Tensor logits = forward(TokenGrid(1, T, std::vector<TokenId>(ids.begin(), ids.end() - 1)));
  const std::size_t V = config_.vocab_size;
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = log_softmax_row(logits.data().subspan(t * V, V));
    total += row[static_cast<std::size_t>(ids[t + 1])];
  }
  return total;
}

void GptModel::apply_freeze(const FreezeMask& mask) {
  if (!mask.any_trainable()) throw ConfigError("freeze mask leaves no layer trainable");
  for (auto& e : params_.entries()) e.tensor.set_requires_grad(mask.trainable(e.name));
}

}  // namespace occlm
