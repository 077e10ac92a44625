// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "occlm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "occlm/eval.hpp"

namespace occlm {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid train config: " + what); };
  if (batch_size == 0) fail("batch_size >= 1 required");
  if (max_epochs == 0) fail("max_epochs >= 1 required");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) fail("base_lr > 0 required");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) fail("warmup_fraction in [0, 1) required");
  if (!(weight_decay >= 0.0)) fail("weight_decay >= 0 required");
  if (patience < 1) fail("patience >= 1 required");
  if (!(occlusion_prob >= 0.0 && occlusion_prob <= 1.0)) fail("0 <= occlusion_prob <= 1 required");
  if (!(occlusion_loss_weight >= 0.0)) fail("occlusion_loss_weight >= 0 required");
  if (grad_clip && !(*grad_clip > 0.0)) fail("grad_clip must be positive when set");
  if (unfreeze_interval_epochs < 1) fail("unfreeze_interval_epochs >= 1 required");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas in [0, 1) required");
  if (!(eps > 0.0)) fail("eps > 0 required");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"base_lr", c.base_lr},
          {"warmup_fraction", c.warmup_fraction},
          {"weight_decay", c.weight_decay},
          {"patience", c.patience},
          {"occlusion_prob", c.occlusion_prob},
          {"occlusion_loss_weight", c.occlusion_loss_weight},
          {"seed", c.seed},
          {"grad_clip", c.grad_clip ? nlohmann::json(*c.grad_clip) : nlohmann::json(nullptr)},
          {"unfreeze_top_k", c.unfreeze_top_k},
          {"unfreeze_interval_epochs", c.unfreeze_interval_epochs},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps}};
}

void merge_train_config(TrainConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "batch_size") {
        c.batch_size = value.get<std::size_t>();
      } else if (key == "max_epochs") {
        c.max_epochs = value.get<std::size_t>();
      } else if (key == "base_lr") {
        c.base_lr = value.get<double>();
      } else if (key == "warmup_fraction") {
        c.warmup_fraction = value.get<double>();
      } else if (key == "weight_decay") {
        c.weight_decay = value.get<double>();
      } else if (key == "patience") {
        c.patience = value.get<std::size_t>();
      } else if (key == "occlusion_prob") {
        c.occlusion_prob = value.get<double>();
      } else if (key == "occlusion_loss_weight") {
        c.occlusion_loss_weight = value.get<double>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "grad_clip") {
        c.grad_clip = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
      } else if (key == "unfreeze_top_k") {
        c.unfreeze_top_k = value.get<std::size_t>();
      } else if (key == "unfreeze_interval_epochs") {
        c.unfreeze_interval_epochs = value.get<std::size_t>();
      } else if (key == "beta1") {
        c.beta1 = value.get<double>();
      } else if (key == "beta2") {
        c.beta2 = value.get<double>();
      } else if (key == "eps") {
        c.eps = value.get<double>();
      } else {
        throw ConfigError("unknown train config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
}

namespace {

// JSON has no infinity; non-finite values are written as null.
nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double num_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

nlohmann::json epoch_json(const EpochRecord& r, bool with_wall) {
  nlohmann::json j = {{"epoch", r.epoch},
                      {"step", r.step},
                      {"train_loss", num(r.train_loss)},
                      {"train_perplexity", num(r.train_perplexity)},
                      {"valid_loss", num(r.valid_loss)},
                      {"valid_perplexity", num(r.valid_perplexity)},
                      {"lr", r.lr}};
  if (with_wall) j["wall_ms"] = r.wall_ms;
  return j;
}

}  // namespace

nlohmann::json epoch_record_to_json(const EpochRecord& r) { return epoch_json(r, true); }

EpochRecord epoch_record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.step = j.at("step").get<std::size_t>();
  r.train_loss = num_from(j.at("train_loss"));
  r.train_perplexity = num_from(j.at("train_perplexity"));
  r.valid_loss = num_from(j.at("valid_loss"));
  r.valid_perplexity = num_from(j.at("valid_perplexity"));
  r.lr = j.at("lr").get<double>();
  r.wall_ms = j.value("wall_ms", 0.0);
  return r;
}

TrainState TrainState::init(const GptModel& model, std::uint64_t seed) {
  TrainState s;
  for (const auto& e : model.params().entries()) {
    s.adam_m.emplace_back(e.tensor.size(), 0.0f);
    s.adam_v.emplace_back(e.tensor.size(), 0.0f);
    s.adam_t.push_back(0);
  }
  s.freeze = FreezeMask::all_trainable(model.config().n_layers);
  s.rng = Rng(derive_seed(seed, 1));
  return s;
}

// ---- occlusion and schedule ---------------------------------------------------

OcclusionResult occlude_batch(const TokenGrid& inputs, double p, const SpecialIds& specials, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("occlusion probability must lie in [0, 1]");
  if (specials.occ < 0 || specials.occ >= static_cast<TokenId>(Vocabulary::kNumSpecials) ||
      specials.occ == specials.pad || specials.occ == specials.eot) {
    throw ConfigError("occlusion id " + std::to_string(specials.occ) + " collides with a content or special token");
  }
  OcclusionResult r{inputs, std::vector<std::uint8_t>(inputs.ids.size(), 0), 0, 0};
  for (std::size_t i = 0; i < inputs.ids.size(); ++i) {
    const TokenId id = inputs.ids[i];
    if (id == specials.pad || id == specials.occ || id == specials.eot) continue;
    ++r.eligible;
    if (p > 0.0 && rng.uniform() < p) {
      r.inputs.ids[i] = specials.occ;
      r.flags[i] = 1;
      ++r.occluded;
    }
  }
  return r;
}

double lr_at(double step, std::size_t total_steps, const TrainConfig& c) {
  if (total_steps == 0) throw ConfigError("lr schedule needs total_steps > 0");
  const auto total = static_cast<double>(total_steps);
  if (!(step >= 0.0 && step <= total)) {
    throw ContractError("lr_at step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  const double warm = c.warmup_fraction * total;
  if (step < warm) return c.base_lr * step / warm;
  return c.base_lr * (total - step) / (total - warm);
}

FreezeMask unfreeze_schedule(std::size_t n_layers, std::size_t top_k, std::size_t interval, std::size_t epoch) {
  if (top_k < 1) throw ConfigError("unfreeze_top_k >= 1 required");
  if (interval < 1) throw ConfigError("unfreeze_interval_epochs >= 1 required");
  const std::size_t open = std::min(n_layers, top_k + epoch / interval);
  FreezeMask m;
  m.blocks.assign(n_layers, false);
  for (std::size_t i = n_layers - open; i < n_layers; ++i) m.blocks[i] = true;
  m.head = true;
  m.embeddings = open == n_layers;
  return m;
}

// ---- optimizer ------------------------------------------------------------------

void adamw_update(ParameterSet& params, TrainState& state, const TrainConfig& c, double lr) {
  auto& entries = params.entries();
  if (state.adam_m.size() != entries.size()) throw ContractError("optimizer state does not match parameter set");

  double clip_scale = 1.0;
  if (c.grad_clip) {
    double sq = 0.0;
    for (const auto& e : entries) {
      if (!e.tensor.requires_grad() || !e.tensor.has_grad()) continue;
      for (float g : e.tensor.grad()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > *c.grad_clip) clip_scale = *c.grad_clip / norm;
  }

  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].tensor;
    if (!p.requires_grad() || !p.has_grad()) continue;
    const auto t = static_cast<double>(++state.adam_t[i]);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    const double decay = p.rank() >= 2 ? c.weight_decay : 0.0;
    const auto grad = p.grad();
    auto data = p.mutable_data();
    auto& m = state.adam_m[i];
    auto& v = state.adam_v[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad[j] * clip_scale;
      const double mj = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      const double vj = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      if (lr == 0.0) continue;
      double w = data[j];
      w -= lr * decay * w;
      w -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + c.eps);
      data[j] = static_cast<float>(w);
    }
  }
}

StepResult train_step(GptModel& model, TrainState& state, const Batch& batch, const TrainConfig& c,
                      const SpecialIds& specials, double lr, std::size_t batch_index) {
  ParameterSet& params = model.params();
  params.zero_grad();
  StepResult result;
  try {
    TokenGrid inputs = batch.inputs;
    std::vector<float> weights;
    if (c.occlusion_prob > 0.0) {
      OcclusionResult occ = occlude_batch(batch.inputs, c.occlusion_prob, specials, state.rng);
      result.occluded = occ.occluded;
      if (c.occlusion_loss_weight != 1.0) {
        // The target at t is the input at t + 1, so that is where an
        // occluded token has to be recovered.
        weights.assign(inputs.ids.size(), 1.0f);
        for (std::size_t b = 0; b < inputs.batch; ++b) {
          for (std::size_t t = 0; t + 1 < inputs.time; ++t) {
            if (occ.flags[b * inputs.time + t + 1]) {
              weights[b * inputs.time + t] = static_cast<float>(c.occlusion_loss_weight);
            }
          }
        }
      }
      inputs = std::move(occ.inputs);
    }
    const Tensor logits = model.forward(inputs, /*train=*/true, &state.rng);
    Tensor loss = cross_entropy(logits, batch.targets, batch.ignore, weights);
    result.loss = loss.item();
    loss.backward();
  } catch (const NumericError& e) {
    throw DivergenceError(std::string("non-finite value during training: ") + e.what(), state.step + 1, lr,
                          batch_index);
  }
  for (const auto& e : params.entries()) {
    if (!e.tensor.requires_grad() || !e.tensor.has_grad()) continue;
    for (float g : e.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw DivergenceError("non-finite gradient in " + e.name, state.step + 1, lr, batch_index);
      }
    }
  }
  adamw_update(params, state, c, lr);
  ++state.step;
  return result;
}

// ---- fit --------------------------------------------------------------------------

FitResult fit(GptModel& model, const TokenDataset& train, const TokenDataset& valid, const TrainConfig& c,
              MetricsSink* sink, FitOptions options) {
  c.validate();
  if (train.empty() || train.num_target_tokens() == 0) throw DataError("training dataset is empty");
  if (valid.empty() || valid.num_target_tokens() == 0) throw DataError("validation dataset is empty");
  if (train.block_size() > model.config().block_size) {
    throw LengthError("dataset block_size " + std::to_string(train.block_size()) + " exceeds model block_size " +
                      std::to_string(model.config().block_size));
  }
  if (options.resume_state.has_value() != options.resume_best.has_value()) {
    throw ContractError("resuming needs both the saved state and the saved best model");
  }

  FitResult result{model.clone(), TrainState::init(model, c.seed)};
  if (options.resume_state) {
    result.state = std::move(*options.resume_state);
    result.best = std::move(*options.resume_best);
  }
  TrainState& state = result.state;

  const std::size_t n_windows = train.num_windows();
  const std::size_t steps_per_epoch = (n_windows + c.batch_size - 1) / c.batch_size;
  const std::size_t total_steps = steps_per_epoch * c.max_epochs;
  const auto started = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  };
  auto emit = [&](const std::string& split, std::size_t epoch, double loss, double lr) {
    if (sink == nullptr) return;
    MetricRecord r;
    r.run_id = options.run_id;
    r.epoch = epoch;
    r.step = state.step;
    r.split = split;
    r.loss = loss;
    r.perplexity = std::exp(loss);
    r.lr = lr;
    r.occlusion_prob = c.occlusion_prob;
    r.wall_ms = elapsed_ms();
    sink->write(r);
  };

  std::vector<std::size_t> order(n_windows);
  while (state.epoch < c.max_epochs && state.stop_reason.empty()) {
    const std::size_t epoch = state.epoch;
    if (options.freeze_schedule) {
      state.freeze = options.freeze_schedule(epoch);
      model.apply_freeze(state.freeze);
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n_windows; i > 1; --i) std::swap(order[i - 1], order[state.rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    double lr = 0.0;
    try {
      for (std::size_t b = 0; b < steps_per_epoch; ++b) {
        const std::size_t lo = b * c.batch_size;
        const std::size_t hi = std::min(lo + c.batch_size, n_windows);
        const Batch batch = train.make_batch(std::span(order).subspan(lo, hi - lo));
        const std::size_t count = batch.target_count();
        if (count == 0) continue;
        lr = lr_at(static_cast<double>(std::min(state.step + 1, total_steps)), total_steps, c);
        const StepResult step = train_step(model, state, batch, c, options.specials, lr, b);
        loss_sum += step.loss * static_cast<double>(count);
        loss_count += count;
      }
    } catch (DivergenceError& e) {
      state.stop_reason = "diverged";
      e.history = state.history;
      throw;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.step = state.step;
    rec.lr = lr;
    rec.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    rec.train_perplexity = std::exp(rec.train_loss);
    double vloss = perplexity(model, valid, options.eval_batch_size).mean_loss;
    if (options.validation_override) vloss = options.validation_override(rec.epoch, vloss);
    rec.valid_loss = vloss;
    rec.valid_perplexity = std::exp(vloss);
    rec.wall_ms = elapsed_ms();
    state.history.push_back(rec);
    state.epoch = epoch + 1;
    emit("train", rec.epoch, rec.train_loss, lr);
    emit("validation", rec.epoch, rec.valid_loss, lr);

    if (vloss < state.best_valid_loss) {
      state.best_valid_loss = vloss;
      state.best_epoch = rec.epoch;
      state.epochs_since_improvement = 0;
      result.best = model.clone();
    } else {
      ++state.epochs_since_improvement;
    }

    const bool over = !std::isfinite(rec.train_loss) || rec.train_loss > options.divergence_threshold;
    state.epochs_over_threshold = over ? state.epochs_over_threshold + 1 : 0;
    if (state.epochs_over_threshold >= options.divergence_epochs) {
      state.stop_reason = "diverged";
      DivergenceError err("training loss above " + std::to_string(options.divergence_threshold) + " for " +
                              std::to_string(state.epochs_over_threshold) + " consecutive epochs",
                          state.step, lr, steps_per_epoch - 1);
      err.history = state.history;
      throw err;
    }
    if (options.on_epoch_end) options.on_epoch_end(model, state);
    if (state.epochs_since_improvement >= c.patience) state.stop_reason = "early_stop";
  }
  if (state.stop_reason.empty()) state.stop_reason = "max_epochs";
  if (sink != nullptr) sink->flush();
  return result;
}

FitResult finetune(GptModel& model, const TokenDataset& train, const TokenDataset& valid, const TrainConfig& c,
                   MetricsSink* sink, FitOptions options) {
  c.validate();
  const std::size_t L = model.config().n_layers;
  const std::size_t k = c.unfreeze_top_k;
  const std::size_t interval = c.unfreeze_interval_epochs;
  unfreeze_schedule(L, k, interval, 0);  // validates k and interval
  options.freeze_schedule = [L, k, interval](std::size_t epoch) { return unfreeze_schedule(L, k, interval, epoch); };
  FitResult result = fit(model, train, valid, c, sink, std::move(options));
  const FreezeMask all = FreezeMask::all_trainable(L);
  model.apply_freeze(all);
  result.best.apply_freeze(all);
  return result;
}

FitResult finetune(const Checkpoint& pretrained, const ModelConfig& expected_config,
                   std::string_view expected_vocab_hash, const TokenDataset& train, const TokenDataset& valid,
                   const TrainConfig& config, MetricsSink* sink, FitOptions options) {
  require_compatible(pretrained, expected_config, expected_vocab_hash);
  GptModel model = pretrained.model.clone();
  return finetune(model, train, valid, config, sink, std::move(options));
}

// ---- persistence ---------------------------------------------------------------------

nlohmann::json train_state_to_json(const TrainState& s) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : s.history) history.push_back(epoch_json(r, false));
  return {{"step", s.step},
          {"epoch", s.epoch},
          {"adam_t", s.adam_t},
          {"best_valid_loss", std::isfinite(s.best_valid_loss) ? nlohmann::json(s.best_valid_loss) : nullptr},
          {"best_epoch", s.best_epoch},
          {"epochs_since_improvement", s.epochs_since_improvement},
          {"epochs_over_threshold", s.epochs_over_threshold},
          {"freeze", {{"embeddings", s.freeze.embeddings}, {"blocks", s.freeze.blocks}, {"head", s.freeze.head}}},
          {"rng", s.rng.serialize()},
          {"history", history},
          {"stop_reason", s.stop_reason}};
}

Checkpoint make_checkpoint(const GptModel& model, const TrainState* state, std::string vocab_hash, std::string run_id,
                           nlohmann::json metadata) {
  Checkpoint ckpt;
  ckpt.model = model.clone();
  ckpt.vocab_hash = std::move(vocab_hash);
  ckpt.run_id = std::move(run_id);
  ckpt.metadata = std::move(metadata);
  if (state != nullptr) {
    ckpt.state = train_state_to_json(*state);
    const auto& entries = model.params().entries();
    if (state->adam_m.size() != entries.size()) throw ContractError("optimizer state does not match parameter set");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      ckpt.extra_tensors.push_back(
          {"adam.m." + entries[i].name, Tensor::from(entries[i].tensor.shape(), state->adam_m[i])});
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      ckpt.extra_tensors.push_back(
          {"adam.v." + entries[i].name, Tensor::from(entries[i].tensor.shape(), state->adam_v[i])});
    }
  }
  return ckpt;
}

TrainState restore_train_state(const Checkpoint& ckpt) {
  if (ckpt.state.is_null()) throw CheckpointError("checkpoint carries no training state");
  const auto& entries = ckpt.model.params().entries();
  TrainState s;
  try {
    const auto& j = ckpt.state;
    s.step = j.at("step").get<std::size_t>();
    s.epoch = j.at("epoch").get<std::size_t>();
    s.adam_t = j.at("adam_t").get<std::vector<std::size_t>>();
    s.best_valid_loss = j.at("best_valid_loss").is_null() ? std::numeric_limits<double>::infinity()
                                                          : j.at("best_valid_loss").get<double>();
    s.best_epoch = j.at("best_epoch").get<std::size_t>();
    s.epochs_since_improvement = j.at("epochs_since_improvement").get<std::size_t>();
    s.epochs_over_threshold = j.at("epochs_over_threshold").get<std::size_t>();
    s.freeze.embeddings = j.at("freeze").at("embeddings").get<bool>();
    s.freeze.blocks = j.at("freeze").at("blocks").get<std::vector<bool>>();
    s.freeze.head = j.at("freeze").at("head").get<bool>();
    s.rng.deserialize(j.at("rng").get<std::string>());
    for (const auto& r : j.at("history")) s.history.push_back(epoch_record_from_json(r));
    s.stop_reason = j.at("stop_reason").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt training state: ") + e.what());
  }
  if (ckpt.extra_tensors.size() != 2 * entries.size() || s.adam_t.size() != entries.size()) {
    throw CheckpointError("optimizer moments do not match the parameter set");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& m = ckpt.extra_tensors[i];
    const auto& v = ckpt.extra_tensors[entries.size() + i];
    if (m.name != "adam.m." + entries[i].name || v.name != "adam.v." + entries[i].name ||
        m.tensor.shape() != entries[i].tensor.shape() || v.tensor.shape() != entries[i].tensor.shape()) {
      throw CheckpointError("optimizer moment for " + entries[i].name + " is missing or misshapen");
    }
    s.adam_m.emplace_back(m.tensor.data().begin(), m.tensor.data().end());
    s.adam_v.emplace_back(v.tensor.data().begin(), v.tensor.data().end());
  }
  return s;
}

}  // namespace occlm
