// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "occlm/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include "occlm/checkpoint.hpp"
#include "occlm/hash.hpp"

namespace occlm {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double null_as_inf(const nlohmann::json& j) { return j.is_null() ? kInf : j.get<double>(); }

template <typename T>
const T& pick(const std::vector<T>& choices, Rng& rng) {
  return choices[rng.below(choices.size())];
}

}  // namespace

void SweepSpec::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid sweep spec: " + what); };
  if (trial_count < 1) fail("trial_count >= 1 required");
  if (max_epochs < 1) fail("max_epochs >= 1 required");
  if (!(lr_min > 0.0 && lr_max >= lr_min)) fail("0 < lr_min <= lr_max required");
  if (n_layers.empty() || n_heads.empty() || dropout.empty() || occlusion_prob.empty()) {
    fail("every choice set needs at least one value");
  }
  if (max_resamples < 1) fail("max_resamples >= 1 required");
}

nlohmann::json SweepSpec::to_json() const {
  return {{"lr", {{"min", lr_min}, {"max", lr_max}}},
          {"n_layers", n_layers},
          {"n_heads", n_heads},
          {"d_model", d_model},
          {"dropout", dropout},
          {"occlusion_prob", occlusion_prob},
          {"trial_count", trial_count},
          {"max_epochs", max_epochs},
          {"seed", seed},
          {"max_resamples", max_resamples},
          {"model", model_config_to_json(base_model)},
          {"train", train_config_to_json(base_train)}};
}

SweepSpec SweepSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("sweep spec must be a JSON object");
  SweepSpec s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr") {
        s.lr_min = value.at("min").get<double>();
        s.lr_max = value.at("max").get<double>();
      } else if (key == "n_layers") {
        s.n_layers = value.get<std::vector<std::size_t>>();
      } else if (key == "n_heads") {
        s.n_heads = value.get<std::vector<std::size_t>>();
      } else if (key == "d_model") {
        s.d_model = value.get<std::vector<std::size_t>>();
      } else if (key == "dropout") {
        s.dropout = value.get<std::vector<double>>();
      } else if (key == "occlusion_prob") {
        s.occlusion_prob = value.get<std::vector<double>>();
      } else if (key == "trial_count") {
        s.trial_count = value.get<std::size_t>();
      } else if (key == "max_epochs") {
        s.max_epochs = value.get<std::size_t>();
      } else if (key == "seed") {
        s.seed = value.get<std::uint64_t>();
      } else if (key == "max_resamples") {
        s.max_resamples = value.get<std::size_t>();
      } else if (key == "model") {
        merge_model_config(s.base_model, value);
      } else if (key == "train") {
        merge_train_config(s.base_train, value);
      } else {
        throw ConfigError("unknown sweep spec key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed sweep spec: ") + e.what());
  }
  s.validate();
  return s;
}

TrialConfig sample_trial(const SweepSpec& spec, std::size_t index) {
  spec.validate();
  if (index >= spec.trial_count) {
    throw ContractError("trial index " + std::to_string(index) + " >= trial_count " +
                        std::to_string(spec.trial_count));
  }
  Rng rng(derive_seed(spec.seed, index));
  for (std::size_t attempt = 0; attempt < spec.max_resamples; ++attempt) {
    TrialConfig t;
    t.index = index;
    t.model = spec.base_model;
    t.train = spec.base_train;
    const double log_lo = std::log(spec.lr_min);
    const double log_hi = std::log(spec.lr_max);
    t.train.base_lr = spec.lr_min == spec.lr_max ? spec.lr_min : std::exp(log_lo + rng.uniform() * (log_hi - log_lo));
    t.model.n_layers = pick(spec.n_layers, rng);
    t.model.n_heads = pick(spec.n_heads, rng);
    if (!spec.d_model.empty()) t.model.d_model = pick(spec.d_model, rng);
    t.model.dropout = static_cast<float>(pick(spec.dropout, rng));
    t.train.occlusion_prob = pick(spec.occlusion_prob, rng);
    t.train.max_epochs = spec.max_epochs;
    t.train.seed = derive_seed(spec.seed ^ 0x9e3779b97f4a7c15ULL, index);
    if (t.model.n_heads == 0 || t.model.d_model % t.model.n_heads != 0) continue;
    t.sampled = {{"lr", t.train.base_lr},
                 {"n_layers", t.model.n_layers},
                 {"n_heads", t.model.n_heads},
                 {"dropout", t.model.dropout},
                 {"occlusion_prob", t.train.occlusion_prob}};
    if (!spec.d_model.empty()) t.sampled["d_model"] = t.model.d_model;
    return t;
  }
  throw ConfigError("no valid (d_model, n_heads) combination after " + std::to_string(spec.max_resamples) +
                    " resamples for trial " + std::to_string(index));
}

// ---- records ------------------------------------------------------------------

nlohmann::json TrialRecord::to_json() const {
  nlohmann::json history_json = nlohmann::json::array();
  for (const auto& r : history) history_json.push_back(epoch_record_to_json(r));
  return {{"trial_id", trial_id},
          {"sampled", sampled},
          {"model", model_config_to_json(model)},
          {"train", train_config_to_json(train)},
          {"history", history_json},
          {"best_valid_loss", finite_or_null(best_valid_loss)},
          {"best_valid_perplexity", finite_or_null(best_valid_perplexity)},
          {"stop_reason", stop_reason},
          {"wall_ms", wall_ms}};
}

TrialRecord TrialRecord::from_json(const nlohmann::json& j) {
  TrialRecord r;
  try {
    r.trial_id = j.at("trial_id").get<std::size_t>();
    r.sampled = j.at("sampled");
    merge_model_config(r.model, j.at("model"));
    merge_train_config(r.train, j.at("train"));
    for (const auto& h : j.at("history")) r.history.push_back(epoch_record_from_json(h));
    r.best_valid_loss = null_as_inf(j.at("best_valid_loss"));
    r.best_valid_perplexity = null_as_inf(j.at("best_valid_perplexity"));
    r.stop_reason = j.at("stop_reason").get<std::string>();
    r.wall_ms = j.at("wall_ms").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed trial record: ") + e.what());
  }
  return r;
}

bool TrialRecord::operator==(const TrialRecord& o) const {
  return trial_id == o.trial_id && sampled == o.sampled && model == o.model && train == o.train &&
         history == o.history && best_valid_loss == o.best_valid_loss &&
         best_valid_perplexity == o.best_valid_perplexity && stop_reason == o.stop_reason && wall_ms == o.wall_ms;
}

std::string default_sweep_run_id(const SweepSpec& spec) { return "sweep-" + hash_hex(spec.to_json().dump()); }

// ---- execution ------------------------------------------------------------------

namespace {

struct TrialOutcome {
  TrialRecord record;
  std::optional<GptModel> best;
};

TrialOutcome run_trial(const TrialConfig& t, const TokenDataset& train, const TokenDataset& valid, MetricsSink* sink,
                       const SweepOptions& options, const std::filesystem::path& dir, const std::string& run_id) {
  const auto started = std::chrono::steady_clock::now();
  TrialOutcome out;
  TrialRecord& r = out.record;
  r.trial_id = t.index;
  r.sampled = t.sampled;
  r.model = t.model;
  r.train = t.train;

  std::optional<JsonlSink> file_sink;
  MemorySink discard;
  std::vector<MetricsSink*> sinks;
  if (!dir.empty()) {
    write_file(dir / "config.json",
               nlohmann::json({{"model", model_config_to_json(t.model)},
                               {"train", train_config_to_json(t.train)},
                               {"sampled", t.sampled}})
                       .dump(2) +
                   "\n");
    std::filesystem::remove(dir / "metrics.jsonl");
    file_sink.emplace(dir / "metrics.jsonl");
    sinks.push_back(&*file_sink);
  }
  if (sink != nullptr) sinks.push_back(sink);
  TeeSink tee(sinks);

  FitOptions fo;
  fo.run_id = run_id + "/trial_" + std::to_string(t.index);
  fo.specials = options.specials;
  try {
    GptModel model = GptModel::init(t.model, derive_seed(t.train.seed, 0));
    FitResult fitted = fit(model, train, valid, t.train, &tee, fo);
    r.history = fitted.state.history;
    r.stop_reason = fitted.state.stop_reason;
    r.best_valid_loss = fitted.state.best_valid_loss;
    out.best = std::move(fitted.best);
  } catch (const DivergenceError& e) {
    r.history = e.history;
    r.stop_reason = "diverged";
    r.best_valid_loss = kInf;
    for (const auto& h : r.history) {
      if (std::isfinite(h.valid_loss)) r.best_valid_loss = std::min(r.best_valid_loss, h.valid_loss);
    }
  } catch (const ConfigError&) {
    // An invalid sampled config cannot be trained; record it as diverged.
    r.stop_reason = "diverged";
    r.best_valid_loss = kInf;
  }
  tee.flush();
  r.best_valid_perplexity = std::exp(r.best_valid_loss);
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  if (!dir.empty()) {
    if (out.best) save_checkpoint(dir / "checkpoint.bin", make_checkpoint(*out.best, nullptr, options.vocab_hash, fo.run_id));
    // Written last: its presence marks the trial as complete.
    write_file(dir / "record.json", r.to_json().dump(2) + "\n");
  }
  return out;
}

}  // namespace

SweepResult run_sweep(const SweepSpec& spec, const TokenDataset& train, const TokenDataset& valid, MetricsSink* sink,
                      const SweepOptions& options) {
  spec.validate();
  if (train.empty() || valid.empty()) throw DataError("sweep needs nonempty train and validation datasets");
  const std::string run_id = options.run_id.empty() ? default_sweep_run_id(spec) : options.run_id;
  const std::filesystem::path root = options.out_dir.empty() ? std::filesystem::path() : options.out_dir / run_id;
  auto trial_dir = [&](std::size_t k) {
    return root.empty() ? std::filesystem::path() : root / ("trial_" + std::to_string(k));
  };
  if (!root.empty()) write_file(root / "spec.json", spec.to_json().dump(2) + "\n");

  std::vector<std::optional<TrialRecord>> records(spec.trial_count);
  std::vector<std::optional<GptModel>> models(spec.trial_count);
  SweepResult result;
  std::vector<std::size_t> pending;
  for (std::size_t k = 0; k < spec.trial_count; ++k) {
    const auto dir = trial_dir(k);
    if (!dir.empty() && std::filesystem::exists(dir / "record.json")) {
      records[k] = TrialRecord::from_json(nlohmann::json::parse(read_file(dir / "record.json")));
      ++result.resumed;
    } else {
      pending.push_back(k);
    }
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t slot = next.fetch_add(1);
      if (slot >= pending.size()) return;
      const std::size_t k = pending[slot];
      try {
        TrialConfig t = sample_trial(spec, k);
        if (options.trial_hook) options.trial_hook(t);
        TrialOutcome o = run_trial(t, train, valid, sink, options, trial_dir(k), run_id);
        std::lock_guard lock(mu);
        records[k] = std::move(o.record);
        models[k] = std::move(o.best);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(options.parallel, pending.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (auto& r : records) result.leaderboard.push_back(std::move(*r));
  std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(), [](const TrialRecord& a, const TrialRecord& b) {
    if (a.best_valid_loss != b.best_valid_loss) return a.best_valid_loss < b.best_valid_loss;
    return a.trial_id < b.trial_id;
  });
  const auto completed = std::count_if(result.leaderboard.begin(), result.leaderboard.end(),
                                       [](const TrialRecord& r) { return r.stop_reason != "diverged"; });
  if (completed == 0) throw SweepError("no sweep trial completed; all " + std::to_string(spec.trial_count) + " diverged");
  result.best = result.leaderboard.front();
  const std::size_t best_id = result.best.trial_id;
  if (models[best_id]) {
    result.best_model = std::move(models[best_id]);
  } else if (!root.empty() && std::filesystem::exists(trial_dir(best_id) / "checkpoint.bin")) {
    result.best_model = load_checkpoint(trial_dir(best_id) / "checkpoint.bin").model;
  }
  if (!root.empty()) {
    nlohmann::json board = {{"run_id", run_id}, {"best_trial", best_id}, {"trials", nlohmann::json::array()}};
    for (const auto& r : result.leaderboard) {
      board["trials"].push_back({{"trial_id", r.trial_id},
                                 {"best_valid_loss", finite_or_null(r.best_valid_loss)},
                                 {"best_valid_perplexity", finite_or_null(r.best_valid_perplexity)},
                                 {"stop_reason", r.stop_reason},
                                 {"sampled", r.sampled}});
    }
    write_file(root / "leaderboard.json", board.dump(2) + "\n");
    write_file(root / "report.json", sweep_report(result.leaderboard).dump(2) + "\n");
    if (result.best_model) {
      save_checkpoint(root / "best_checkpoint.bin", make_checkpoint(*result.best_model, nullptr, options.vocab_hash,
                                                                     run_id + "/trial_" + std::to_string(best_id)));
    }
  }
  return result;
}

// ---- report ------------------------------------------------------------------------

nlohmann::json sweep_report(const std::vector<TrialRecord>& records) {
  std::set<std::string> params;
  for (const auto& r : records) {
    for (const auto& [key, value] : r.sampled.items()) params.insert(key);
  }
  nlohmann::json columns = nlohmann::json::array({"trial_id"});
  for (const auto& p : params) columns.push_back(p);
  for (const char* c : {"best_valid_loss", "best_valid_perplexity", "stop_reason", "epochs"}) columns.push_back(c);

  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json curves = nlohmann::json::array();
  nlohmann::json full = nlohmann::json::array();
  for (const auto& r : records) {
    nlohmann::json row = nlohmann::json::array({r.trial_id});
    for (const auto& p : params) row.push_back(r.sampled.contains(p) ? r.sampled.at(p) : nlohmann::json(nullptr));
    row.push_back(finite_or_null(r.best_valid_loss));
    row.push_back(finite_or_null(r.best_valid_perplexity));
    row.push_back(r.stop_reason);
    row.push_back(r.history.size());
    rows.push_back(row);

    nlohmann::json curve = {{"trial_id", r.trial_id},
                            {"epoch", nlohmann::json::array()},
                            {"train_loss", nlohmann::json::array()},
                            {"valid_loss", nlohmann::json::array()}};
    for (const auto& h : r.history) {
      curve["epoch"].push_back(h.epoch);
      curve["train_loss"].push_back(finite_or_null(h.train_loss));
      curve["valid_loss"].push_back(finite_or_null(h.valid_loss));
    }
    curves.push_back(curve);
    full.push_back(r.to_json());
  }
  return {{"columns", columns}, {"rows", rows}, {"curves", curves}, {"records", full}};
}

std::vector<TrialRecord> parse_sweep_report(const nlohmann::json& report) {
  std::vector<TrialRecord> out;
  try {
    for (const auto& r : report.at("records")) out.push_back(TrialRecord::from_json(r));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed sweep report: ") + e.what());
  }
  return out;
}

}  // namespace occlm
