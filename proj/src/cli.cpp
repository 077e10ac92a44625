// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "occlm/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "occlm/bpe.hpp"
#include "occlm/checkpoint.hpp"
#include "occlm/config_io.hpp"
#include "occlm/corpus.hpp"
#include "occlm/demo_corpus.hpp"
#include "occlm/errors.hpp"
#include "occlm/eval.hpp"
#include "occlm/hash.hpp"
#include "occlm/metrics_sink.hpp"
#include "occlm/sweep.hpp"
#include "occlm/train.hpp"

namespace occlm::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string join_args(const std::vector<std::string>& args) {
  std::string s;
  for (const auto& a : args) s += (s.empty() ? "" : " ") + a;
  return s;
}

void require_path(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ConfigError("missing required input " + flag + " <path>");
}

/// Run manifest, written before work starts and finalized on every exit path.
class Manifest {
 public:
  Manifest(fs::path path, json body) : path_(std::move(path)), body_(std::move(body)) {
    body_["toolkit_version"] = kToolkitVersion;
    body_["started_at"] = utc_now();
    body_["finished_at"] = nullptr;
    body_["status"] = "running";
    write();
  }
  ~Manifest() {
    if (!done_) {
      try {
        finish("error", std::uncaught_exceptions() > 0 ? "aborted by an error" : "aborted");
      } catch (...) {
      }
    }
  }
  Manifest(const Manifest&) = delete;
  Manifest& operator=(const Manifest&) = delete;

  json& body() { return body_; }
  void finish(const std::string& status, const std::string& message = "") {
    body_["status"] = status;
    body_["finished_at"] = utc_now();
    if (!message.empty()) body_["message"] = message;
    write();
    done_ = true;
  }

 private:
  void write() const { write_file(path_, body_.dump(2) + "\n"); }
  fs::path path_;
  json body_;
  bool done_ = false;
};

TokenDataset load_split(const fs::path& path, const Vocabulary& vocab, std::size_t block_size) {
  if (path.extension() == ".bin") {
    TokenDataset d = TokenDataset::load(path);
    if (d.block_size() != block_size) {
      throw ConfigError("packed dataset " + path.string() + " has block_size " + std::to_string(d.block_size()) +
                        " but the model uses " + std::to_string(block_size));
    }
    return d;
  }
  return pack(read_lines(path), vocab, block_size);
}

// ---- training-config flags ---------------------------------------------------

struct TrainFlags {
  std::string config_path;
  std::string preset_name;
  std::string objective;
  std::string train_path;
  std::string valid_path;
  std::string vocab_path;
  std::string out_dir;
  bool deterministic = false;

  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> overrides;
  double lr = 0, occlusion_prob = 0, dropout = 0, weight_decay = 0, warmup = 0, grad_clip = 0, occ_weight = 0;
  std::size_t batch_size = 0, max_epochs = 0, patience = 0, layers = 0, heads = 0, d_model = 0, block_size = 0,
              top_k = 0, interval = 0;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* occ_opt = nullptr;
  CLI::Option* dropout_opt = nullptr;

  void add(CLI::App* app, bool model_flags) {
    app->add_option("--config", config_path, "JSON config file (objective/model/train sections)");
    app->add_option("--preset", preset_name, "Built-in preset, e.g. preset:table3-occ");
    app->add_option("--objective", objective, "standard | occlusion")->check(CLI::IsMember({"standard", "occlusion"}));
    app->add_option("--train", train_path, "Training split (text, one sentence per line, or packed .bin)");
    app->add_option("--valid", valid_path, "Validation split");
    app->add_option("--vocab", vocab_path, "Vocabulary file");
    app->add_option("--out", out_dir, "Output directory");
    app->add_flag("--deterministic", deterministic, "Single-threaded bit-reproducible mode");
    auto over = [&](CLI::Option* o, std::function<void(RunConfig&)> f) { overrides.emplace_back(o, std::move(f)); };
    over(app->add_option("--lr", lr, "Base learning rate"), [this](RunConfig& c) { c.train.base_lr = lr; });
    over(app->add_option("--batch-size", batch_size), [this](RunConfig& c) { c.train.batch_size = batch_size; });
    over(app->add_option("--max-epochs", max_epochs), [this](RunConfig& c) { c.train.max_epochs = max_epochs; });
    over(app->add_option("--patience", patience), [this](RunConfig& c) { c.train.patience = patience; });
    over(app->add_option("--weight-decay", weight_decay), [this](RunConfig& c) { c.train.weight_decay = weight_decay; });
    over(app->add_option("--warmup-fraction", warmup), [this](RunConfig& c) { c.train.warmup_fraction = warmup; });
    over(app->add_option("--grad-clip", grad_clip), [this](RunConfig& c) { c.train.grad_clip = grad_clip; });
    over(app->add_option("--occlusion-loss-weight", occ_weight),
         [this](RunConfig& c) { c.train.occlusion_loss_weight = occ_weight; });
    over(app->add_option("--unfreeze-top-k", top_k), [this](RunConfig& c) { c.train.unfreeze_top_k = top_k; });
    over(app->add_option("--unfreeze-interval", interval),
         [this](RunConfig& c) { c.train.unfreeze_interval_epochs = interval; });
    occ_opt = app->add_option("--occlusion-prob", occlusion_prob, "Occlusion probability (occlusion objective)");
    over(occ_opt, [this](RunConfig& c) { c.train.occlusion_prob = occlusion_prob; });
    seed_opt = app->add_option("--seed", seed, "Seed (overrides OCCLM_SEED and config)");
    over(seed_opt, [this](RunConfig& c) { c.train.seed = seed; });
    dropout_opt = app->add_option("--dropout", dropout);
    over(dropout_opt, [this](RunConfig& c) { c.model.dropout = static_cast<float>(dropout); });
    if (model_flags) {
      over(app->add_option("--layers", layers), [this](RunConfig& c) { c.model.n_layers = layers; });
      over(app->add_option("--heads", heads), [this](RunConfig& c) { c.model.n_heads = heads; });
      over(app->add_option("--d-model", d_model), [this](RunConfig& c) { c.model.d_model = d_model; });
      over(app->add_option("--block-size", block_size), [this](RunConfig& c) { c.model.block_size = block_size; });
    }
  }

  /// flags > OCCLM_SEED > config file > preset > defaults.
  RunConfig resolve(RunConfig base) const {
    RunConfig c = std::move(base);
    json file;
    if (!config_path.empty()) {
      try {
        file = json::parse(read_file(config_path));
      } catch (const json::exception& e) {
        throw ConfigError("cannot parse config " + config_path + ": " + e.what());
      }
      if (!file.is_object()) throw ConfigError("config " + config_path + " must hold a JSON object");
    }
    std::string preset_to_use = preset_name;
    if (preset_to_use.empty() && file.contains("preset")) preset_to_use = file.at("preset").get<std::string>();
    if (!preset_to_use.empty()) c = preset(preset_to_use);
    if (!file.is_null()) merge_run_config(c, file);
    if (const char* env = std::getenv("OCCLM_SEED"); env != nullptr && *env != '\0') {
      try {
        c.train.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw ConfigError(std::string("OCCLM_SEED is not an unsigned integer: ") + env);
      }
    }
    for (const auto& [opt, apply] : overrides) {
      if (opt->count() > 0) apply(c);
    }
    if (!objective.empty()) c.objective = objective;
    if (c.objective == "standard" && occ_opt->count() == 0) c.train.occlusion_prob = 0.0;
    if (c.objective == "occlusion" && c.train.occlusion_prob == 0.0 && occ_opt->count() == 0) {
      c.train.occlusion_prob = kDefaultOcclusionProb;
    }
    return c;
  }
};

std::string make_run_id(const std::string& command, const RunConfig& c, const std::string& vocab_hash,
                        const json& data_hashes) {
  const json key = {{"command", command}, {"config", run_config_to_json(c)}, {"vocab", vocab_hash}, {"data", data_hashes}};
  return "run-" + hash_hex(key.dump());
}

// Shared by pretrain and finetune: packs data, trains, writes artifacts.
int run_training(const std::string& command, const TrainFlags& flags, RunConfig config, const Vocabulary& vocab,
                 std::optional<Checkpoint> pretrained, const std::vector<std::string>& args, std::ostream& out) {
  require_path(flags.train_path, "--train");
  require_path(flags.valid_path, "--valid");
  require_path(flags.out_dir, "--out");
  config.validate();

  const TokenDataset train = load_split(flags.train_path, vocab, config.model.block_size);
  const TokenDataset valid = load_split(flags.valid_path, vocab, config.model.block_size);
  const json data_hashes = {{"train", file_hash_hex(flags.train_path)}, {"valid", file_hash_hex(flags.valid_path)}};
  const std::string vocab_hash = vocab.hash();
  const std::string run_id = make_run_id(command, config, vocab_hash, data_hashes);

  const fs::path dir = flags.out_dir;
  fs::create_directories(dir);
  Manifest manifest(dir / "manifest.json", {{"run_id", run_id},
                                            {"command", command},
                                            {"command_line", join_args(args)},
                                            {"config", run_config_to_json(config)},
                                            {"vocab_hash", vocab_hash},
                                            {"data_hashes", data_hashes},
                                            {"seed", config.train.seed},
                                            {"deterministic", flags.deterministic}});
  write_file(dir / "config.json", run_config_to_json(config).dump(2) + "\n");

  // Fine-tuning keeps the pretrained architecture; only dropout may differ.
  GptModel model = pretrained ? GptModel(config.model, pretrained->model.params().clone())
                              : GptModel::init(config.model, derive_seed(config.train.seed, 0));

  fs::remove(dir / "metrics.jsonl");
  JsonlSink sink(dir / "metrics.jsonl");
  const json meta_base = {{"manifest", "manifest.json"}, {"objective", config.objective}, {"command", command}};
  std::optional<GptModel> best;
  FitOptions options;
  options.run_id = run_id;
  options.specials = vocab.specials();
  options.on_epoch_end = [&](const GptModel& m, const TrainState& state) {
    if (state.best_epoch == state.epoch) best = m.clone();
    json meta = meta_base;
    meta["epoch"] = state.epoch;
    save_checkpoint(dir / "last.bin", make_checkpoint(m, &state, vocab_hash, run_id, meta));
  };

  FitResult result = command == "finetune" ? finetune(model, train, valid, config.train, &sink, options)
                                           : fit(model, train, valid, config.train, &sink, options);
  sink.flush();
  json meta = meta_base;
  meta["best_epoch"] = result.state.best_epoch;
  meta["best_valid_loss"] = result.state.best_valid_loss;
  meta["epochs"] = result.state.epoch;
  meta["stop_reason"] = result.state.stop_reason;
  save_checkpoint(dir / "checkpoint.bin", make_checkpoint(result.best, nullptr, vocab_hash, run_id, meta));

  json summary = {{"run_id", run_id},
                  {"objective", config.objective},
                  {"occlusion_prob", config.train.occlusion_prob},
                  {"best_epoch", result.state.best_epoch},
                  {"best_valid_loss", result.state.best_valid_loss},
                  {"best_valid_perplexity", std::exp(result.state.best_valid_loss)},
                  {"epochs", result.state.epoch},
                  {"stop_reason", result.state.stop_reason}};
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  manifest.body()["result"] = summary;
  manifest.finish("ok");
  out << command << " " << run_id << ": best validation loss " << result.state.best_valid_loss << " (ppl "
      << std::exp(result.state.best_valid_loss) << ") at epoch " << result.state.best_epoch << ", stopped by "
      << result.state.stop_reason << "\n";
  return kExitOk;
}

GenerationConfig generation_from(const std::string& strategy, double temperature, std::size_t top_k,
                                 std::size_t max_new, std::uint64_t seed) {
  GenerationConfig g;
  g.strategy = parse_strategy(strategy);
  g.temperature = temperature;
  g.top_k = top_k;
  g.max_new_tokens = max_new;
  g.seed = seed;
  g.validate();
  return g;
}

const char* kComparisonScript = R"sh(#!/bin/sh
# Standard vs occlusion pretraining on the bundled demo corpus, five seeds.
# Set OCCLM to the occlm binary if it is not on PATH.
set -eu
OCCLM="${OCCLM:-occlm}"
HERE="$(cd "$(dirname "$0")" && pwd)"
WORK="$HERE/work"
mkdir -p "$WORK"

"$OCCLM" corpus clean --input "$HERE/corpus/general.txt" --out "$WORK/general.clean.txt"
"$OCCLM" corpus split --input "$WORK/general.clean.txt" --out-dir "$WORK/split" --seed 7
"$OCCLM" tokenizer train --input "$WORK/split/train.txt" --vocab-size 512 --out "$WORK/vocab.txt"
"$OCCLM" corpus stats --dir "$WORK/split" --vocab "$WORK/vocab.txt"

for seed in 1 2 3 4 5; do
  "$OCCLM" pretrain --config "$HERE/config/desk.json" --objective standard --seed "$seed" \
    --train "$WORK/split/train.txt" --valid "$WORK/split/valid.txt" --vocab "$WORK/vocab.txt" \
    --out "$WORK/standard-$seed" --deterministic
  for p in 0.1 0.3 0.5; do
    "$OCCLM" pretrain --config "$HERE/config/desk.json" --objective occlusion --occlusion-prob "$p" \
      --seed "$seed" --train "$WORK/split/train.txt" --valid "$WORK/split/valid.txt" \
      --vocab "$WORK/vocab.txt" --out "$WORK/occlusion-$p-$seed" --deterministic
  done
done

best() { sed -n 's/^ *"best_valid_loss": *\([^,]*\),*$/\1/p' "$1/summary.json"; }
printf '%-6s %-10s %-10s %-10s %-10s\n' seed standard occ-0.1 occ-0.3 occ-0.5
for seed in 1 2 3 4 5; do
  printf '%-6s %-10.4f %-10.4f %-10.4f %-10.4f\n' "$seed" "$(best "$WORK/standard-$seed")" \
    "$(best "$WORK/occlusion-0.1-$seed")" "$(best "$WORK/occlusion-0.3-$seed")" "$(best "$WORK/occlusion-0.5-$seed")"
done
)sh";

}  // namespace

void quickstart(const fs::path& out_dir, bool force, std::ostream& out) {
  const fs::path marker = out_dir / "config" / "desk.json";
  if (fs::exists(marker) && !force) {
    throw IoError("quickstart files already exist in " + out_dir.string() + "; pass --force to overwrite");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  write_lines(out_dir / "corpus" / "general.txt", demo_corpus(DemoStyle::kGeneral, 2700, 1));
  write_lines(out_dir / "corpus" / "news.txt", demo_corpus(DemoStyle::kNews, 800, 2));
  json desk = run_config_to_json(preset("desk"));
  write_file(out_dir / "config" / "desk.json", desk.dump(2) + "\n");
  const fs::path script = out_dir / "run_comparison.sh";
  write_file(script, kComparisonScript);
  fs::permissions(script, fs::perms::owner_exec | fs::perms::group_exec | fs::perms::others_exec,
                  fs::perm_options::add);
  out << "quickstart written to " << out_dir.string() << "\n"
      << "  corpus/general.txt, corpus/news.txt  synthetic demo corpus\n"
      << "  config/desk.json                     desk-scale configuration\n"
      << "  run_comparison.sh                    standard vs occlusion comparison\n";
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"occlm: causal and occlusion-based language model pretraining toolkit", "occlm"};
  app.set_version_flag("--version", kToolkitVersion);
  app.require_subcommand(1);
  std::function<int()> action;

  // tokenizer train
  auto* tok = app.add_subcommand("tokenizer", "Byte-level BPE tokenizer");
  tok->require_subcommand(1);
  auto* tok_train = tok->add_subcommand("train", "Train a vocabulary");
  std::vector<std::string> tok_inputs;
  std::size_t vocab_size = Vocabulary::kDefaultTargetSize;
  std::string tok_out;
  bool no_normalize = false;
  tok_train->add_option("--input", tok_inputs, "Text files, one sentence per line")->expected(1, -1);
  tok_train->add_option("--vocab-size", vocab_size, "Target vocabulary size");
  tok_train->add_option("--out", tok_out, "Vocabulary file to write");
  tok_train->add_flag("--no-normalize", no_normalize, "Skip lowercasing");
  tok_train->callback([&] {
    action = [&] {
      if (tok_inputs.empty()) throw ConfigError("missing required input --input <path>");
      require_path(tok_out, "--out");
      std::vector<std::string> lines;
      json hashes = json::array();
      for (const auto& p : tok_inputs) {
        for (auto& l : read_lines(p)) lines.push_back(no_normalize ? l : normalize(l));
        hashes.push_back(file_hash_hex(p));
      }
      Vocabulary vocab = train_bpe(lines, vocab_size);
      vocab.set_run_id("tok-" + hash_hex(json({{"inputs", hashes},
                                                {"vocab_size", vocab_size},
                                                {"normalize", !no_normalize}})
                                              .dump()));
      vocab.save(tok_out);
      out << "vocabulary of " << vocab.size() << " tokens (" << vocab.merges().size() << " merges) written to "
          << tok_out << "\n";
      return kExitOk;
    };
  });

  // corpus clean|split|stats|pack
  auto* corpus = app.add_subcommand("corpus", "Corpus preparation");
  corpus->require_subcommand(1);
  std::string c_input, c_out, c_out_dir, c_vocab, c_dir, c_json, c_test_file;
  CleaningConfig clean_cfg;
  bool keep_slashes = false, keep_special = false, keep_stops = false, no_split = false, keep_case = false;
  auto* c_clean = corpus->add_subcommand("clean", "Clean raw text");
  c_clean->add_option("--input", c_input);
  c_clean->add_option("--out", c_out);
  c_clean->add_flag("--keep-slashes", keep_slashes);
  c_clean->add_flag("--keep-special-chars", keep_special);
  c_clean->add_option("--allowed-symbols", clean_cfg.allowed_symbols, "Symbols kept by special-char removal");
  c_clean->add_flag("--keep-repeated-fullstops", keep_stops);
  c_clean->add_flag("--no-sentence-split", no_split);
  c_clean->add_flag("--keep-case", keep_case);
  c_clean->callback([&] {
    action = [&] {
      require_path(c_input, "--input");
      require_path(c_out, "--out");
      clean_cfg.strip_slashes = !keep_slashes;
      clean_cfg.strip_special_chars = !keep_special;
      clean_cfg.collapse_repeated_fullstops = !keep_stops;
      clean_cfg.sentence_split_on_fullstop = !no_split;
      clean_cfg.lowercase = !keep_case;
      if (!clean_cfg.any_enabled()) throw ConfigError("cleaning needs at least one rule enabled");
      const auto lines = read_lines(c_input);
      const auto cleaned = clean(lines, clean_cfg);
      write_lines(c_out, cleaned);
      out << lines.size() << " lines in, " << cleaned.size() << " sentences out\n";
      return kExitOk;
    };
  });

  SplitSpec split_spec;
  auto* c_split = corpus->add_subcommand("split", "Seeded train/valid/test partition");
  c_split->add_option("--input", c_input);
  c_split->add_option("--out-dir", c_out_dir);
  c_split->add_option("--train-frac", split_spec.train_frac);
  c_split->add_option("--valid-frac", split_spec.valid_frac);
  c_split->add_option("--test-frac", split_spec.test_frac);
  c_split->add_option("--seed", split_spec.seed);
  c_split->add_option("--test-file", c_test_file, "Take the test split from this disjoint file instead");
  c_split->callback([&] {
    action = [&] {
      require_path(c_input, "--input");
      require_path(c_out_dir, "--out-dir");
      const auto lines = read_lines(c_input);
      SplitResult r;
      if (!c_test_file.empty()) {
        const double tv = split_spec.train_frac + split_spec.valid_frac;
        if (!(tv > 0.0)) throw ConfigError("train_frac + valid_frac must be positive");
        SplitSpec s{split_spec.train_frac / tv, split_spec.valid_frac / tv, 0.0, split_spec.seed};
        r = split(lines, s);
        r.test = read_lines(c_test_file);
      } else {
        r = split(lines, split_spec);
      }
      const fs::path d = c_out_dir;
      write_lines(d / "train.txt", r.train);
      write_lines(d / "valid.txt", r.valid);
      write_lines(d / "test.txt", r.test);
      out << "train " << r.train.size() << ", valid " << r.valid.size() << ", test " << r.test.size() << "\n";
      return kExitOk;
    };
  });

  std::vector<std::string> stat_splits;
  auto* c_stats = corpus->add_subcommand("stats", "Sentence/token/unique-token counts per split");
  c_stats->add_option("--split", stat_splits, "name=path, repeatable");
  c_stats->add_option("--dir", c_dir, "Directory holding train.txt, valid.txt, test.txt");
  c_stats->add_option("--vocab", c_vocab, "Count BPE tokens instead of whitespace words");
  c_stats->add_option("--json", c_json, "Also write the report as JSON");
  c_stats->callback([&] {
    action = [&] {
      std::vector<std::pair<std::string, fs::path>> named;
      for (const auto& s : stat_splits) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--split expects name=path, got '" + s + "'");
        named.emplace_back(s.substr(0, eq), s.substr(eq + 1));
      }
      if (!c_dir.empty()) {
        for (const char* n : {"train", "valid", "test"}) {
          const fs::path p = fs::path(c_dir) / (std::string(n) + ".txt");
          if (fs::exists(p)) named.emplace_back(n, p);
        }
      }
      if (named.empty()) throw ConfigError("missing required input --split name=path or --dir <path>");
      std::vector<std::vector<std::string>> storage;
      for (const auto& [n, p] : named) storage.push_back(read_lines(p));
      std::vector<NamedSplit> splits;
      for (std::size_t i = 0; i < named.size(); ++i) splits.push_back({named[i].first, storage[i]});
      const CorpusStats st =
          c_vocab.empty() ? stats(splits, whitespace_tokenizer()) : stats(splits, Vocabulary::load(c_vocab));
      out << st.table();
      if (!c_json.empty()) write_file(c_json, st.to_json().dump(2) + "\n");
      return kExitOk;
    };
  });

  std::size_t pack_block = 128;
  auto* c_pack = corpus->add_subcommand("pack", "Tokenize and pack into fixed-length windows");
  c_pack->add_option("--input", c_input);
  c_pack->add_option("--vocab", c_vocab);
  c_pack->add_option("--block-size", pack_block);
  c_pack->add_option("--out", c_out);
  c_pack->callback([&] {
    action = [&] {
      require_path(c_input, "--input");
      require_path(c_vocab, "--vocab");
      require_path(c_out, "--out");
      const TokenDataset d = pack(read_lines(c_input), Vocabulary::load(c_vocab), pack_block);
      d.save(c_out);
      out << d.num_windows() << " windows, " << d.num_target_tokens() << " target tokens\n";
      return kExitOk;
    };
  });

  // pretrain
  TrainFlags pre_flags;
  auto* pre = app.add_subcommand("pretrain", "Pretrain a model (standard or occlusion objective)");
  pre_flags.add(pre, true);
  pre->callback([&] {
    action = [&] {
      RunConfig config = pre_flags.resolve(RunConfig{});
      require_path(pre_flags.train_path, "--train");
      require_path(pre_flags.vocab_path, "--vocab");
      const Vocabulary vocab = Vocabulary::load(pre_flags.vocab_path);
      config.model.vocab_size = vocab.size();
      return run_training("pretrain", pre_flags, config, vocab, std::nullopt, args, out);
    };
  });

  // finetune
  TrainFlags ft_flags;
  std::string ft_checkpoint;
  auto* ft = app.add_subcommand("finetune", "Fine-tune a checkpoint with gradual unfreezing");
  ft_flags.add(ft, false);
  ft->add_option("--checkpoint", ft_checkpoint, "Pretrained checkpoint");
  ft->callback([&] {
    action = [&] {
      RunConfig base;
      base.train.max_epochs = 50;
      RunConfig config = ft_flags.resolve(base);
      require_path(ft_checkpoint, "--checkpoint");
      require_path(ft_flags.train_path, "--train");
      require_path(ft_flags.vocab_path, "--vocab");
      const Vocabulary vocab = Vocabulary::load(ft_flags.vocab_path);
      Checkpoint ckpt = load_checkpoint(ft_checkpoint);
      require_compatible(ckpt, ckpt.model.config(), vocab.hash());
      const float dropout = config.model.dropout;
      config.model = ckpt.model.config();
      if (ft_flags.dropout_opt->count() > 0) config.model.dropout = dropout;
      return run_training("finetune", ft_flags, config, vocab, std::move(ckpt), args, out);
    };
  });

  // eval
  std::string ev_ckpt, ev_vocab, ev_split, ev_split_name = "validation", ev_out, ev_transcript, ev_bleu_input;
  bool ev_bleu = false;
  double ev_prompt_frac = 0.25, ev_temperature = 1.0;
  std::string ev_strategy = "greedy";
  std::size_t ev_top_k = 40, ev_batch = 16;
  std::uint64_t ev_seed = 0;
  auto* ev = app.add_subcommand("eval", "Perplexity and BLEU evaluation of a checkpoint");
  ev->add_option("--checkpoint", ev_ckpt);
  ev->add_option("--vocab", ev_vocab);
  ev->add_option("--split", ev_split, "Split to evaluate (text or packed .bin)");
  ev->add_option("--split-name", ev_split_name);
  ev->add_flag("--bleu", ev_bleu, "Also run the prompted-generation BLEU protocol");
  ev->add_option("--bleu-input", ev_bleu_input, "Sentences for BLEU (defaults to the text split)");
  ev->add_option("--prompt-frac", ev_prompt_frac);
  ev->add_option("--strategy", ev_strategy)->check(CLI::IsMember({"greedy", "sample", "topk"}));
  ev->add_option("--temperature", ev_temperature);
  ev->add_option("--top-k", ev_top_k);
  ev->add_option("--seed", ev_seed);
  ev->add_option("--batch-size", ev_batch);
  ev->add_option("--out", ev_out, "Report path (default: next to the checkpoint)");
  ev->add_option("--transcript", ev_transcript, "Write REF/GEN pairs here");
  ev->callback([&] {
    action = [&] {
      require_path(ev_ckpt, "--checkpoint");
      require_path(ev_vocab, "--vocab");
      require_path(ev_split, "--split");
      const Vocabulary vocab = Vocabulary::load(ev_vocab);
      const Checkpoint ckpt = load_checkpoint(ev_ckpt);
      if (ckpt.vocab_hash != vocab.hash()) {
        throw CheckpointError("checkpoint " + ev_ckpt + " was trained with vocabulary " + ckpt.vocab_hash +
                              ", not " + vocab.hash() + " (" + ev_vocab + ")");
      }
      const TokenDataset data = load_split(ev_split, vocab, ckpt.model.config().block_size);
      EvalOptions opts;
      opts.split_name = ev_split_name;
      opts.batch_size = ev_batch;
      opts.prompt_frac = ev_prompt_frac;
      std::vector<std::string> sentences;
      if (ev_bleu) {
        const std::string src = !ev_bleu_input.empty() ? ev_bleu_input : ev_split;
        if (fs::path(src).extension() == ".bin") throw ConfigError("--bleu with a packed split needs --bleu-input");
        sentences = read_lines(src);
        opts.generation = generation_from(ev_strategy, ev_temperature, ev_top_k, 0, ev_seed);
        opts.bleu_sentences = sentences;
      }
      const EvalOutput result = evaluate(ckpt, file_hash_hex(ev_ckpt), vocab, data, opts);
      const std::string text = result.report.to_json().dump(2) + "\n";
      const fs::path report_path =
          ev_out.empty() ? fs::path(ev_ckpt).parent_path() / ("eval_" + ev_split_name + ".json") : fs::path(ev_out);
      write_file(report_path, text);
      if (!ev_transcript.empty() && result.protocol) write_file(ev_transcript, result.protocol->transcript_text());
      out << text;
      return kExitOk;
    };
  });

  // generate
  std::string gen_ckpt, gen_vocab, gen_prompt, gen_strategy = "greedy";
  std::size_t gen_max = 32, gen_top_k = 40;
  double gen_temperature = 1.0;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("generate", "Continue a prompt");
  gen->add_option("--checkpoint", gen_ckpt);
  gen->add_option("--vocab", gen_vocab);
  gen->add_option("--prompt", gen_prompt);
  gen->add_option("--max-new-tokens", gen_max);
  gen->add_option("--strategy", gen_strategy)->check(CLI::IsMember({"greedy", "sample", "topk"}));
  gen->add_option("--temperature", gen_temperature);
  gen->add_option("--top-k", gen_top_k);
  gen->add_option("--seed", gen_seed);
  gen->callback([&] {
    action = [&] {
      require_path(gen_ckpt, "--checkpoint");
      require_path(gen_vocab, "--vocab");
      if (gen_prompt.empty()) throw ConfigError("missing required input --prompt <text>");
      const Vocabulary vocab = Vocabulary::load(gen_vocab);
      const Checkpoint ckpt = load_checkpoint(gen_ckpt);
      require_compatible(ckpt, ckpt.model.config(), vocab.hash());
      const auto prompt = vocab.encode(normalize(gen_prompt));
      const auto ids = generate(ckpt.model, prompt, generation_from(gen_strategy, gen_temperature, gen_top_k, gen_max, gen_seed),
                                vocab.specials().eot);
      out << normalize(gen_prompt) << vocab.decode(ids, true) << "\n";
      return kExitOk;
    };
  });

  // sweep
  std::string sw_spec, sw_data, sw_out, sw_vocab;
  std::size_t sw_parallel = 1;
  bool sw_deterministic = false;
  auto* sw = app.add_subcommand("sweep", "Random hyperparameter search");
  sw->add_option("--spec", sw_spec, "Sweep spec JSON");
  sw->add_option("--data", sw_data, "Directory with train.txt and valid.txt (or .bin)");
  sw->add_option("--out", sw_out, "Sweep root directory");
  sw->add_option("--vocab", sw_vocab);
  sw->add_option("--parallel", sw_parallel, "Worker threads");
  sw->add_flag("--deterministic", sw_deterministic, "Force sequential trials");
  sw->callback([&] {
    action = [&] {
      require_path(sw_spec, "--spec");
      require_path(sw_data, "--data");
      require_path(sw_out, "--out");
      require_path(sw_vocab, "--vocab");
      json spec_json;
      try {
        spec_json = json::parse(read_file(sw_spec));
      } catch (const json::exception& e) {
        throw ConfigError("cannot parse sweep spec " + sw_spec + ": " + e.what());
      }
      SweepSpec spec = SweepSpec::from_json(spec_json);
      if (const char* env = std::getenv("OCCLM_SEED"); env != nullptr && *env != '\0') spec.seed = std::stoull(env);
      const Vocabulary vocab = Vocabulary::load(sw_vocab);
      spec.base_model.vocab_size = vocab.size();
      auto find = [&](const char* stem) {
        for (const char* ext : {".bin", ".txt"}) {
          const fs::path p = fs::path(sw_data) / (std::string(stem) + ext);
          if (fs::exists(p)) return p;
        }
        throw IoError("no " + std::string(stem) + ".txt or " + stem + ".bin in " + sw_data);
      };
      const fs::path train_path = find("train");
      const fs::path valid_path = find("valid");
      const TokenDataset train = load_split(train_path, vocab, spec.base_model.block_size);
      const TokenDataset valid = load_split(valid_path, vocab, spec.base_model.block_size);
      SweepOptions so;
      so.out_dir = sw_out;
      so.vocab_hash = vocab.hash();
      so.specials = vocab.specials();
      so.parallel = sw_deterministic ? 1 : sw_parallel;
      so.run_id = "sweep-" + hash_hex(json({{"spec", spec.to_json()},
                                            {"vocab", so.vocab_hash},
                                            {"train", file_hash_hex(train_path)},
                                            {"valid", file_hash_hex(valid_path)}})
                                         .dump());
      Manifest manifest(fs::path(sw_out) / so.run_id / "manifest.json",
                        {{"run_id", so.run_id},
                         {"command", "sweep"},
                         {"command_line", join_args(args)},
                         {"config", spec.to_json()},
                         {"vocab_hash", so.vocab_hash},
                         {"data_hashes", {{"train", file_hash_hex(train_path)}, {"valid", file_hash_hex(valid_path)}}},
                         {"seed", spec.seed},
                         {"deterministic", sw_deterministic}});
      const SweepResult result = run_sweep(spec, train, valid, nullptr, so);
      manifest.body()["best_trial"] = result.best.trial_id;
      manifest.finish("ok");
      out << "trial  best_valid_loss  stop_reason\n";
      for (const auto& r : result.leaderboard) {
        out << std::setw(5) << r.trial_id << "  " << std::setw(15) << r.best_valid_loss << "  " << r.stop_reason
            << "\n";
      }
      if (result.resumed > 0) out << result.resumed << " trial(s) reused from an earlier run\n";
      return kExitOk;
    };
  });

  // quickstart
  std::string qs_out;
  bool qs_force = false;
  auto* qs = app.add_subcommand("quickstart", "Write the demo corpus, desk config and comparison script");
  qs->add_option("--out", qs_out, "Target directory");
  qs->add_flag("--force", qs_force, "Overwrite existing quickstart files");
  qs->callback([&] {
    action = [&] {
      require_path(qs_out, "--out");
      quickstart(qs_out, qs_force, out);
      return kExitOk;
    };
  });

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (!action) {
    err << app.help();
    return kExitUsage;
  }
  try {
    return action();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace occlm::cli
