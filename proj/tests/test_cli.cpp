// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "json.hpp"
#include "occlm/checkpoint.hpp"
#include "occlm/cli.hpp"
#include "occlm/config_io.hpp"
#include "occlm/corpus.hpp"
#include "occlm/demo_corpus.hpp"
#include "occlm/eval.hpp"
#include "support.hpp"

namespace occlm {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "occlm");
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    ::setenv(name, value, 1);
  }
  ~ScopedEnv() {
    if (old_) {
      ::setenv(name_, old_->c_str(), 1);
    } else {
      ::unsetenv(name_);
    }
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

// Cleaned, split demo text and a trained vocabulary in `dir`.
void prepare_data(const fs::path& dir, std::size_t lines = 300) {
  write_lines(dir / "raw.txt", demo_corpus(DemoStyle::kGeneral, lines, 3));
  ASSERT_EQ(run({"corpus", "clean", "--input", (dir / "raw.txt").string(), "--out", (dir / "clean.txt").string()}).code,
            0);
  ASSERT_EQ(run({"corpus", "split", "--input", (dir / "clean.txt").string(), "--out-dir", (dir / "split").string(),
                 "--seed", "7"})
                .code,
            0);
  ASSERT_EQ(run({"tokenizer", "train", "--input", (dir / "split" / "train.txt").string(), "--vocab-size", "320",
                 "--out", (dir / "vocab.txt").string()})
                .code,
            0);
}

std::vector<std::string> tiny_pretrain(const fs::path& dir, const fs::path& out) {
  return {"pretrain",   "--preset",        "desk",
          "--train",    (dir / "split" / "train.txt").string(),
          "--valid",    (dir / "split" / "valid.txt").string(),
          "--vocab",    (dir / "vocab.txt").string(),
          "--out",      out.string(),
          "--layers",   "1",
          "--d-model",  "32",
          "--block-size", "32",
          "--max-epochs", "2"};
}

TEST(Cli, HelpExitsZero) {
  const Outcome o = run({"--help"});
  EXPECT_EQ(o.code, cli::kExitOk);
  EXPECT_NE(o.out.find("pretrain"), std::string::npos);
  for (const char* sub : {"tokenizer", "corpus", "pretrain", "finetune", "eval", "sweep", "generate"}) {
    EXPECT_NE(o.out.find(sub), std::string::npos) << sub;
    EXPECT_EQ(run({sub, "--help"}).code, cli::kExitOk) << sub;
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"pretrain", "--no-such-flag"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"pretrain", "--objective", "sideways"}).code, cli::kExitUsage);
  EXPECT_EQ(run({}).code, cli::kExitUsage);
}

TEST(Cli, MissingInputsExitOneNamingTheInput) {
  const Outcome o = run({"pretrain"});
  EXPECT_EQ(o.code, cli::kExitError);
  EXPECT_NE(o.err.find("--train"), std::string::npos) << o.err;

  testing::TempDir dir("cli-missing");
  const Outcome nofile = run({"pretrain", "--train", (dir / "nope.txt").string(), "--valid",
                              (dir / "nope.txt").string(), "--vocab", (dir / "vocab.txt").string(), "--out",
                              (dir / "o").string()});
  EXPECT_EQ(nofile.code, cli::kExitError);
  EXPECT_NE(nofile.err.find("vocab.txt"), std::string::npos) << nofile.err;
}

TEST(Cli, ValidationFailureNamesTheInvariant) {
  testing::TempDir dir("cli-invalid");
  prepare_data(dir.path(), 60);
  std::vector<std::string> args = tiny_pretrain(dir.path(), dir / "out");
  args.insert(args.end(), {"--heads", "3"});
  const Outcome o = run(args);
  EXPECT_EQ(o.code, cli::kExitError);
  EXPECT_NE(o.err.find("n_heads"), std::string::npos) << o.err;
}

TEST(Cli, EndToEndSmokeUnderOneMinute) {
  const auto start = std::chrono::steady_clock::now();
  testing::TempDir dir("cli-smoke");
  prepare_data(dir.path());
  const Outcome stats = run({"corpus", "stats", "--dir", (dir / "split").string()});
  EXPECT_EQ(stats.code, 0) << stats.err;
  EXPECT_NE(stats.out.find("#Unique tokens"), std::string::npos);

  const Outcome pre = run(tiny_pretrain(dir.path(), dir / "run"));
  ASSERT_EQ(pre.code, 0) << pre.err;
  for (const char* f : {"manifest.json", "config.json", "metrics.jsonl", "checkpoint.bin", "last.bin", "summary.json"}) {
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  }
  const json manifest = read_json(dir / "run" / "manifest.json");
  EXPECT_EQ(manifest.at("status"), "ok");
  EXPECT_FALSE(manifest.at("finished_at").is_null());

  const Outcome ev = run({"eval", "--checkpoint", (dir / "run" / "checkpoint.bin").string(), "--vocab",
                          (dir / "vocab.txt").string(), "--split", (dir / "split" / "valid.txt").string(), "--bleu",
                          "--out", (dir / "report.json").string(), "--transcript",
                          (dir / "pairs.txt").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const EvalReport report = EvalReport::from_json(read_json(dir / "report.json"));
  EXPECT_TRUE(std::isfinite(report.mean_loss));
  EXPECT_EQ(report.perplexity, std::exp(report.mean_loss));
  EXPECT_EQ(report.split, "validation");
  EXPECT_EQ(report.run_id, manifest.at("run_id").get<std::string>());
  ASSERT_TRUE(report.bleu.has_value());
  EXPECT_EQ(read_bytes(dir / "pairs.txt").rfind("REF:\t", 0), 0u);

  const Outcome gen = run({"generate", "--checkpoint", (dir / "run" / "checkpoint.bin").string(), "--vocab",
                           (dir / "vocab.txt").string(), "--prompt", "the", "--max-new-tokens", "5"});
  EXPECT_EQ(gen.code, 0) << gen.err;

  const Outcome ft = run({"finetune", "--checkpoint", (dir / "run" / "checkpoint.bin").string(), "--train",
                          (dir / "split" / "train.txt").string(), "--valid", (dir / "split" / "valid.txt").string(),
                          "--vocab", (dir / "vocab.txt").string(), "--out", (dir / "ft").string(), "--max-epochs",
                          "1"});
  EXPECT_EQ(ft.code, 0) << ft.err;
  EXPECT_TRUE(fs::exists(dir / "ft" / "checkpoint.bin"));

  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(seconds, 60.0);
}

TEST(Cli, EvalRejectsCheckpointFromAnotherVocabulary) {
  testing::TempDir dir("cli-mixed");
  prepare_data(dir.path(), 120);
  ASSERT_EQ(run(tiny_pretrain(dir.path(), dir / "run")).code, 0);
  ASSERT_EQ(run({"tokenizer", "train", "--input", (dir / "split" / "train.txt").string(), "--vocab-size", "300",
                 "--out", (dir / "other_vocab.txt").string()})
                .code,
            0);
  const Outcome o = run({"eval", "--checkpoint", (dir / "run" / "checkpoint.bin").string(), "--vocab",
                         (dir / "other_vocab.txt").string(), "--split", (dir / "split" / "valid.txt").string()});
  EXPECT_EQ(o.code, cli::kExitError);
  EXPECT_NE(o.err.find("vocabulary"), std::string::npos) << o.err;
}

TEST(Cli, SettingPrecedence) {
  testing::TempDir dir("cli-precedence");
  prepare_data(dir.path(), 60);
  {
    std::ofstream cfg(dir / "cfg.json");
    cfg << R"({"preset": "desk", "model": {"n_layers": 1, "d_model": 32, "block_size": 32},
               "train": {"max_epochs": 1, "seed": 5, "base_lr": 0.004}})";
  }
  auto resolved = [&](std::vector<std::string> extra, const std::string& tag) {
    std::vector<std::string> args{"pretrain",
                                  "--config",
                                  (dir / "cfg.json").string(),
                                  "--train",
                                  (dir / "split" / "train.txt").string(),
                                  "--valid",
                                  (dir / "split" / "valid.txt").string(),
                                  "--vocab",
                                  (dir / "vocab.txt").string(),
                                  "--out",
                                  (dir / tag).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    const Outcome o = run(args);
    EXPECT_EQ(o.code, 0) << o.err;
    return read_json(dir / tag / "config.json");
  };
  // Config file over preset: the desk preset's lr 2e-3 and 2 layers are replaced.
  json c = resolved({}, "a");
  EXPECT_EQ(c["train"]["base_lr"], 0.004);
  EXPECT_EQ(c["model"]["n_layers"], 1);
  EXPECT_EQ(c["model"]["n_heads"], 2);  // from the preset
  EXPECT_EQ(c["train"]["seed"], 5);
  {
    const ScopedEnv env("OCCLM_SEED", "17");
    c = resolved({}, "b");
    EXPECT_EQ(c["train"]["seed"], 17);  // environment over config file
    c = resolved({"--seed", "23", "--lr", "0.001"}, "c");
    EXPECT_EQ(c["train"]["seed"], 23);  // flag over environment
    EXPECT_EQ(c["train"]["base_lr"], 0.001);
  }
  c = resolved({"--objective", "occlusion"}, "d");
  EXPECT_EQ(c["objective"], "occlusion");
  EXPECT_EQ(c["train"]["occlusion_prob"], kDefaultOcclusionProb);
}

TEST(Cli, PresetsCarryPublishedOptima) {
  const RunConfig occ = preset("preset:table3-occ");
  const RunConfig std_ = preset("table3-std");
  for (const RunConfig* c : {&occ, &std_}) {
    EXPECT_EQ(c->train.batch_size, 512u);
    EXPECT_EQ(c->train.base_lr, 2e-4);
    EXPECT_FLOAT_EQ(c->model.dropout, 0.3f);
    EXPECT_EQ(c->model.vocab_size, 50225u);
    EXPECT_EQ(c->train.weight_decay, 1e-2);
    EXPECT_EQ(c->train.max_epochs, 100u);
    EXPECT_EQ(c->train.patience, 5u);
  }
  EXPECT_EQ(occ.model.n_layers, 6u);
  EXPECT_EQ(occ.model.n_heads, 4u);
  EXPECT_EQ(occ.train.occlusion_prob, 0.3);
  EXPECT_EQ(occ.objective, "occlusion");
  EXPECT_EQ(std_.model.n_layers, 8u);
  EXPECT_EQ(std_.model.n_heads, 8u);
  EXPECT_EQ(std_.train.occlusion_prob, 0.0);
  EXPECT_EQ(std_.objective, "standard");
  EXPECT_THROW(preset("table9"), ConfigError);
  for (const auto& name : preset_names()) EXPECT_NO_THROW(preset(name).validate()) << name;
}

TEST(Cli, RunConfigJsonRoundTrip) {
  for (const auto& name : preset_names()) {
    const RunConfig c = preset(name);
    RunConfig back;
    merge_run_config(back, json::parse(run_config_to_json(c).dump()));
    EXPECT_EQ(back, c) << name;
  }
  RunConfig c;
  EXPECT_THROW(merge_run_config(c, json{{"modle", json::object()}}), ConfigError);
}

TEST(Cli, QuickstartRefusesToOverwriteWithoutForce) {
  testing::TempDir dir("cli-quickstart");
  const fs::path out = dir / "qs";
  EXPECT_EQ(run({"quickstart", "--out", out.string()}).code, 0);
  EXPECT_TRUE(fs::exists(out / "corpus" / "general.txt"));
  EXPECT_TRUE(fs::exists(out / "config" / "desk.json"));
  const RunConfig desk = [&] {
    RunConfig c;
    merge_run_config(c, read_json(out / "config" / "desk.json"));
    return c;
  }();
  EXPECT_EQ(desk.model.d_model, 64u);
  EXPECT_EQ(desk.model.n_layers, 2u);
  EXPECT_EQ(desk.model.n_heads, 2u);
  EXPECT_EQ(desk.model.block_size, 64u);

  const Outcome again = run({"quickstart", "--out", out.string()});
  EXPECT_EQ(again.code, cli::kExitError);
  EXPECT_NE(again.err.find("--force"), std::string::npos) << again.err;
  EXPECT_EQ(run({"quickstart", "--out", out.string(), "--force"}).code, 0);
}

}  // namespace
}  // namespace occlm
