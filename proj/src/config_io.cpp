// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "occlm/config_io.hpp"

#include "occlm/checkpoint.hpp"
#include "occlm/errors.hpp"

namespace occlm {

void RunConfig::validate() const {
  if (objective != "standard" && objective != "occlusion") {
    throw ConfigError("objective must be 'standard' or 'occlusion', got '" + objective + "'");
  }
  model.validate();
  train.validate();
  if (objective == "standard" && train.occlusion_prob != 0.0) {
    throw ConfigError("standard objective requires occlusion_prob == 0");
  }
  if (objective == "occlusion" && train.occlusion_prob <= 0.0) {
    throw ConfigError("occlusion objective requires occlusion_prob > 0");
  }
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"objective", c.objective}, {"model", model_config_to_json(c.model)}, {"train", train_config_to_json(c.train)}};
}

void merge_run_config(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "objective") {
      if (!value.is_string()) throw ConfigError("objective must be a string");
      c.objective = value.get<std::string>();
    } else if (key == "model") {
      merge_model_config(c.model, value);
    } else if (key == "train") {
      merge_train_config(c.train, value);
    } else if (key == "preset") {
      // Handled by the caller before layering.
    } else {
      throw ConfigError("unknown config key '" + key + "' (expected objective, model, train)");
    }
  }
}

std::vector<std::string> preset_names() { return {"table3-occ", "table3-std", "sweep-start", "desk", "desk-occ"}; }

RunConfig preset(std::string_view name) {
  if (name.rfind("preset:", 0) == 0) name.remove_prefix(7);
  RunConfig c;
  // Shared optimum settings for both objectives.
  c.model.vocab_size = 50225;
  c.model.dropout = 0.3f;
  c.train.batch_size = 512;
  c.train.base_lr = 2e-4;
  c.train.weight_decay = 1e-2;
  c.train.max_epochs = 100;
  c.train.patience = 5;
  if (name == "table3-occ") {
    c.objective = "occlusion";
    c.model.n_layers = 6;
    c.model.n_heads = 4;
    c.train.occlusion_prob = 0.3;
  } else if (name == "table3-std") {
    c.objective = "standard";
    c.model.n_layers = 8;
    c.model.n_heads = 8;
    c.train.occlusion_prob = 0.0;
  } else if (name == "sweep-start") {
    c.objective = "standard";
    c.model.n_layers = 8;
    c.model.n_heads = 8;
    c.train.base_lr = 1e-4;
  } else if (name == "desk" || name == "desk-occ") {
    c.objective = name == "desk" ? "standard" : "occlusion";
    c.model.vocab_size = 512;
    c.model.block_size = 64;
    c.model.d_model = 64;
    c.model.n_layers = 2;
    c.model.n_heads = 2;
    c.model.dropout = 0.1f;
    c.train.batch_size = 16;
    c.train.base_lr = 2e-3;
    c.train.max_epochs = 8;
    c.train.occlusion_prob = name == "desk" ? 0.0 : kDefaultOcclusionProb;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
  }
  return c;
}

}  // namespace occlm
