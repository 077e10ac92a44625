// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "occlm/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "occlm/errors.hpp"
#include "occlm/hash.hpp"

namespace occlm {
namespace {

constexpr char kMagic[8] = {'O', 'C', 'C', 'L', 'M', 'C', 'K', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw CheckpointError("checkpoint truncated");
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

nlohmann::json tensor_table(const std::vector<NamedTensor>& tensors) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& e : tensors) table.push_back({{"name", e.name}, {"shape", e.tensor.shape()}});
  return table;
}

std::vector<NamedTensor> read_tensors(const nlohmann::json& table, std::string_view bytes, std::size_t& pos,
                                      bool requires_grad) {
  std::vector<NamedTensor> out;
  for (const auto& entry : table) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    const std::size_t n = numel(shape);
    if (pos + n * sizeof(float) > bytes.size()) throw CheckpointError("checkpoint truncated in tensor " + name);
    std::vector<float> values(n);
    std::memcpy(values.data(), bytes.data() + pos, n * sizeof(float));
    pos += n * sizeof(float);
    out.push_back({name, Tensor::from(shape, std::move(values), requires_grad)});
  }
  return out;
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"block_size", c.block_size},
          {"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"dropout", c.dropout},
          {"ffn_mult", c.ffn_mult},
          {"tie_embeddings", c.tie_embeddings},
          {"activation", c.activation == Activation::kGelu ? "gelu" : "relu"}};
}

void merge_model_config(ModelConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "vocab_size") {
        c.vocab_size = value.get<std::size_t>();
      } else if (key == "block_size") {
        c.block_size = value.get<std::size_t>();
      } else if (key == "d_model") {
        c.d_model = value.get<std::size_t>();
      } else if (key == "n_layers") {
        c.n_layers = value.get<std::size_t>();
      } else if (key == "n_heads") {
        c.n_heads = value.get<std::size_t>();
      } else if (key == "dropout") {
        c.dropout = value.get<float>();
      } else if (key == "ffn_mult") {
        c.ffn_mult = value.get<std::size_t>();
      } else if (key == "tie_embeddings") {
        c.tie_embeddings = value.get<bool>();
      } else if (key == "activation") {
        const auto name = value.get<std::string>();
        if (name == "gelu") {
          c.activation = Activation::kGelu;
        } else if (name == "relu") {
          c.activation = Activation::kRelu;
        } else {
          throw ConfigError("unknown activation '" + name + "' (expected gelu or relu)");
        }
      } else {
        throw ConfigError("unknown model config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header = {{"format_version", kCheckpointFormatVersion},
                           {"config", model_config_to_json(ckpt.model.config())},
                           {"vocab_hash", ckpt.vocab_hash},
                           {"run_id", ckpt.run_id},
                           {"metadata", ckpt.metadata},
                           {"tensors", tensor_table(ckpt.model.params().entries())},
                           {"extra_tensors", tensor_table(ckpt.extra_tensors)},
                           {"state", ckpt.state}};
  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointFormatVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  auto blobs = [&out](const std::vector<NamedTensor>& tensors) {
    for (const auto& e : tensors) {
      const auto data = e.tensor.data();
      out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
    }
  };
  blobs(ckpt.model.params().entries());
  blobs(ckpt.extra_tensors);
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not an occlm checkpoint (bad magic)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointFormatVersion) {
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(version));
  }
  const auto header_len = take<std::uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw CheckpointError("checkpoint truncated in header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  pos += header_len;

  Checkpoint ckpt;
  try {
    ModelConfig config;
    merge_model_config(config, header.at("config"));
    ParameterSet params;
    for (auto& e : read_tensors(header.at("tensors"), bytes, pos, true)) params.add(e.name, e.tensor);
    ckpt.model = GptModel(config, std::move(params));
    ckpt.extra_tensors = read_tensors(header.at("extra_tensors"), bytes, pos, false);
    ckpt.vocab_hash = header.at("vocab_hash").get<std::string>();
    ckpt.run_id = header.at("run_id").get<std::string>();
    ckpt.metadata = header.at("metadata");
    ckpt.state = header.at("state");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint carries an invalid config: ") + e.what());
  }
  if (pos != bytes.size()) throw CheckpointError("trailing bytes after checkpoint tensors");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

void require_compatible(const Checkpoint& ckpt, const ModelConfig& expected_config,
                        std::string_view expected_vocab_hash) {
  if (!(ckpt.model.config() == expected_config)) {
    throw CheckpointError("checkpoint config " + model_config_to_json(ckpt.model.config()).dump() +
                          " does not match expected " + model_config_to_json(expected_config).dump());
  }
  if (ckpt.vocab_hash != expected_vocab_hash) {
    throw CheckpointError("checkpoint vocab hash " + ckpt.vocab_hash + " does not match vocabulary hash " +
                          std::string(expected_vocab_hash));
  }
}

}  // namespace occlm
