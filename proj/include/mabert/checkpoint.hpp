#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mabert/model.hpp"
#include "mabert/track_io.hpp"

namespace mabert {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// Checkpoint file: magic "MBCK", u32 version (1), u64 manifest length,
// manifest JSON, then the weights blob: 32-bit little-endian floats,
// row-major, in manifest registry order.
constexpr char kCkptMagic[4] = {'M', 'B', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

struct Provenance {
  std::string command;      // subcommand that produced the checkpoint
  std::string parent_hash;  // fnv1a64 hex of the parent checkpoint file, or "none"
  std::map<std::string, std::string> config;  // resolved run configuration
};

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string file_hash(const std::string& path) {
  return hash_hex(fnv1a64(read_file(path)));
}

namespace detail {

inline nlohmann::json config_json(const ModelConfig& c) {
  return {{"variant", variant_name(c.variant)},
          {"d", c.d},
          {"d_ff", c.d_ff},
          {"n_layers", c.n_layers},
          {"h", c.h},
          {"F", c.F},
          {"T_max", c.T_max},
          {"dropout_pretrain", c.dropout_pretrain},
          {"dropout_finetune", c.dropout_finetune}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = variant_from(j.at("variant").get<std::string>());
  c.d = j.at("d").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.h = j.at("h").get<std::size_t>();
  c.F = j.at("F").get<std::size_t>();
  c.T_max = j.at("T_max").get<std::size_t>();
  c.dropout_pretrain = j.at("dropout_pretrain").get<double>();
  c.dropout_finetune = j.at("dropout_finetune").get<double>();
  return c;
}

}  // namespace detail

inline std::string encode_checkpoint(Model& model, const Provenance& prov) {
  const auto registry = model.registry();

  std::string payload;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, p] : registry) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = p->value.shape();
    entry["offset"] = payload.size();
    params.push_back(entry);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const float f = static_cast<float>(p->value[i]);
      char buf[4];
      std::memcpy(buf, &f, 4);
      payload.append(buf, 4);
    }
  }

  nlohmann::json manifest;
  manifest["format_version"] = kCkptVersion;
  manifest["model"] = detail::config_json(model.cfg);
  manifest["decoder"] = {{"present", model.decoder.has_value()},
                         {"O", model.decoder ? model.decoder->O : 0}};
  manifest["normalizer"] = {{"mean", model.norm.mean}, {"std", model.norm.std}};
  manifest["eta_scaler"] = {{"mean", model.eta_scaler.mean}, {"std", model.eta_scaler.std}};
  manifest["params"] = params;
  manifest["payload_bytes"] = payload.size();
  manifest["payload_hash"] = hash_hex(fnv1a64(payload));
  manifest["provenance"] = {{"command", prov.command},
                            {"parent_hash", prov.parent_hash},
                            {"config", prov.config}};
  const std::string mtext = manifest.dump();

  std::string out;
  out.append(kCkptMagic, 4);
  {
    const std::uint32_t v = kCkptVersion;
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
  }
  {
    const std::uint64_t len = mtext.size();
    char buf[8];
    std::memcpy(buf, &len, 8);
    out.append(buf, 8);
  }
  out += mtext;
  out += payload;
  return out;
}

inline void save_checkpoint(const std::string& path, Model& model, const Provenance& prov) {
  atomic_write(path, encode_checkpoint(model, prov));
}

struct LoadedCheckpoint {
  Model model;
  Provenance provenance;
  std::string self_hash;  // fnv1a64 hex of the whole file
};

/// Loads and verifies a checkpoint. When expected_cfg is given, a config
/// mismatch is refused with both configurations in the message.
inline LoadedCheckpoint load_checkpoint(const std::string& path,
                                        const ModelConfig* expected_cfg = nullptr) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCkptMagic, 4) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kCkptVersion)
    throw std::runtime_error(path + ": unknown checkpoint format version " +
                             std::to_string(version));
  std::uint64_t mlen;
  std::memcpy(&mlen, bytes.data() + 8, 8);
  if (16 + mlen > bytes.size()) throw std::runtime_error(path + ": truncated manifest");
  const nlohmann::json manifest = nlohmann::json::parse(bytes.substr(16, mlen));
  const std::string payload = bytes.substr(16 + mlen);

  if (payload.size() != manifest.at("payload_bytes").get<std::size_t>())
    throw std::runtime_error(path + ": truncated weights blob");
  if (hash_hex(fnv1a64(payload)) != manifest.at("payload_hash").get<std::string>())
    throw std::runtime_error(path + ": weights blob hash mismatch");

  const ModelConfig cfg = detail::config_from_json(manifest.at("model"));
  if (expected_cfg && !(*expected_cfg == cfg))
    throw std::runtime_error(path + ": checkpoint config mismatch\n  checkpoint: " +
                             detail::config_json(cfg).dump() + "\n  requested:  " +
                             detail::config_json(*expected_cfg).dump());

  LoadedCheckpoint out;
  out.model = Model(cfg);
  if (manifest.at("decoder").at("present").get<bool>())
    out.model.decoder.emplace(cfg, manifest.at("decoder").at("O").get<std::size_t>());
  out.model.norm.mean = manifest.at("normalizer").at("mean").get<std::vector<double>>();
  out.model.norm.std = manifest.at("normalizer").at("std").get<std::vector<double>>();
  out.model.eta_scaler.mean = manifest.at("eta_scaler").at("mean").get<double>();
  out.model.eta_scaler.std = manifest.at("eta_scaler").at("std").get<double>();

  const auto registry = out.model.registry();
  const auto& params = manifest.at("params");
  if (params.size() != registry.size())
    throw std::runtime_error(path + ": parameter registry size mismatch");
  for (std::size_t i = 0; i < registry.size(); ++i) {
    const auto& entry = params[i];
    auto& [name, p] = registry[i];
    if (entry.at("name").get<std::string>() != name)
      throw std::runtime_error(path + ": registry order mismatch at " + name);
    if (entry.at("shape").get<std::vector<std::size_t>>() != p->value.shape())
      throw std::runtime_error(path + ": shape mismatch for " + name);
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    if (offset + 4 * p->value.size() > payload.size())
      throw std::runtime_error(path + ": weights blob too small for " + name);
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      float f;
      std::memcpy(&f, payload.data() + offset + 4 * k, 4);
      p->value[k] = static_cast<double>(f);
    }
  }

  out.provenance.command = manifest.at("provenance").at("command").get<std::string>();
  out.provenance.parent_hash = manifest.at("provenance").at("parent_hash").get<std::string>();
  out.provenance.config =
      manifest.at("provenance").at("config").get<std::map<std::string, std::string>>();
  out.self_hash = hash_hex(fnv1a64(bytes));
  return out;
}

inline std::string inspect_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCkptMagic, 4) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  std::uint64_t mlen;
  std::memcpy(&mlen, bytes.data() + 8, 8);
  if (16 + mlen > bytes.size()) throw std::runtime_error(path + ": truncated manifest");
  const nlohmann::json manifest = nlohmann::json::parse(bytes.substr(16, mlen));
  return manifest.dump(2);
}

}  // namespace mabert
