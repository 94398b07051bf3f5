#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "opmask/core/error.hpp"
#include "opmask/core/tensor.hpp"
#include "opmask/opmodel/model.hpp"

namespace opmask::train {

// Layout: magic "OPMKCKPT" | u32 version | u64 header bytes | header JSON |
// raw little-endian tensor payload | u64 FNV-1a of everything before it.
inline constexpr char kCheckpointMagic[8] = {'O', 'P', 'M', 'K', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kMomentumPrefix = "opt/";

template <typename T>
struct CheckpointRecord {
  std::uint32_t version = kCheckpointVersion;
  long iteration = 0;
  std::uint64_t root_seed = 0;
  nlohmann::json train_config;
  nlohmann::json model_config;
  std::map<std::string, Tensor<T>> tensors;   // parameters and buffers
  std::map<std::string, Tensor<T>> momentum;  // optimizer state
};

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
inline const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else if constexpr (std::is_same_v<T, double>) return "f64";
  else static_assert(sizeof(T) == 0, "unsupported checkpoint scalar");
}

template <typename T>
inline std::string serialize_checkpoint(const CheckpointRecord<T>& rec) {
  nlohmann::json index = nlohmann::json::array();
  std::string payload;
  auto add = [&](const std::string& name, const Tensor<T>& t) {
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    payload.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(T));
  };
  for (const auto& [name, t] : rec.tensors) add(name, t);
  for (const auto& [name, t] : rec.momentum) add(kMomentumPrefix + name, t);

  const nlohmann::json header{{"iteration", rec.iteration},         {"root_seed", rec.root_seed},
                              {"dtype", dtype_name<T>()},           {"train_config", rec.train_config},
                              {"model_config", rec.model_config},   {"tensors", index},
                              {"payload_bytes", payload.size()}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = rec.version;
  const std::uint64_t hlen = h.size();
  out.append(reinterpret_cast<const char*>(&version), sizeof version);
  out.append(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out += h;
  out += payload;
  const std::uint64_t sum = fnv1a(out);
  out.append(reinterpret_cast<const char*>(&sum), sizeof sum);
  return out;
}

template <typename T>
inline CheckpointRecord<T> deserialize_checkpoint(const std::string& bytes) {
  constexpr std::size_t fixed = sizeof kCheckpointMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < fixed + sizeof(std::uint64_t) || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic or truncated file");
  CheckpointRecord<T> rec;
  std::memcpy(&rec.version, bytes.data() + 8, sizeof rec.version);
  if (rec.version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(rec.version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof stored, sizeof stored);
  if (fnv1a(bytes.substr(0, bytes.size() - sizeof stored)) != stored)
    throw FormatError("checkpoint: checksum mismatch (corrupt file)");
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, bytes.data() + 12, sizeof hlen);
  if (fixed + hlen + sizeof stored > bytes.size()) throw FormatError("checkpoint: header overruns file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(fixed, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: unreadable header: ") + e.what());
  }
  const std::size_t payload_at = fixed + hlen;
  const std::size_t payload_len = bytes.size() - sizeof stored - payload_at;
  try {
    if (header.at("dtype").get<std::string>() != dtype_name<T>())
      throw FormatError("checkpoint: stored dtype " + header.at("dtype").get<std::string>() + ", expected " +
                        dtype_name<T>());
    if (header.at("payload_bytes").get<std::size_t>() != payload_len)
      throw FormatError("checkpoint: payload size mismatch");
    rec.iteration = header.at("iteration").get<long>();
    rec.root_seed = header.at("root_seed").get<std::uint64_t>();
    rec.train_config = header.at("train_config");
    rec.model_config = header.at("model_config");
    for (const auto& e : header.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<std::vector<int>>();
      const auto offset = e.at("offset").get<std::size_t>();
      Tensor<T> t(shape);
      if (offset + t.size() * sizeof(T) > payload_len) throw FormatError("checkpoint: tensor '" + name + "' overruns payload");
      std::memcpy(t.data(), bytes.data() + payload_at + offset, t.size() * sizeof(T));
      if (name.rfind(kMomentumPrefix, 0) == 0)
        rec.momentum[name.substr(std::strlen(kMomentumPrefix))] = std::move(t);
      else
        rec.tensors[name] = std::move(t);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  return rec;
}

template <typename T>
inline void save_checkpoint(const std::filesystem::path& path, const CheckpointRecord<T>& rec) {
  const std::string bytes = serialize_checkpoint(rec);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
inline CheckpointRecord<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint<T>(ss.str());
}

template <typename T>
inline CheckpointRecord<T> snapshot_model(nn::Model<T>& model) {
  CheckpointRecord<T> rec;
  rec.model_config = model.config();
  for (const auto& [name, t] : model.named_tensors()) rec.tensors[name] = *t;
  return rec;
}

// Copies every model tensor from the record; a missing or misshaped key is an error.
template <typename T>
inline void restore_model(nn::Model<T>& model, const CheckpointRecord<T>& rec) {
  for (auto& [name, t] : model.named_tensors()) {
    const auto it = rec.tensors.find(name);
    if (it == rec.tensors.end()) throw FormatError("checkpoint: missing parameter key '" + name + "'");
    if (it->second.shape() != t->shape())
      throw FormatError("checkpoint: parameter '" + name + "' has shape " + it->second.shape_string() +
                        ", model expects " + t->shape_string());
    *t = it->second;
  }
}

}  // namespace opmask::train
