#pragma once

// Run bookkeeping: content hashes, the per-command RunRecord and quarantine
// of partial outputs.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "opmask/cli/config.hpp"
#include "opmask/core/error.hpp"
#include "opmask/synthdata/dataset.hpp"

namespace opmask::cli {

inline std::string sha1_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw Error("sha1 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

// Same id `git hash-object` gives the file.
inline std::string git_blob_hash(const std::string& content) {
  return sha1_hex("blob " + std::to_string(content.size()) + '\0' + content);
}

inline std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

inline std::string dataset_hash(const fs::path& dataset_dir) {
  return git_blob_hash(read_file(dataset_dir / synth::kAnnotationFile));
}

// The output location is not part of the experiment's identity.
inline std::string config_hash(const ExperimentConfig& c) {
  auto tree = to_json_tree(c);
  tree.erase("output");
  return sha1_hex(tree.dump());
}

struct RunRecord {
  std::string command;
  std::string status = "running";
  std::string config_hash;
  std::string dataset_hash;
  std::vector<std::string> artifacts;  // relative to the output directory
  double wall_clock_seconds = 0;
  std::string error;
};

inline nlohmann::json record_to_json(const RunRecord& r) {
  nlohmann::json j{{"command", r.command},
                   {"status", r.status},
                   {"config_hash", r.config_hash},
                   {"dataset_hash", r.dataset_hash},
                   {"artifacts", r.artifacts},
                   {"wall_clock_seconds", r.wall_clock_seconds}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.command = j.at("command").get<std::string>();
  r.status = j.at("status").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.dataset_hash = j.at("dataset_hash").get<std::string>();
  r.artifacts = j.at("artifacts").get<std::vector<std::string>>();
  r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  r.error = j.value("error", std::string());
  return r;
}

inline void write_record(const fs::path& path, const RunRecord& r) {
  synth::write_text_atomically(path, record_to_json(r).dump(2) + "\n");
}

// Tracks what one command writes under its output directory so a failure
// can move exactly those files to <dir>/failed/.
class RunScope {
 public:
  RunScope(fs::path dir, std::string command, std::string record_name = "run_record.json")
      : dir_(std::move(dir)), record_name_(std::move(record_name)), t0_(std::chrono::steady_clock::now()) {
    rec_.command = std::move(command);
  }

  const fs::path& dir() const { return dir_; }
  RunRecord& record() { return rec_; }

  fs::path add(const std::string& rel) {
    if (std::find(rec_.artifacts.begin(), rec_.artifacts.end(), rel) == rec_.artifacts.end())
      rec_.artifacts.push_back(rel);
    return dir_ / rel;
  }

  void succeed() {
    rec_.status = "ok";
    rec_.wall_clock_seconds = elapsed();
    write_record(dir_ / record_name_, rec_);
  }

  // Moves every artifact written so far into failed/ and records the error
  // there. Never throws.
  void fail(const std::string& what) noexcept {
    try {
      rec_.status = "failed";
      rec_.error = what;
      rec_.wall_clock_seconds = elapsed();
      const fs::path q = dir_ / "failed";
      fs::create_directories(q);
      for (const auto& a : rec_.artifacts) {
        const fs::path src = dir_ / a;
        if (!fs::exists(src)) continue;
        const fs::path dst = q / a;
        fs::create_directories(dst.parent_path());
        std::error_code ec;
        fs::remove_all(dst, ec);
        fs::rename(src, dst, ec);
      }
      write_record(q / record_name_, rec_);
    } catch (...) {
    }
  }

 private:
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

  fs::path dir_;
  std::string record_name_;
  std::chrono::steady_clock::time_point t0_;
  RunRecord rec_;
};

}  // namespace opmask::cli
