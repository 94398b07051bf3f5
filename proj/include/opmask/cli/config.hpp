#pragma once

// Experiment configuration: YAML text with `include:` support, validated
// against the defaults tree, with environment and command-line overrides.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "opmask/core/error.hpp"
#include "opmask/core/rng.hpp"
#include "opmask/opmodel/config.hpp"
#include "opmask/synthdata/scene.hpp"
#include "opmask/trainloop/train.hpp"

extern char** environ;

namespace opmask::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kEnvPrefix = "OPMASK_";

struct DatasetSection {
  synth::GenConfig gen;
  int train_size = 1000;
  int test_size = 300;
  std::optional<std::uint64_t> seed;  // unset: the experiment seed
  std::string train_path;  // empty: generate into the run directory
  std::string test_path;
};

struct EvalSection {
  std::string subset = "weak";  // weak, strong, all or an id list
  int batch_size = 8;
  double prior_threshold = 0.5;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output = "runs/default";
  bool deterministic = true;
  DatasetSection dataset;
  ModelConfig model;
  train::TrainConfig train;
  EvalSection eval;

  std::uint64_t dataset_seed() const { return dataset.seed.value_or(seed); }
  std::uint64_t train_data_seed() const { return derive_seed(dataset_seed(), 0); }
  std::uint64_t test_data_seed() const { return derive_seed(dataset_seed(), 1); }

  // The training config actually used: the experiment seed drives it.
  train::TrainConfig effective_train() const {
    auto t = train;
    t.seed = seed;
    return t;
  }

  void validate() const {
    if (!deterministic) throw ConfigError("deterministic: only deterministic execution is supported");
    dataset.gen.validate();
    if (dataset.train_size < 1 || dataset.test_size < 1) throw ConfigError("dataset: sizes must be positive");
    if (dataset.gen.num_classes != model.num_classes)
      throw ConfigError("model.num_classes must equal dataset.gen.num_classes");
    model.validate();
    effective_train().validate();
    if (eval.batch_size < 1) throw ConfigError("eval.batch_size must be positive");
  }
};

inline json to_json_tree(const ExperimentConfig& c) {
  json model = c.model;
  model.erase("variant");  // train.variant decides
  model.erase("init_seed");
  json tr = c.train;
  tr.erase("seed");  // the experiment seed decides
  return json{{"seed", c.seed},
              {"output", c.output},
              {"deterministic", c.deterministic},
              {"dataset",
               {{"gen", c.dataset.gen},
                {"train_size", c.dataset.train_size},
                {"test_size", c.dataset.test_size},
                {"seed", c.dataset.seed ? json(*c.dataset.seed) : json(nullptr)},
                {"train_path", c.dataset.train_path},
                {"test_path", c.dataset.test_path}}},
              {"model", model},
              {"train", tr},
              {"eval",
               {{"subset", c.eval.subset},
                {"batch_size", c.eval.batch_size},
                {"prior_threshold", c.eval.prior_threshold}}}};
}

namespace detail {

inline json scalar_from_text(const std::string& s, bool quoted) {
  if (quoted) return s;
  if (s.empty() || s == "~" || s == "null") return nullptr;
  if (s == "true") return true;
  if (s == "false") return false;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (s[0] == '-') {
    std::int64_t v = 0;
    auto r = std::from_chars(b, e, v);
    if (r.ec == std::errc() && r.ptr == e) return v;
  } else {
    std::uint64_t v = 0;
    auto r = std::from_chars(b, e, v);
    if (r.ec == std::errc() && r.ptr == e) return v;
  }
  double d = 0;
  auto r = std::from_chars(b, e, d);
  if (r.ec == std::errc() && r.ptr == e) return d;
  return s;
}

inline json from_yaml(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Scalar:
      return scalar_from_text(n.Scalar(), n.Tag() == "!");
    case YAML::NodeType::Sequence: {
      json a = json::array();
      for (const auto& e : n) a.push_back(from_yaml(e));
      return a;
    }
    case YAML::NodeType::Map: {
      json o = json::object();
      for (const auto& kv : n) o[kv.first.as<std::string>()] = from_yaml(kv.second);
      return o;
    }
  }
  return nullptr;
}

inline void merge_into(json& dst, const json& src) {
  for (auto it = src.begin(); it != src.end(); ++it) {
    if (it.value().is_object() && dst.contains(it.key()) && dst[it.key()].is_object())
      merge_into(dst[it.key()], it.value());
    else
      dst[it.key()] = it.value();
  }
}

inline json load_file(const fs::path& path, std::set<fs::path>& stack) {
  const fs::path canon = fs::weakly_canonical(path);
  if (!fs::exists(canon)) throw IoError("config file not found: " + path.string());
  if (stack.count(canon)) throw ConfigError("config include cycle at " + path.string());
  stack.insert(canon);
  YAML::Node root;
  try {
    root = YAML::LoadFile(canon.string());
  } catch (const YAML::Exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  json self = from_yaml(root);
  if (self.is_null()) self = json::object();
  if (!self.is_object()) throw ConfigError(path.string() + ": top level must be a mapping");
  json merged = json::object();
  if (self.contains("include")) {
    json inc = self["include"];
    if (inc.is_string()) inc = json::array({inc});
    if (!inc.is_array()) throw ConfigError(path.string() + ": include must be a path or a list of paths");
    for (const auto& p : inc) {
      if (!p.is_string()) throw ConfigError(path.string() + ": include entries must be paths");
      merge_into(merged, load_file(canon.parent_path() / p.get<std::string>(), stack));
    }
    self.erase("include");
  }
  merge_into(merged, self);
  stack.erase(canon);
  return merged;
}

// Every user key must exist in the defaults tree with a compatible type.
inline void check_against(const json& user, const json& defaults, const std::string& prefix) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    const json& d = defaults[it.key()];
    const json& v = it.value();
    if (d.is_object()) {
      if (!v.is_object()) throw ConfigError("config key '" + key + "' must be a mapping");
      check_against(v, d, key);
    } else if (d.is_number()) {
      if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
      if (d.is_number_integer() && !v.is_number_integer())
        throw ConfigError("config key '" + key + "' must be an integer");
    } else if (d.is_boolean() && !v.is_boolean()) {
      throw ConfigError("config key '" + key + "' must be true or false");
    } else if (d.is_string() && !v.is_string()) {
      throw ConfigError("config key '" + key + "' must be a string");
    } else if (d.is_array() && !v.is_array()) {
      throw ConfigError("config key '" + key + "' must be a list");
    }
  }
}

inline void set_path(json& tree, const std::string& dotted, const json& value) {
  json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot - start);
    if (part.empty()) throw ConfigError("malformed config key '" + dotted + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline json parse_override_value(const std::string& text) {
  try {
    return from_yaml(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError("cannot parse override value '" + text + "': " + e.what());
  }
}

}  // namespace detail

inline ExperimentConfig from_json_tree(const json& j) {
  detail::check_against(j, to_json_tree(ExperimentConfig{}), "");
  ExperimentConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.output = j.value("output", c.output);
    c.deterministic = j.value("deterministic", c.deterministic);
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      if (d.contains("gen")) c.dataset.gen = d["gen"].get<synth::GenConfig>();
      c.dataset.train_size = d.value("train_size", c.dataset.train_size);
      c.dataset.test_size = d.value("test_size", c.dataset.test_size);
      if (d.contains("seed") && !d["seed"].is_null()) c.dataset.seed = d["seed"].get<std::uint64_t>();
      c.dataset.train_path = d.value("train_path", c.dataset.train_path);
      c.dataset.test_path = d.value("test_path", c.dataset.test_path);
    }
    if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
    if (j.contains("train")) c.train = j["train"].get<train::TrainConfig>();
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      c.eval.subset = e.value("subset", c.eval.subset);
      c.eval.batch_size = e.value("batch_size", c.eval.batch_size);
      c.eval.prior_threshold = e.value("prior_threshold", c.eval.prior_threshold);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.model.variant = c.train.variant;
  return c;
}

struct LoadOptions {
  std::optional<fs::path> file;
  std::vector<std::string> sets;  // "a.b=value"
  bool use_env = true;
};

// Precedence, lowest first: defaults, the file and its includes, OPMASK_*
// environment variables, then explicit `--set` overrides.
inline json load_tree(const LoadOptions& opt) {
  json tree = json::object();
  if (opt.file) {
    std::set<fs::path> stack;
    tree = detail::load_file(*opt.file, stack);
  }
  if (opt.use_env) {
    std::vector<std::pair<std::string, std::string>> env;
    for (char** e = environ; e && *e; ++e) {
      const std::string kv = *e;
      if (kv.rfind(kEnvPrefix, 0) != 0) continue;
      const auto eq = kv.find('=');
      env.emplace_back(kv.substr(0, eq), eq == std::string::npos ? "" : kv.substr(eq + 1));
    }
    std::sort(env.begin(), env.end());
    for (const auto& [name, value] : env) {
      std::string key = name.substr(std::char_traits<char>::length(kEnvPrefix));
      for (auto& ch : key) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      for (std::size_t p; (p = key.find("__")) != std::string::npos;) key.replace(p, 2, ".");
      detail::set_path(tree, key, detail::parse_override_value(value));
    }
  }
  for (const auto& s : opt.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + s + "' is not key=value");
    detail::set_path(tree, s.substr(0, eq), detail::parse_override_value(s.substr(eq + 1)));
  }
  return tree;
}

inline ExperimentConfig load_config(const LoadOptions& opt) {
  auto c = from_json_tree(load_tree(opt));
  c.validate();
  return c;
}

// YAML rendering of a JSON tree, used for --dump-defaults.
inline void emit_yaml(YAML::Emitter& out, const json& j) {
  if (j.is_object()) {
    out << YAML::BeginMap;
    for (auto it = j.begin(); it != j.end(); ++it) {
      out << YAML::Key << it.key() << YAML::Value;
      emit_yaml(out, it.value());
    }
    out << YAML::EndMap;
  } else if (j.is_array()) {
    out << YAML::Flow << YAML::BeginSeq;
    for (const auto& e : j) emit_yaml(out, e);
    out << YAML::EndSeq;
  } else if (j.is_null()) {
    out << YAML::Null;
  } else if (j.is_string()) {
    out << YAML::DoubleQuoted << j.get<std::string>();
  } else {
    out << j.dump();
  }
}

inline std::string to_yaml(const json& j) {
  YAML::Emitter out;
  emit_yaml(out, j);
  return std::string(out.c_str()) + "\n";
}

}  // namespace opmask::cli
