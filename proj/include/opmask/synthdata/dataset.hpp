#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opmask/core/error.hpp"
#include "opmask/core/rng.hpp"
#include "opmask/synthdata/image_io.hpp"
#include "opmask/synthdata/rle.hpp"
#include "opmask/synthdata/scene.hpp"
#include "opmask/synthdata/shapes.hpp"

namespace opmask::synth {

namespace fs = std::filesystem;

struct ImageRecord {
  std::int64_t id = 0;
  std::string file;  // relative to the dataset root
  int height = 0;
  int width = 0;
};

struct AnnotationRecord {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  int category_id = 0;
  Box box;
  int rle_height = 0;
  int rle_width = 0;
  std::vector<std::uint32_t> counts;
};

struct CategoryRecord {
  int id = 0;
  std::string name;
};

struct DatasetManifest {
  std::vector<ImageRecord> images;
  std::vector<AnnotationRecord> annotations;
  std::vector<CategoryRecord> categories;
  nlohmann::json config;
  std::uint64_t seed = 0;
};

// A manifest with its images and masks materialized in memory.
struct Dataset {
  DatasetManifest manifest;
  std::vector<Scene> scenes;  // same order as manifest.images

  int num_classes() const { return static_cast<int>(manifest.categories.size()); }
};

inline std::string image_file_name(std::int64_t id) {
  std::ostringstream os;
  os << "images/" << std::setw(6) << std::setfill('0') << id << ".ppm";
  return os.str();
}

// Per-scene seed for scene i of a dataset with the given root seed.
inline std::uint64_t scene_seed(std::uint64_t root, std::int64_t index) {
  return derive_seed(root, static_cast<std::uint64_t>(index));
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  using nlohmann::json;
  json images = json::array();
  for (const auto& r : m.images)
    images.push_back({{"id", r.id}, {"file", r.file}, {"height", r.height}, {"width", r.width}});
  json anns = json::array();
  for (const auto& a : m.annotations) {
    const auto x0 = static_cast<std::int64_t>(a.box.x0), y0 = static_cast<std::int64_t>(a.box.y0);
    const auto w = static_cast<std::int64_t>(a.box.width()), h = static_cast<std::int64_t>(a.box.height());
    anns.push_back({{"id", a.id},
                    {"image_id", a.image_id},
                    {"category_id", a.category_id},
                    {"bbox", {x0, y0, w, h}},
                    {"rle", {{"size", {a.rle_height, a.rle_width}}, {"counts", a.counts}}}});
  }
  json cats = json::array();
  for (const auto& c : m.categories) cats.push_back({{"id", c.id}, {"name", c.name}});
  return json{{"images", images},
              {"annotations", anns},
              {"categories", cats},
              {"meta", {{"seed", m.seed}, {"config", m.config}}}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    for (const auto& r : j.at("images"))
      m.images.push_back({r.at("id").get<std::int64_t>(), r.at("file").get<std::string>(),
                          r.at("height").get<int>(), r.at("width").get<int>()});
    for (const auto& a : j.at("annotations")) {
      AnnotationRecord rec;
      rec.id = a.at("id").get<std::int64_t>();
      rec.image_id = a.at("image_id").get<std::int64_t>();
      rec.category_id = a.at("category_id").get<int>();
      const auto& bb = a.at("bbox");
      const double x0 = bb.at(0).get<double>(), y0 = bb.at(1).get<double>();
      rec.box = Box{x0, y0, x0 + bb.at(2).get<double>(), y0 + bb.at(3).get<double>()};
      rec.rle_height = a.at("rle").at("size").at(0).get<int>();
      rec.rle_width = a.at("rle").at("size").at(1).get<int>();
      rec.counts = a.at("rle").at("counts").get<std::vector<std::uint32_t>>();
      m.annotations.push_back(std::move(rec));
    }
    for (const auto& c : j.at("categories"))
      m.categories.push_back({c.at("id").get<int>(), c.at("name").get<std::string>()});
    if (j.contains("meta")) {
      m.seed = j["meta"].value("seed", std::uint64_t{0});
      m.config = j["meta"].value("config", nlohmann::json::object());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("annotation file: ") + e.what());
  }
  return m;
}

// Checks referential integrity and that each RLE agrees with its stored box.
inline void validate_manifest(const DatasetManifest& m) {
  std::map<std::int64_t, const ImageRecord*> by_id;
  for (const auto& r : m.images) by_id[r.id] = &r;
  for (const auto& a : m.annotations) {
    auto it = by_id.find(a.image_id);
    if (it == by_id.end())
      throw FormatError("annotation " + std::to_string(a.id) + " references unknown image " +
                        std::to_string(a.image_id));
    if (a.rle_height != it->second->height || a.rle_width != it->second->width)
      throw FormatError("annotation " + std::to_string(a.id) + ": RLE size differs from image size");
    const auto mask = decode_rle(a.counts, a.rle_height, a.rle_width);
    const auto tb = tight_box(mask);
    if (!tb || !(*tb == a.box))
      throw FormatError("annotation " + std::to_string(a.id) + ": bbox is not the tight box of its mask");
  }
}

inline void write_text_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os << text;
    os.flush();
    if (!os) {
      os.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " into place");
  }
}

inline const char* kAnnotationFile = "annotations.json";

inline DatasetManifest generate_dataset(const GenConfig& cfg, int n, std::uint64_t seed,
                                        const fs::path& out_dir) {
  cfg.validate();
  if (n < 1) throw ConfigError("gen: dataset size must be at least 1");
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  const auto classes = class_table(cfg);
  DatasetManifest m;
  m.seed = seed;
  m.config = cfg;
  for (const auto& c : classes) m.categories.push_back({c.id, c.name});

  std::int64_t ann_id = 1;
  for (std::int64_t i = 0; i < n; ++i) {
    const Scene s = generate_scene(cfg, scene_seed(seed, i), i, &classes);
    const std::string file = image_file_name(i);
    write_ppm(out_dir / file, s.image);
    m.images.push_back({i, file, s.image.height, s.image.width});
    for (const auto& inst : s.instances) {
      AnnotationRecord a;
      a.id = ann_id++;
      a.image_id = i;
      a.category_id = inst.class_id;
      a.box = inst.box;
      a.rle_height = inst.mask.height;
      a.rle_width = inst.mask.width;
      a.counts = encode_rle(inst.mask);
      m.annotations.push_back(std::move(a));
    }
  }
  write_text_atomically(out_dir / kAnnotationFile, manifest_to_json(m).dump(1) + "\n");
  return m;
}

inline DatasetManifest read_manifest(const fs::path& dir_or_file) {
  const fs::path file = fs::is_directory(dir_or_file) ? dir_or_file / kAnnotationFile : dir_or_file;
  std::ifstream is(file);
  if (!is) throw IoError("cannot open " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  auto m = manifest_from_json(j);
  validate_manifest(m);
  return m;
}

// Ground truth only (no pixels); enough for the evaluation tools.
inline std::vector<Scene> scenes_from_manifest(const DatasetManifest& m) {
  std::vector<Scene> scenes;
  std::map<std::int64_t, std::size_t> index;
  for (const auto& r : m.images) {
    index[r.id] = scenes.size();
    Scene s;
    s.scene_id = r.id;
    s.image.height = r.height;
    s.image.width = r.width;
    scenes.push_back(std::move(s));
  }
  for (const auto& a : m.annotations) {
    Instance inst;
    inst.class_id = a.category_id;
    inst.box = a.box;
    inst.mask = decode_rle(a.counts, a.rle_height, a.rle_width);
    scenes[index.at(a.image_id)].instances.push_back(std::move(inst));
  }
  return scenes;
}

inline Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.manifest = read_manifest(dir);
  d.scenes = scenes_from_manifest(d.manifest);
  for (std::size_t i = 0; i < d.scenes.size(); ++i) {
    d.scenes[i].image = read_ppm(dir / d.manifest.images[i].file);
    d.scenes[i].seed = scene_seed(d.manifest.seed, d.scenes[i].scene_id);
  }
  return d;
}

}  // namespace opmask::synth
