#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "opmask/core/rng.hpp"
#include "opmask/synthdata/class_split.hpp"
#include "opmask/synthdata/dataset.hpp"
#include "opmask/synthdata/image_io.hpp"
#include "opmask/synthdata/rle.hpp"
#include "opmask/synthdata/scene.hpp"
#include "opmask/synthdata/shapes.hpp"

using namespace opmask;
using namespace opmask::synth;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("opmask_synth_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Box IoU written out independently of evalkit.
double iou_oracle(const Box& a, const Box& b) {
  double inter = 0;
  for (int y = static_cast<int>(std::min(a.y0, b.y0)); y < static_cast<int>(std::max(a.y1, b.y1)); ++y)
    for (int x = static_cast<int>(std::min(a.x0, b.x0)); x < static_cast<int>(std::max(a.x1, b.x1)); ++x) {
      const bool ia = x >= a.x0 && x < a.x1 && y >= a.y0 && y < a.y1;
      const bool ib = x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
      inter += ia && ib;
    }
  return inter / (a.area() + b.area() - inter);
}

// Column-major pixel scan, first run counts zeros.
std::vector<std::uint32_t> naive_rle(const BinaryMask& m) {
  std::vector<std::uint32_t> out;
  int cur = 0;
  std::uint32_t run = 0;
  for (int x = 0; x < m.width; ++x)
    for (int y = 0; y < m.height; ++y) {
      const int v = m.at(y, x) ? 1 : 0;
      if (v != cur) {
        out.push_back(run);
        run = 0;
        cur = v;
      }
      ++run;
    }
  out.push_back(run);
  return out;
}

double mean_pairwise_iou(const GenConfig& cfg, int scenes) {
  double s = 0;
  int n = 0;
  for (int i = 0; i < scenes; ++i) {
    const auto sc = generate_scene(cfg, scene_seed(5, i), i);
    for (std::size_t a = 0; a < sc.instances.size(); ++a)
      for (std::size_t b = a + 1; b < sc.instances.size(); ++b) {
        s += iou_oracle(sc.instances[a].box, sc.instances[b].box);
        ++n;
      }
  }
  return n ? s / n : 0.0;
}

}  // namespace

TEST(Shapes, AtLeastEightFamiliesWithDistinctTextures) {
  const auto classes = default_classes(8);
  ASSERT_EQ(classes.size(), 8u);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    EXPECT_EQ(classes[i].id, static_cast<int>(i));
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      EXPECT_NE(classes[i].family, classes[j].family);
      EXPECT_NE(classes[i].texture.color, classes[j].texture.color);
    }
  }
}

TEST(Shapes, SharedPaletteKeepsTexturesDistinct) {
  const auto classes = default_classes(8, {}, 4);
  for (std::size_t i = 0; i < classes.size(); ++i)
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      const auto &a = classes[i].texture, &b = classes[j].texture;
      EXPECT_EQ(a.color == b.color, j == i + 4);
      EXPECT_TRUE(a.color != b.color || a.stripe_freq != b.stripe_freq || a.stripe_angle != b.stripe_angle);
    }
}

TEST(Scene, ColorJitterChangesPixelsOnly) {
  GenConfig g;
  g.overlap_pressure = 0.5;
  GenConfig j = g;
  j.color_jitter = 0.2;
  const auto a = generate_scene(g, 21), b = generate_scene(j, 21);
  ASSERT_EQ(a.instances.size(), b.instances.size());
  for (std::size_t i = 0; i < a.instances.size(); ++i) EXPECT_EQ(a.instances[i].mask, b.instances[i].mask);
  EXPECT_NE(a.image.rgb, b.image.rgb);
  j.color_jitter = 0.6;
  EXPECT_THROW(generate_scene(j, 21), ConfigError);
  GenConfig c = g;
  c.num_colors = 9;
  EXPECT_THROW(generate_scene(c, 21), ConfigError);
}

TEST(Shapes, RasterizeIsDeterministicAndNonEmpty) {
  for (int f = 0; f < kFamilyCount; ++f) {
    const ShapeParams p{32, 32, 12, 0.3, 0.8};
    const auto a = rasterize(static_cast<Family>(f), p, 64, 64);
    EXPECT_EQ(a, rasterize(static_cast<Family>(f), p, 64, 64));
    EXPECT_GT(a.count(), 20u) << family_name(static_cast<Family>(f));
  }
}

TEST(Scene, ContractBounds128) {
  GenConfig cfg;
  cfg.height = cfg.width = 128;
  cfg.max_instances = 5;
  const auto s = generate_scene(cfg, 7);
  ASSERT_GE(s.instances.size(), 1u);
  ASSERT_LE(s.instances.size(), 5u);
  EXPECT_EQ(s.image.height, 128);
  for (const auto& inst : s.instances) {
    EXPECT_EQ(inst.mask.height, 128);
    EXPECT_EQ(inst.mask.width, 128);
    ASSERT_GT(inst.mask.count(), 0u);
    EXPECT_EQ(*tight_box(inst.mask), inst.box);
    EXPECT_GE(inst.box.x0, 0);
    EXPECT_LE(inst.box.x1, 128);
  }
  for (float v : s.image.rgb) {
    ASSERT_GE(v, 0.f);
    ASSERT_LE(v, 1.f);
  }
}

TEST(Scene, DeterministicInSeed) {
  GenConfig cfg;
  cfg.overlap_pressure = 0.8;
  EXPECT_EQ(generate_scene(cfg, 99), generate_scene(cfg, 99));
  EXPECT_FALSE(generate_scene(cfg, 99) == generate_scene(cfg, 100));
}

TEST(Scene, TightBoxPropertyOverManyScenes) {
  GenConfig cfg;
  cfg.overlap_pressure = 0.9;
  for (int i = 0; i < 100; ++i) {
    const auto s = generate_scene(cfg, scene_seed(3, i));
    for (const auto& inst : s.instances) {
      ASSERT_GT(inst.mask.count(), 0u);
      ASSERT_EQ(*tight_box(inst.mask), inst.box);
    }
  }
}

TEST(Scene, OcclusionRemovesPixelsFromEarlierMasks) {
  GenConfig cfg;
  cfg.overlap_pressure = 0.95;
  for (int i = 0; i < 50; ++i) {
    const auto s = generate_scene(cfg, scene_seed(4, i));
    for (std::size_t a = 0; a < s.instances.size(); ++a)
      for (std::size_t b = a + 1; b < s.instances.size(); ++b)
        for (std::size_t p = 0; p < s.instances[a].mask.bits.size(); ++p)
          ASSERT_FALSE(s.instances[a].mask.bits[p] && s.instances[b].mask.bits[p]);
  }
}

TEST(Scene, ZeroPressureGivesDisjointBoxes) {
  GenConfig cfg;
  cfg.overlap_pressure = 0;
  for (int i = 0; i < 100; ++i) {
    const auto s = generate_scene(cfg, scene_seed(11, i));
    for (std::size_t a = 0; a < s.instances.size(); ++a)
      for (std::size_t b = a + 1; b < s.instances.size(); ++b)
        ASSERT_EQ(iou_oracle(s.instances[a].box, s.instances[b].box), 0.0);
  }
}

TEST(Scene, OverlapMonotoneInPressure) {
  GenConfig cfg;
  cfg.min_instances = 2;
  double prev = -1;
  for (double p : {0.0, 0.5, 0.95}) {
    cfg.overlap_pressure = p;
    const double m = mean_pairwise_iou(cfg, 150);
    EXPECT_GE(m, prev) << "pressure " << p;
    prev = m;
  }
}

TEST(Scene, RejectsUnfittableConfigs) {
  GenConfig cfg;
  cfg.radius_min = 40;
  cfg.radius_max = 50;
  EXPECT_THROW(generate_scene(cfg, 1), ConfigError);
  GenConfig small;
  small.height = 32;
  EXPECT_THROW(small.validate(), ConfigError);
  GenConfig one;
  one.num_classes = 1;
  EXPECT_THROW(one.validate(), ConfigError);
}

TEST(Rle, FormatDefinition) {
  BinaryMask z(2, 2);
  EXPECT_EQ(encode_rle(z), (std::vector<std::uint32_t>{4}));
  BinaryMask o(2, 2);
  o.bits.assign(4, 1);
  EXPECT_EQ(encode_rle(o), (std::vector<std::uint32_t>{0, 4}));
}

TEST(Rle, RoundtripMatchesNaiveEncoder) {
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    BinaryMask m(1 + static_cast<int>(rng.below(20)), 1 + static_cast<int>(rng.below(20)));
    const double p = rng.uniform();
    for (auto& b : m.bits) b = rng.bernoulli(p);
    const auto counts = encode_rle(m);
    ASSERT_EQ(counts, naive_rle(m));
    ASSERT_EQ(decode_rle(counts, m.height, m.width), m);
  }
}

TEST(Rle, BadCountsRejected) {
  EXPECT_THROW(decode_rle({1, 2}, 2, 2), FormatError);
}

TEST(ClassSplit, ComplementAndDegenerate) {
  const auto all = id_range(8);
  const auto s = make_class_split(all, {0, 1, 2, 3});
  EXPECT_EQ(s.weak_ids, (std::set<int>{4, 5, 6, 7}));
  const auto full = make_class_split(all, all);
  EXPECT_TRUE(full.weak_ids.empty());
  EXPECT_THROW(make_class_split(all, {9}), ConfigError);
}

TEST(ClassSplit, RandomSplitIsPartition) {
  const auto all = id_range(8);
  for (int k = 0; k <= 8; ++k) {
    const auto s = make_random_split(all, k, 123);
    EXPECT_EQ(static_cast<int>(s.strong_ids.size()), k);
    EXPECT_EQ(s.all_ids(), all);
    for (int id : s.strong_ids) EXPECT_FALSE(s.is_weak(id));
  }
  EXPECT_EQ(make_random_split(all, 3, 5), make_random_split(all, 3, 5));
}

TEST(ClassSplit, ParseIdList) {
  EXPECT_EQ(parse_id_list("0-3"), (std::set<int>{0, 1, 2, 3}));
  EXPECT_EQ(parse_id_list("1,5,2-3"), (std::set<int>{1, 2, 3, 5}));
  EXPECT_THROW(parse_id_list("a,b"), ConfigError);
}

TEST(ImageIo, PpmRoundtripIsExactForQuantizedImages) {
  const auto dir = temp_dir("ppm");
  GenConfig cfg;
  const auto s = generate_scene(cfg, 3);
  write_ppm(dir / "a.ppm", s.image);
  EXPECT_EQ(read_ppm(dir / "a.ppm"), s.image);
}

TEST(Dataset, CardinalityDeterminismAndReload) {
  const auto d1 = temp_dir("ds1"), d2 = temp_dir("ds2");
  GenConfig cfg;
  cfg.overlap_pressure = 0.7;
  const auto m = generate_dataset(cfg, 10, 1, d1);
  EXPECT_EQ(m.images.size(), 10u);
  generate_dataset(cfg, 10, 1, d2);
  EXPECT_EQ(slurp(d1 / kAnnotationFile), slurp(d2 / kAnnotationFile));
  EXPECT_EQ(slurp(d1 / image_file_name(3)), slurp(d2 / image_file_name(3)));

  const auto ds = load_dataset(d1);
  ASSERT_EQ(ds.scenes.size(), 10u);
  for (int i = 0; i < 10; ++i) {
    const auto s = generate_scene(cfg, scene_seed(1, i), i);
    EXPECT_EQ(ds.scenes[i].image, s.image);
    EXPECT_EQ(ds.scenes[i].instances, s.instances);
  }
}

TEST(Dataset, DifferentRootSeedsGiveDifferentScenes) {
  GenConfig cfg;
  for (int i = 0; i < 10; ++i)
    EXPECT_FALSE(generate_scene(cfg, scene_seed(1, i), i) == generate_scene(cfg, scene_seed(2, i), i));
}

TEST(Dataset, ManifestSchema) {
  const auto dir = temp_dir("schema");
  GenConfig cfg;
  generate_dataset(cfg, 2, 4, dir);
  const auto j = nlohmann::json::parse(slurp(dir / kAnnotationFile));
  ASSERT_TRUE(j.contains("images") && j.contains("annotations") && j.contains("categories") && j.contains("meta"));
  const auto& a = j["annotations"][0];
  EXPECT_EQ(a["bbox"].size(), 4u);
  EXPECT_EQ(a["rle"]["size"], (std::vector<int>{64, 64}));
  EXPECT_EQ(j["meta"]["seed"], 4);
  EXPECT_EQ(j["categories"].size(), 8u);
}

TEST(Dataset, InconsistentBoxRejected) {
  const auto dir = temp_dir("bad");
  GenConfig cfg;
  auto m = generate_dataset(cfg, 2, 4, dir);
  m.annotations[0].box.x1 += 1;
  EXPECT_THROW(validate_manifest(m), FormatError);
  auto m2 = generate_dataset(cfg, 2, 4, dir);
  m2.annotations[0].image_id = 99;
  EXPECT_THROW(validate_manifest(m2), FormatError);
}
