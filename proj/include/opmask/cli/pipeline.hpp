#pragma once

// The experiment stages behind the CLI. Every stage reads its inputs from
// disk, so each one can be re-run on its own.

#include <atomic>
#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "opmask/cli/config.hpp"
#include "opmask/cli/record.hpp"
#include "opmask/evalkit/analysis.hpp"
#include "opmask/evalkit/ap.hpp"
#include "opmask/evalkit/detection.hpp"
#include "opmask/evalkit/inference.hpp"
#include "opmask/synthdata/class_split.hpp"
#include "opmask/synthdata/dataset.hpp"
#include "opmask/trainloop/checkpoint.hpp"
#include "opmask/trainloop/train.hpp"

namespace opmask::cli {

using Log = std::function<void(const std::string&)>;

inline void quiet(const std::string&) {}

inline constexpr const char* kSnapshotFile = "config.snapshot";

inline void write_snapshot(const fs::path& run, const ExperimentConfig& c) {
  synth::write_text_atomically(run / kSnapshotFile, to_yaml(to_json_tree(c)));
}

inline ExperimentConfig read_snapshot(const fs::path& run) {
  const fs::path p = run / kSnapshotFile;
  if (!fs::exists(p)) throw IoError("not a run directory (no " + std::string(kSnapshotFile) + "): " + run.string());
  LoadOptions o;
  o.file = p;
  o.use_env = false;
  return load_config(o);
}

// Uses `given` when set; otherwise generates into `fallback`, reusing an
// earlier generation with the same seed, size and generator settings.
inline fs::path materialize_dataset(const std::string& given, const synth::GenConfig& gen, int n,
                                    std::uint64_t seed, const fs::path& fallback, bool* generated = nullptr) {
  if (generated) *generated = false;
  if (!given.empty()) {
    if (!fs::exists(fs::path(given) / synth::kAnnotationFile)) throw IoError("dataset not found: " + given);
    return given;
  }
  if (fs::exists(fallback / synth::kAnnotationFile)) {
    const auto m = synth::read_manifest(fallback);
    if (m.seed == seed && m.config == nlohmann::json(gen) && static_cast<int>(m.images.size()) == n) return fallback;
  }
  synth::generate_dataset(gen, n, seed, fallback);
  if (generated) *generated = true;
  return fallback;
}

inline std::set<int> resolve_subset(const std::string& spec, const std::set<int>& strong, int num_classes) {
  const auto all = synth::id_range(num_classes);
  if (spec == "all") return all;
  const auto split = synth::make_class_split(all, strong);
  if (spec == "strong") return split.strong_ids;
  if (spec == "weak") return split.weak_ids;
  const auto ids = synth::parse_id_list(spec);
  for (int c : ids)
    if (!all.count(c)) throw ConfigError("subset: unknown class id " + std::to_string(c));
  return ids;
}

// File-name safe label for a subset spec.
inline std::string subset_label(const std::string& spec) {
  std::string s;
  for (char c : spec) s += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return s;
}

// ---- gen-data ------------------------------------------------------------

inline void gen_data(const ExperimentConfig& cfg, const fs::path& out, int size, std::uint64_t seed, RunScope& scope) {
  scope.add(synth::kAnnotationFile);
  scope.add("images");
  synth::generate_dataset(cfg.dataset.gen, size, seed, out);
  scope.record().config_hash = config_hash(cfg);
  scope.record().dataset_hash = dataset_hash(out);
}

// ---- train ---------------------------------------------------------------

inline void train_run(const ExperimentConfig& cfg, const fs::path& run, RunScope& scope, const Log& log = quiet,
                      long log_every = 100) {
  fs::create_directories(run);
  write_snapshot(run, cfg);
  scope.add(kSnapshotFile);
  bool generated = false;
  const fs::path data = materialize_dataset(cfg.dataset.train_path, cfg.dataset.gen, cfg.dataset.train_size,
                                            cfg.train_data_seed(), run / "data" / "train", &generated);
  if (generated) scope.add("data/train");
  const auto ds = synth::load_dataset(data);
  scope.record().config_hash = config_hash(cfg);
  scope.record().dataset_hash = dataset_hash(data);
  scope.add("metrics.jsonl");
  const auto tc = cfg.effective_train();
  for (long i = 1; i <= tc.iterations; ++i)
    if (i == tc.iterations || (tc.checkpoint_every > 0 && i % tc.checkpoint_every == 0))
      scope.add(train::checkpoint_name(i));
  train::TrainOutputs io;
  io.run_dir = run;
  io.on_step = [&](const train::LossBreakdown& b) {
    if (log_every > 0 && ((b.iteration + 1) % log_every == 0 || b.iteration + 1 == tc.iterations))
      log("iter " + std::to_string(b.iteration + 1) + " " + train::metrics_line(b).dump());
  };
  train::train<float>(tc, cfg.model, ds.scenes, io);
}

struct LoadedRun {
  ExperimentConfig cfg;
  nn::Model<float> model;
};

inline LoadedRun load_run(const fs::path& run) {
  auto cfg = read_snapshot(run);
  const fs::path ck = run / train::checkpoint_name(cfg.train.iterations);
  if (!fs::exists(ck)) throw IoError("run has no final checkpoint: " + ck.string());
  const auto rec = train::load_checkpoint<float>(ck);
  LoadedRun lr{cfg, nn::Model<float>(rec.model_config.get<ModelConfig>())};
  train::restore_model(lr.model, rec);
  return lr;
}

// ---- inference cache ------------------------------------------------------

struct RunInference {
  ExperimentConfig cfg;
  std::vector<eval::GtInstance> gts;
  std::vector<eval::Detection> masks;
  std::vector<eval::Detection> priors;
  std::string dataset_hash;
};

// Test-set detections of a trained run. They are cached next to the run and
// reused while the test dataset is unchanged.
inline RunInference run_inference_cached(const fs::path& run, const std::string& data_override, RunScope& scope) {
  auto loaded = load_run(run);
  RunInference ri{loaded.cfg, {}, {}, {}, {}};
  const auto& c = ri.cfg;
  bool generated = false;
  const fs::path data = materialize_dataset(data_override.empty() ? c.dataset.test_path : data_override,
                                            c.dataset.gen, c.dataset.test_size, c.test_data_seed(),
                                            run / "data" / "test", &generated);
  if (generated) scope.add("data/test");
  ri.dataset_hash = dataset_hash(data);
  const auto ds = synth::load_dataset(data);
  ri.gts = eval::gts_from_scenes(ds.scenes);

  const nlohmann::json key{{"dataset_hash", ri.dataset_hash},
                           {"checkpoint_hash", sha1_hex(read_file(run / train::checkpoint_name(c.train.iterations)))}};
  const fs::path meta = run / "detections.meta.json";
  if (fs::exists(meta) && nlohmann::json::parse(read_file(meta)) == key) {
    ri.masks = eval::read_detections(run / "detections.jsonl");
    ri.priors = eval::read_detections(run / "priors.jsonl");
    return ri;
  }
  auto inf = eval::run_inference(loaded.model, ds.scenes, c.eval.batch_size, c.eval.prior_threshold);
  ri.masks = std::move(inf.masks);
  ri.priors = std::move(inf.priors);
  synth::write_text_atomically(scope.add("detections.jsonl"), eval::detections_to_jsonl(ri.masks));
  synth::write_text_atomically(scope.add("priors.jsonl"), eval::detections_to_jsonl(ri.priors));
  synth::write_text_atomically(scope.add("detections.meta.json"),
                               key.dump() + "\n");
  return ri;
}

inline std::set<int> known_classes(const ExperimentConfig& c) { return synth::id_range(c.model.num_classes); }

// ---- eval ----------------------------------------------------------------

inline nlohmann::json eval_run(const fs::path& run, const std::string& subset_spec, const std::string& data_override,
                               RunScope& scope) {
  const auto ri = run_inference_cached(run, data_override, scope);
  const auto& c = ri.cfg;
  const auto subset = resolve_subset(subset_spec, c.train.strong_ids, c.model.num_classes);
  const auto known = known_classes(c);
  nlohmann::json j{{"kind", "eval"},
                   {"variant", variant_name(c.train.variant)},
                   {"subset", subset_spec},
                   {"classes", subset},
                   {"strong_ids", c.train.strong_ids},
                   {"dataset_hash", ri.dataset_hash}};
  // An empty subset (no weak classes) has nothing to score.
  const bool none = subset.empty();
  j["mask"] = none || c.train.variant == Variant::cls_only
                  ? nlohmann::json(nullptr)
                  : eval::report_to_json(evaluate_mask_ap(ri.masks, ri.gts, subset, known));
  j["prior"] = none ? nlohmann::json(nullptr) : eval::report_to_json(evaluate_mask_ap(ri.priors, ri.gts, subset, known));
  synth::write_text_atomically(scope.add("eval_" + subset_label(subset_spec) + ".json"), j.dump(2) + "\n");
  scope.record().config_hash = config_hash(c);
  scope.record().dataset_hash = ri.dataset_hash;
  return j;
}

// ---- analyses --------------------------------------------------------------

inline nlohmann::json optional_report(const std::optional<eval::EvalReport>& r) {
  return r ? eval::report_to_json(*r) : nlohmann::json(nullptr);
}

inline nlohmann::json analyze_ambiguity(const fs::path& run, const std::string& subset_spec,
                                        const std::string& data_override, RunScope& scope) {
  const auto ri = run_inference_cached(run, data_override, scope);
  const auto& c = ri.cfg;
  if (c.train.variant == Variant::cls_only) throw ConfigError("analyze-ambiguity: a cls_only run has no masks");
  const auto subset = resolve_subset(subset_spec, c.train.strong_ids, c.model.num_classes);
  if (subset.empty()) throw ConfigError("analyze-ambiguity: subset '" + subset_spec + "' has no classes");
  const auto rep = eval::evaluate_by_ambiguity(ri.masks, ri.gts, subset, known_classes(c));
  std::size_t n_amb = 0, n_non = 0;
  for (const auto& g : ri.gts) {
    if (!subset.count(g.class_id)) continue;
    (rep.split.ambiguous.count(g.id) ? n_amb : n_non) += 1;
  }
  nlohmann::json j{{"kind", "ambiguity"},
                   {"variant", variant_name(c.train.variant)},
                   {"subset", subset_spec},
                   {"classes", subset},
                   {"iou_threshold", rep.split.threshold},
                   {"num_ambiguous", n_amb},
                   {"num_non_ambiguous", n_non},
                   {"ambiguous", optional_report(rep.ambiguous)},
                   {"non_ambiguous", optional_report(rep.non_ambiguous)},
                   {"dataset_hash", ri.dataset_hash}};
  synth::write_text_atomically(scope.add("eval_ambiguity.json"), j.dump(2) + "\n");
  scope.record().config_hash = config_hash(c);
  scope.record().dataset_hash = ri.dataset_hash;
  return j;
}

inline eval::OverlapAggregation parse_aggregation(const std::string& s) {
  if (s == "max") return eval::OverlapAggregation::max_iou;
  if (s == "mean") return eval::OverlapAggregation::mean_iou;
  throw ConfigError("aggregation must be max or mean, got '" + s + "'");
}

inline nlohmann::json analyze_overlap(const fs::path& run, const std::string& subset_spec,
                                      eval::OverlapAggregation agg, const std::string& data_override,
                                      RunScope& scope) {
  const auto ri = run_inference_cached(run, data_override, scope);
  const auto& c = ri.cfg;
  if (c.train.variant == Variant::cls_only) throw ConfigError("analyze-overlap: a cls_only run has no masks");
  const auto subset = resolve_subset(subset_spec, c.train.strong_ids, c.model.num_classes);
  if (subset.empty()) throw ConfigError("analyze-overlap: subset '" + subset_spec + "' has no classes");
  const auto rep = evaluate_mask_ap(ri.masks, ri.gts, subset, known_classes(c));
  const auto ov = eval::per_class_overlap(ri.gts, agg);
  std::vector<double> x, y;
  nlohmann::json points = nlohmann::json::array();
  for (const auto& [cls, ap] : rep.per_class_ap) {
    x.push_back(ov.at(cls));
    y.push_back(ap);
    points.push_back({{"class_id", cls}, {"overlap", ov.at(cls)}, {"ap", ap}});
  }
  nlohmann::json j{{"kind", "overlap_regression"},
                   {"variant", variant_name(c.train.variant)},
                   {"subset", subset_spec},
                   {"aggregation", eval::aggregation_name(agg)},
                   {"points", points},
                   {"dataset_hash", ri.dataset_hash}};
  try {
    j["regression"] = eval::regression_to_json(eval::ols_regression(x, y));
  } catch (const Error& e) {
    j["regression"] = nullptr;
    j["regression_error"] = e.what();
  }
  synth::write_text_atomically(scope.add("eval_overlap.json"), j.dump(2) + "\n");
  scope.record().config_hash = config_hash(c);
  scope.record().dataset_hash = ri.dataset_hash;
  return j;
}

// ---- multi-run experiments -------------------------------------------------

// Generates the shared train and test sets of one seed under `dir` and points
// the config at them.
inline ExperimentConfig with_shared_data(ExperimentConfig c, const fs::path& dir) {
  c.dataset.train_path = materialize_dataset(c.dataset.train_path, c.dataset.gen, c.dataset.train_size,
                                             c.train_data_seed(), dir / "train")
                             .string();
  c.dataset.test_path = materialize_dataset(c.dataset.test_path, c.dataset.gen, c.dataset.test_size,
                                            c.test_data_seed(), dir / "test")
                            .string();
  return c;
}

inline ExperimentConfig with_variant(ExperimentConfig c, Variant v) {
  c.train.variant = v;
  c.model.variant = v;
  return c;
}

// One train+eval run in its own directory with its own record.
inline void train_and_eval(const ExperimentConfig& c, const fs::path& run, const std::vector<std::string>& subsets,
                           const Log& log) {
  {
    RunScope s(run, "train");
    try {
      train_run(c, run, s, log);
    } catch (const std::exception& e) {
      s.fail(e.what());
      throw;
    }
    s.succeed();
  }
  RunScope s(run, "eval", "run_record_eval.json");
  try {
    for (const auto& sub : subsets) eval_run(run, sub, "", s);
  } catch (const std::exception& e) {
    s.fail(e.what());
    throw;
  }
  s.succeed();
}

inline nlohmann::json compare_priors(const ExperimentConfig& base, const fs::path& out, const Log& log = quiet) {
  const auto shared = with_shared_data(base, out / "data");
  nlohmann::json variants = nlohmann::json::object();
  for (Variant v : {Variant::cls_only, Variant::baseline, Variant::opmask}) {
    const auto c = with_variant(shared, v);
    const fs::path run = out / variant_name(v);
    log(std::string("compare-priors: training ") + variant_name(v));
    train_and_eval(c, run, {"all", "weak"}, log);
    const auto all = nlohmann::json::parse(read_file(run / "eval_all.json"));
    const auto weak = nlohmann::json::parse(read_file(run / "eval_weak.json"));
    variants[variant_name(v)] = {{"prior_all", all["prior"]}, {"prior_weak", weak["prior"]}, {"mask_weak", weak["mask"]}};
  }
  nlohmann::json j{{"kind", "prior_comparison"}, {"seed", base.seed}, {"variants", variants}};
  synth::write_text_atomically(out / "compare_priors.json", j.dump(2) + "\n");
  return j;
}

struct SweepOptions {
  std::vector<int> counts{2, 4, 6, 8};
  int seeds = 3;
  std::vector<Variant> variants{Variant::baseline, Variant::opmask};
  int jobs = 1;
};

inline std::set<int> sweep_strong_ids(int num_classes, int count, std::uint64_t seed) {
  return synth::make_random_split(synth::id_range(num_classes), count, derive_seed(seed, static_cast<std::uint64_t>(count)))
      .strong_ids;
}

inline nlohmann::json sweep_splits(const ExperimentConfig& base, const fs::path& out, const SweepOptions& opt,
                                   const Log& log = quiet) {
  if (opt.counts.empty() || opt.seeds < 1 || opt.jobs < 1) throw ConfigError("sweep-splits: need counts, seeds >= 1, jobs >= 1");
  for (int k : opt.counts)
    if (k < 1 || k > base.model.num_classes)
      throw ConfigError("sweep-splits: count " + std::to_string(k) + " outside 1.." + std::to_string(base.model.num_classes));
  struct Task {
    ExperimentConfig cfg;
    fs::path run;
  };
  std::vector<Task> tasks;
  for (int s = 0; s < opt.seeds; ++s) {
    auto seeded = base;
    seeded.seed = base.seed + static_cast<std::uint64_t>(s);
    seeded = with_shared_data(seeded, out / "data" / ("s" + std::to_string(seeded.seed)));
    for (Variant v : opt.variants)
      for (int k : opt.counts) {
        auto c = with_variant(seeded, v);
        c.train.strong_ids = sweep_strong_ids(c.model.num_classes, k, c.seed);
        tasks.push_back({c, out / variant_name(v) / ("k" + std::to_string(k) + "_s" + std::to_string(c.seed))});
      }
  }
  std::mutex mu;
  std::vector<std::string> failures;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < tasks.size();) {
      const auto& t = tasks[i];
      try {
        {
          std::lock_guard<std::mutex> lock(mu);
          log("sweep-splits: " + t.run.string());
        }
        train_and_eval(t.cfg, t.run, {"all", "weak"}, quiet);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mu);
        failures.push_back(t.run.string() + ": " + e.what());
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min<int>(opt.jobs, static_cast<int>(tasks.size())); ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end());
    std::string msg = "sweep-splits: " + std::to_string(failures.size()) + " run(s) failed";
    for (const auto& f : failures) msg += "\n  " + f;
    throw Error(msg);
  }

  auto ap_of = [](const nlohmann::json& report) -> nlohmann::json {
    return report.is_null() ? nlohmann::json(nullptr) : report["ap"];
  };
  auto mean_of = [](const std::vector<nlohmann::json>& v) -> nlohmann::json {
    double s = 0;
    int n = 0;
    for (const auto& x : v)
      if (x.is_number()) {
        s += x.get<double>();
        ++n;
      }
    return n ? nlohmann::json(s / n) : nlohmann::json(nullptr);
  };
  nlohmann::json variants = nlohmann::json::object();
  for (Variant v : opt.variants) {
    nlohmann::json series = nlohmann::json::array();
    for (int k : opt.counts) {
      std::vector<nlohmann::json> weak, all;
      nlohmann::json seeds = nlohmann::json::array();
      for (int s = 0; s < opt.seeds; ++s) {
        const auto seed = base.seed + static_cast<std::uint64_t>(s);
        const fs::path run = out / variant_name(v) / ("k" + std::to_string(k) + "_s" + std::to_string(seed));
        const auto ew = nlohmann::json::parse(read_file(run / "eval_weak.json"));
        const auto ea = nlohmann::json::parse(read_file(run / "eval_all.json"));
        weak.push_back(ap_of(ew["mask"]));
        all.push_back(ap_of(ea["mask"]));
        seeds.push_back({{"seed", seed}, {"strong_ids", ew["strong_ids"]}, {"weak_ap", weak.back()}, {"all_ap", all.back()}});
      }
      series.push_back({{"count", k}, {"runs", seeds}, {"weak_ap_mean", mean_of(weak)}, {"all_ap_mean", mean_of(all)}});
    }
    variants[variant_name(v)] = series;
  }
  nlohmann::json j{{"kind", "sweep"}, {"counts", opt.counts}, {"seeds", opt.seeds}, {"variants", variants}};
  synth::write_text_atomically(out / "sweep.json", j.dump(2) + "\n");
  return j;
}

}  // namespace opmask::cli
