// opmask: experiment driver. Exit status 0 on success, 1 on usage or
// configuration errors, 2 on runtime failures.

#include <CLI11.hpp>

#include <iostream>

#include "opmask/cli/config.hpp"
#include "opmask/cli/pipeline.hpp"
#include "opmask/cli/plot.hpp"

using namespace opmask;
using namespace opmask::cli;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct UsageError : Error {
  using Error::Error;
};

void log_line(const std::string& s) { std::cerr << "[opmask] " << s << std::endl; }

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "experiment config (YAML, may use include:)")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override one key, e.g. train.iterations=200 (repeatable)");
  }

  ExperimentConfig load() const {
    LoadOptions o;
    if (!file.empty()) o.file = file;
    o.sets = sets;
    return load_config(o);
  }
};

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (int v : synth::parse_id_list(s)) out.push_back(v);
  return out;
}

// Runs one directory-producing command under a RunScope.
template <typename F>
void scoped(const fs::path& dir, const std::string& command, const std::string& record, F&& body) {
  fs::create_directories(dir);
  RunScope scope(dir, command, record);
  try {
    body(scope);
  } catch (const ConfigError&) {
    scope.fail("configuration error");
    throw;
  } catch (const std::exception& e) {
    scope.fail(e.what());
    throw;
  }
  scope.succeed();
}

void prepare_output(const fs::path& out, bool force) {
  if (fs::exists(out / kSnapshotFile) || fs::exists(out / "run_record.json")) {
    if (!force) throw UsageError("output directory " + out.string() + " already holds a run (use --force to replace it)");
    fs::remove_all(out);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OPMask desk-scale experiments"};
  app.require_subcommand(0, 1);
  bool dump_defaults = false;
  app.add_flag("--dump-defaults", dump_defaults, "print every config key with its default value and exit");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  ConfigFlags gen_cfg;
  gen_cfg.attach(gen);
  std::string gen_out, gen_split = "train";
  std::optional<int> gen_size;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--split", gen_split, "which configured dataset to draw: train or test")
      ->check(CLI::IsMember({"train", "test"}));
  gen->add_option("--size", gen_size, "number of images (default: from the config)");
  gen->add_option("--seed", gen_seed, "dataset seed (default: derived from the config seed)");

  // train
  auto* tr = app.add_subcommand("train", "train one variant");
  ConfigFlags tr_cfg;
  tr_cfg.attach(tr);
  std::string tr_out, tr_variant, tr_split, tr_data;
  std::optional<std::uint64_t> tr_seed;
  bool tr_force = false;
  long tr_log_every = 100;
  tr->add_option("--out", tr_out, "run directory (default: config output)");
  tr->add_option("--variant", tr_variant, "opmask, baseline or cls_only");
  tr->add_option("--split", tr_split, "strong classes, e.g. strong=0,1,2,3");
  tr->add_option("--seed", tr_seed, "experiment seed");
  tr->add_option("--data", tr_data, "training dataset directory");
  tr->add_option("--log-every", tr_log_every, "progress line every N iterations (0: silent)");
  tr->add_flag("--force", tr_force, "replace an existing run directory");

  // eval and the analyses
  std::string ev_run, ev_subset, ev_data;
  auto* ev = app.add_subcommand("eval", "mask AP of a trained run");
  ev->add_option("--run", ev_run, "run directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--subset", ev_subset, "weak, strong, all or class ids (default: config eval.subset)");
  ev->add_option("--data", ev_data, "test dataset directory");

  std::string am_run, am_subset = "weak", am_data;
  auto* am = app.add_subcommand("analyze-ambiguity", "AP on ambiguous vs non-ambiguous instances");
  am->add_option("--run", am_run, "run directory")->required()->check(CLI::ExistingDirectory);
  am->add_option("--subset", am_subset, "class subset");
  am->add_option("--data", am_data, "test dataset directory");

  std::string ov_run, ov_subset = "weak", ov_data, ov_agg = "max";
  auto* ov = app.add_subcommand("analyze-overlap", "per-class overlap vs AP regression");
  ov->add_option("--run", ov_run, "run directory")->required()->check(CLI::ExistingDirectory);
  ov->add_option("--subset", ov_subset, "class subset");
  ov->add_option("--aggregation", ov_agg, "per-instance overlap: mean or max")->check(CLI::IsMember({"mean", "max"}));
  ov->add_option("--data", ov_data, "test dataset directory");

  // multi-run experiments
  auto* cp = app.add_subcommand("compare-priors", "train cls_only, baseline and opmask; score each prior as a mask");
  ConfigFlags cp_cfg;
  cp_cfg.attach(cp);
  std::string cp_out;
  std::optional<std::uint64_t> cp_seed;
  bool cp_force = false;
  cp->add_option("--out", cp_out, "output directory")->required();
  cp->add_option("--seed", cp_seed, "experiment seed");
  cp->add_flag("--force", cp_force, "replace an existing output directory");

  auto* sw = app.add_subcommand("sweep-splits", "train+eval for several strong-class counts and seeds");
  ConfigFlags sw_cfg;
  sw_cfg.attach(sw);
  std::string sw_out, sw_counts = "2,4,6,8", sw_variants = "baseline,opmask";
  int sw_seeds = 3, sw_jobs = 1;
  bool sw_force = false;
  sw->add_option("--out", sw_out, "output directory")->required();
  sw->add_option("--counts", sw_counts, "strong-class counts");
  sw->add_option("--seeds", sw_seeds, "number of seeds, counting up from the config seed")->check(CLI::PositiveNumber);
  sw->add_option("--variants", sw_variants, "comma-separated variants");
  sw->add_option("--jobs", sw_jobs, "concurrent runs")->check(CLI::PositiveNumber);
  sw->add_flag("--force", sw_force, "replace an existing output directory");

  auto* pl = app.add_subcommand("plot", "SVG figures from analysis JSON files");
  std::vector<std::string> pl_inputs;
  std::string pl_out;
  pl->add_option("inputs", pl_inputs, "analysis JSON files (a file may hold a list)")->check(CLI::ExistingFile);
  pl->add_option("--out", pl_out, "figure directory (default: figures/ next to the first input)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? 0 : kUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e) == 0 ? 0 : kUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (dump_defaults) {
    std::cout << to_yaml(to_json_tree(ExperimentConfig{}));
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (*gen) {
      const auto cfg = gen_cfg.load();
      const bool test = gen_split == "test";
      const int size = gen_size.value_or(test ? cfg.dataset.test_size : cfg.dataset.train_size);
      const auto seed = gen_seed.value_or(test ? cfg.test_data_seed() : cfg.train_data_seed());
      scoped(gen_out, "gen-data", "run_record.json", [&](RunScope& s) { gen_data(cfg, gen_out, size, seed, s); });
      log_line("wrote " + std::to_string(size) + " images to " + gen_out);
    } else if (*tr) {
      auto cfg = tr_cfg.load();
      if (!tr_variant.empty()) cfg.train.variant = cfg.model.variant = parse_variant(tr_variant);
      if (!tr_split.empty()) {
        const auto eq = tr_split.find('=');
        if (eq != std::string::npos && tr_split.substr(0, eq) != "strong")
          throw UsageError("--split expects strong=<ids>, got '" + tr_split + "'");
        cfg.train.strong_ids = synth::parse_id_list(eq == std::string::npos ? tr_split : tr_split.substr(eq + 1));
      }
      if (tr_seed) cfg.seed = *tr_seed;
      if (!tr_data.empty()) cfg.dataset.train_path = tr_data;
      if (!tr_out.empty()) cfg.output = tr_out;
      cfg.validate();
      const fs::path out = cfg.output;
      prepare_output(out, tr_force);
      scoped(out, "train", "run_record.json", [&](RunScope& s) { train_run(cfg, out, s, log_line, tr_log_every); });
      log_line("run written to " + out.string());
    } else if (*ev) {
      const std::string subset = ev_subset.empty() ? read_snapshot(ev_run).eval.subset : ev_subset;
      scoped(ev_run, "eval", "run_record_eval_" + subset_label(subset) + ".json", [&](RunScope& s) {
        const auto j = eval_run(ev_run, subset, ev_data, s);
        std::cout << j.dump(2) << "\n";
      });
    } else if (*am) {
      scoped(am_run, "analyze-ambiguity", "run_record_ambiguity.json", [&](RunScope& s) {
        std::cout << analyze_ambiguity(am_run, am_subset, am_data, s).dump(2) << "\n";
      });
    } else if (*ov) {
      scoped(ov_run, "analyze-overlap", "run_record_overlap.json", [&](RunScope& s) {
        std::cout << analyze_overlap(ov_run, ov_subset, parse_aggregation(ov_agg), ov_data, s).dump(2) << "\n";
      });
    } else if (*cp) {
      auto cfg = cp_cfg.load();
      if (cp_seed) cfg.seed = *cp_seed;
      cfg.validate();
      prepare_output(cp_out, cp_force);
      scoped(cp_out, "compare-priors", "run_record.json", [&](RunScope& s) {
        s.record().config_hash = config_hash(cfg);
        s.add("compare_priors.json");
        for (const char* v : {"cls_only", "baseline", "opmask"}) s.add(v);
        s.add("data");
        const auto j = compare_priors(cfg, cp_out, log_line);
        s.record().dataset_hash = dataset_hash(fs::path(cp_out) / "data" / "train");
        std::cout << j.dump(2) << "\n";
      });
    } else if (*sw) {
      auto cfg = sw_cfg.load();
      SweepOptions opt;
      opt.counts = parse_int_list(sw_counts);
      opt.seeds = sw_seeds;
      opt.jobs = sw_jobs;
      opt.variants.clear();
      std::stringstream ss(sw_variants);
      for (std::string v; std::getline(ss, v, ',');)
        if (!v.empty()) opt.variants.push_back(parse_variant(v));
      if (opt.variants.empty()) throw UsageError("--variants is empty");
      prepare_output(sw_out, sw_force);
      scoped(sw_out, "sweep-splits", "run_record.json", [&](RunScope& s) {
        s.record().config_hash = config_hash(cfg);
        s.add("sweep.json");
        s.add("data");
        for (Variant v : opt.variants) s.add(variant_name(v));
        const auto j = sweep_splits(cfg, sw_out, opt, log_line);
        s.record().dataset_hash = dataset_hash(fs::path(sw_out) / "data" / ("s" + std::to_string(cfg.seed)) / "train");
        std::cout << j.dump(2) << "\n";
      });
    } else if (*pl) {
      std::vector<PlotInput> inputs;
      for (const auto& f : pl_inputs) {
        nlohmann::json doc;
        try {
          doc = nlohmann::json::parse(read_file(f));
        } catch (const nlohmann::json::exception& e) {
          throw SchemaError(f + ": not valid JSON: " + e.what());
        }
        if (doc.is_array() && doc.empty()) continue;
        inputs.push_back({f, std::move(doc)});
      }
      if (inputs.empty()) {
        log_line("warning: no analyses to plot; nothing written");
        return 0;
      }
      const fs::path out = pl_out.empty() ? fs::path(pl_inputs.front()).parent_path() / "figures" : fs::path(pl_out);
      for (const auto& name : emit_plots(inputs, out)) log_line("wrote " + (out / name).string());
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
    return kUsage;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return 0;
}
