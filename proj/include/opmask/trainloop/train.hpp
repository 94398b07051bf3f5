#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opmask/core/error.hpp"
#include "opmask/core/rng.hpp"
#include "opmask/opmodel/config.hpp"
#include "opmask/opmodel/model.hpp"
#include "opmask/synthdata/class_split.hpp"
#include "opmask/synthdata/scene.hpp"
#include "opmask/trainloop/checkpoint.hpp"
#include "opmask/trainloop/losses.hpp"
#include "opmask/trainloop/optim.hpp"
#include "opmask/trainloop/proposals.hpp"
#include "opmask/trainloop/targets.hpp"

namespace opmask::train {

// Learning rate and warmup follow the linear scaling rule from a reference
// schedule of lr 0.02 at 16 images per batch with 1000 warmup iterations.
struct TrainConfig {
  double base_lr = 0.01;
  long warmup = 200;
  long iterations = 3000;
  double momentum = 0.9;
  int batch_size = 8;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  Variant variant = Variant::opmask;
  std::set<int> strong_ids{0, 1, 2, 3};
  JitterConfig jitter;
  long checkpoint_every = 0;  // 0: only the final checkpoint

  void validate() const {
    if (!(base_lr > 0)) throw ConfigError("train: base_lr must be > 0");
    if (iterations < 1) throw ConfigError("train: iterations must be >= 1");
    if (warmup < 0 || warmup > iterations) throw ConfigError("train: warmup must lie in [0, iterations]");
    if (!(clip_norm > 0)) throw ConfigError("train: clip_norm must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum must lie in [0, 1)");
    if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"base_lr", c.base_lr},         {"warmup", c.warmup},
                     {"iterations", c.iterations},   {"momentum", c.momentum},
                     {"batch_size", c.batch_size},   {"clip_norm", c.clip_norm},
                     {"seed", c.seed},               {"variant", variant_name(c.variant)},
                     {"strong_ids", c.strong_ids},   {"jitter", c.jitter},
                     {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.base_lr = j.value("base_lr", d.base_lr);
  c.warmup = j.value("warmup", d.warmup);
  c.iterations = j.value("iterations", d.iterations);
  c.momentum = j.value("momentum", d.momentum);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.seed = j.value("seed", d.seed);
  c.variant = parse_variant(j.value("variant", std::string(variant_name(d.variant))));
  c.strong_ids = j.value("strong_ids", d.strong_ids);
  c.jitter = j.value("jitter", d.jitter);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
}

inline nlohmann::json metrics_line(const LossBreakdown& b) {
  return nlohmann::json{{"iter", b.iteration}, {"lr", b.lr},       {"l_cls", b.l_cls},
                        {"l_box", b.l_box},    {"l_mask", b.l_mask}, {"total", b.total},
                        {"grad_norm_pre", b.grad_norm_pre}, {"grad_norm_post", b.grad_norm_post}};
}

// Builds the flattened RoI batch for a set of scenes: proposals, matching,
// mask targets and supervision flags.
inline TrainBatch build_batch(const std::vector<const synth::Scene*>& scenes, const synth::ClassSplit& split,
                              const JitterConfig& jitter, int num_classes, int mask_out, Rng& rng) {
  TrainBatch batch;
  for (int b = 0; b < static_cast<int>(scenes.size()); ++b) {
    const auto& scene = *scenes[static_cast<std::size_t>(b)];
    RoIBatch rb = sample_proposals(scene, jitter, num_classes, rng);
    make_mask_targets(scene, split, rb, mask_out);
    batch.append(b, rb);
  }
  return batch;
}

// One optimization step on a prepared batch. Throws NumericError if the loss
// or the gradient norm is not finite; parameters are untouched in that case.
template <typename T>
inline LossBreakdown train_step(nn::Model<T>& model, SgdMomentum<T>& opt, const Tensor<T>& images,
                                const TrainBatch& batch, long iter, const TrainConfig& cfg) {
  const auto& mc = model.config();
  const bool with_mask = mc.has_mask_head();
  const auto sel = batch.mask_selection();
  auto out = model.forward(images, batch.rois, nn::Mode::train, with_mask ? &sel : nullptr);
  auto g = compute_losses(out, batch, mc.num_classes, with_mask);
  LossBreakdown b = g.losses;
  b.iteration = iter;
  b.lr = learning_rate(cfg.base_lr, iter, cfg.warmup);
  if (!std::isfinite(b.total))
    throw NumericError("non-finite loss at iteration " + std::to_string(iter) + ": " + metrics_line(b).dump());
  model.zero_grad();
  model.backward(g.d_cls, g.d_deltas, g.d_mask);
  const auto params = model.params();
  b.grad_norm_pre = clip_grad_norm(params, cfg.clip_norm);
  b.grad_norm_post = global_grad_norm(params);
  if (!std::isfinite(b.grad_norm_pre))
    throw NumericError("non-finite gradient at iteration " + std::to_string(iter) + ": " + metrics_line(b).dump());
  opt.step(params, b.lr);
  return b;
}

template <typename T>
struct TrainResult {
  nn::Model<T> model;
  CheckpointRecord<T> checkpoint;
  LossBreakdown last;
};

struct TrainOutputs {
  std::optional<std::filesystem::path> run_dir;  // metrics.jsonl and ckpt_{iter}.bin go here
  std::function<void(const LossBreakdown&)> on_step;
};

inline std::string checkpoint_name(long iter) { return "ckpt_" + std::to_string(iter) + ".bin"; }

template <typename T>
inline CheckpointRecord<T> make_checkpoint(nn::Model<T>& model, const SgdMomentum<T>& opt, long iteration,
                                           const TrainConfig& cfg) {
  auto rec = snapshot_model(model);
  rec.iteration = iteration;
  rec.root_seed = cfg.seed;
  rec.train_config = cfg;
  rec.momentum = opt.state();
  return rec;
}

// Trains one model. The model's variant comes from `cfg`; its init seed and
// all sampling randomness derive from cfg.seed.
template <typename T>
inline TrainResult<T> train(const TrainConfig& cfg, ModelConfig model_cfg, const std::vector<synth::Scene>& scenes,
                            const TrainOutputs& io = {}) {
  cfg.validate();
  if (scenes.empty()) throw ConfigError("train: empty dataset");
  model_cfg.variant = cfg.variant;
  model_cfg.init_seed = derive_seed(cfg.seed, 0);
  const auto split = synth::make_class_split(synth::id_range(model_cfg.num_classes), cfg.strong_ids);
  for (const auto& s : scenes)
    for (const auto& inst : s.instances)
      if (inst.class_id < 0 || inst.class_id >= model_cfg.num_classes)
        throw ConfigError("train: dataset class id " + std::to_string(inst.class_id) + " outside the model's " +
                          std::to_string(model_cfg.num_classes) + " classes");

  TrainResult<T> res{nn::Model<T>(model_cfg), {}, {}};
  auto& model = res.model;
  SgdMomentum<T> opt(cfg.momentum);
  Rng rng(derive_seed(cfg.seed, 1));

  std::ofstream metrics;
  if (io.run_dir) {
    std::filesystem::create_directories(*io.run_dir);
    metrics.open(*io.run_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics in " + io.run_dir->string());
  }

  std::vector<std::size_t> order(scenes.size());
  std::size_t cursor = order.size();
  for (long iter = 0; iter < cfg.iterations; ++iter) {
    std::vector<const synth::Scene*> picked;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      picked.push_back(&scenes[order[cursor++]]);
    }
    const auto batch = build_batch(picked, split, cfg.jitter, model_cfg.num_classes, model_cfg.mask_out(), rng);
    std::vector<const Image*> imgs;
    for (const auto* s : picked) imgs.push_back(&s->image);
    const auto images = nn::images_to_tensor<T>(imgs);

    res.last = train_step(model, opt, images, batch, iter, cfg);
    if (metrics.is_open()) {
      metrics << metrics_line(res.last).dump() << '\n';
      metrics.flush();
    }
    if (io.on_step) io.on_step(res.last);
    const bool last = iter + 1 == cfg.iterations;
    if (io.run_dir && (last || (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0)))
      save_checkpoint(*io.run_dir / checkpoint_name(iter + 1), make_checkpoint(model, opt, iter + 1, cfg));
  }
  res.checkpoint = make_checkpoint(model, opt, cfg.iterations, cfg);
  return res;
}

}  // namespace opmask::train
