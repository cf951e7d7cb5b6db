#include "msp/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "msp/augment.hpp"
#include "msp/error.hpp"
#include "msp/log.hpp"
#include "msp/rng.hpp"
#include "msp/synthetic.hpp"
#include "msp/text.hpp"

namespace msp {

std::string metrics_csv_header() {
  return "step,loss_total,loss_sc,loss_dsf,loss_color,loss_pointset,lr,seconds";
}

std::string metrics_csv_row(const StepMetrics& m) {
  auto opt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  std::string row = format_int(m.step);
  row += ',';
  row += format_double(m.loss_total);
  row += ',';
  row += opt(m.sc);
  row += ',';
  row += opt(m.dsf);
  row += ',';
  row += opt(m.color);
  row += ',';
  row += opt(m.pointset);
  row += ',';
  row += format_double(m.lr);
  row += ',';
  row += format_double(m.seconds);
  return row;
}

double cosine_lr(double lr0, int64_t step, int64_t total_steps) {
  require(total_steps >= 1, ErrorKind::contract, "cosine_lr needs total_steps >= 1");
  require(step >= 0 && step <= total_steps, ErrorKind::contract, "cosine_lr step out of range");
  return lr0 * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                     static_cast<double>(total_steps)));
}

namespace {

int64_t planned_steps(const RunConfig& cfg) {
  const int64_t per_epoch =
      (cfg.data_scenes + cfg.train_batch - 1) / cfg.train_batch;  // ceil
  int64_t total = per_epoch * cfg.train_epochs;
  if (cfg.train_max_steps > 0) total = std::min(total, cfg.train_max_steps);
  return total;
}

}  // namespace

TrainState init_training(const RunConfig& cfg) {
  cfg.validate();
  TrainState state;
  state.model = build_model(cfg, cfg.seed);
  state.opt.cfg = AdamWConfig{cfg.train_lr, cfg.train_beta1, cfg.train_beta2,
                              cfg.train_eps, cfg.train_weight_decay};
  state.total_steps = planned_steps(cfg);
  return state;
}

TrainState resume_training(const RunConfig& cfg, const Checkpoint& ckpt) {
  require(dump_config(cfg) == dump_config(ckpt.config), ErrorKind::incompatible_checkpoint,
          "checkpoint was produced under a different configuration");
  TrainState state = init_training(cfg);

  require(state.model.params.names() == ckpt.params.names(),
          ErrorKind::incompatible_checkpoint, "checkpoint parameter set differs");
  for (auto& [name, p] : state.model.params.entries) {
    const Tensor& src = ckpt.params.at(name);
    require(src.shape() == p.shape(), ErrorKind::incompatible_checkpoint,
            "shape mismatch for parameter '" + name + "'");
    p.values() = src.values();
  }
  if (!state.model.ema.shadow.entries.empty()) {
    require(state.model.ema.shadow.names() == ckpt.ema.names(),
            ErrorKind::incompatible_checkpoint, "checkpoint ema set differs");
    for (auto& [name, s] : state.model.ema.shadow.entries) {
      const Tensor& src = ckpt.ema.at(name);
      require(src.shape() == s.shape(), ErrorKind::incompatible_checkpoint,
              "shape mismatch for ema buffer '" + name + "'");
      s.values() = src.values();
    }
  }
  state.opt.m = ckpt.opt_m;
  state.opt.v = ckpt.opt_v;
  state.opt.step_count = ckpt.opt_step;
  state.step = ckpt.step;
  return state;
}

SyntheticSceneSpec scene_spec(const RunConfig& cfg, uint64_t seed) {
  SyntheticSceneSpec spec;
  spec.planes = cfg.scene_planes;
  spec.boxes = cfg.scene_boxes;
  spec.spheres = cfg.scene_spheres;
  spec.cylinders = cfg.scene_cylinders;
  spec.points_per_primitive = cfg.scene_points_per_primitive;
  spec.extent = cfg.scene_extent;
  spec.noise_sigma = cfg.scene_noise_sigma;
  spec.seed = seed;
  return spec;
}

std::vector<PointCloud> generate_training_scenes(const RunConfig& cfg) {
  std::vector<PointCloud> scenes;
  scenes.reserve(static_cast<size_t>(cfg.data_scenes));
  for (int i = 0; i < cfg.data_scenes; ++i)
    scenes.push_back(
        generate_scene(scene_spec(cfg, mix_seed(cfg.seed, "scene", static_cast<uint64_t>(i)))));
  return scenes;
}

StepMetrics train_one_step(TrainState& state, const std::vector<PointCloud>& scenes) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig& cfg = state.model.cfg;
  require(!scenes.empty(), ErrorKind::contract, "no training scenes");
  require(state.step < state.total_steps, ErrorKind::contract, "training already finished");

  const int64_t step = state.step;  // 0-based during execution
  const int batch = cfg.train_batch;
  const double inv_batch = 1.0 / static_cast<double>(batch);

  StepMetrics metrics;
  metrics.lr = cosine_lr(cfg.train_lr, step, state.total_steps);

  auto add_part = [&](std::optional<double>& dst, const std::optional<double>& src) {
    if (!src) return;
    dst = dst.value_or(0.0) + *src * inv_batch;
  };

  for (int b = 0; b < batch; ++b) {
    const size_t scene_index =
        static_cast<size_t>((step * batch + b) % static_cast<int64_t>(scenes.size()));
    const uint64_t ustep = static_cast<uint64_t>(step);

    PointCloud cloud = scenes[scene_index];
    {
      AugmentSpec aug;
      aug.jitter_sigma = cfg.augment_jitter_sigma;
      aug.seed = mix_seed(cfg.seed, "augment", ustep, scene_index);
      if (cfg.augment_flip) {
        Rng flips = derived_rng(cfg.seed, "augment-flips", ustep, scene_index);
        aug.flip_x = flips.bernoulli(0.5);
        aug.flip_y = flips.bernoulli(0.5);
      }
      aug.random_rotation = cfg.augment_rotate;
      cloud = augment(cloud, aug);
    }

    MaskSpec mask_spec{cfg.mask_ratio, cfg.mask_block,
                       mix_seed(cfg.seed, "mask", ustep, scene_index)};
    const MaskResult mask = apply_mask(cloud, mask_spec);

    Tape tape;
    const EncodeResult encoded = encode_remaining(&tape, state.model, cloud, mask);
    const DecodeResult decoded =
        decode_features(&tape, state.model, cloud, mask, encoded,
                        mix_seed(cfg.seed, "sa", ustep, scene_index));
    const HeadOutputs heads = apply_heads(&tape, state.model, decoded.feats);
    const TargetBundle targets =
        compute_targets(state.model, cloud, decoded.ids, cfg.threads);
    const LossResult loss = compute_loss(&tape, state.model, heads, targets);

    const double scene_total = loss.parts.total;
    require(std::isfinite(scene_total), ErrorKind::numeric,
            "loss diverged (non-finite) at step " + std::to_string(step + 1));

    metrics.loss_total += scene_total * inv_batch;
    add_part(metrics.sc, loss.parts.sc);
    add_part(metrics.dsf, loss.parts.dsf);
    add_part(metrics.color, loss.parts.color);
    add_part(metrics.pointset, loss.parts.pointset);

    const Tensor scaled = ops::scale(&tape, loss.total, inv_batch);
    tape.backward(scaled);
  }

  state.opt.cfg.lr = metrics.lr;
  state.opt.step(state.model.params);
  state.model.params.zero_grads();
  if (cfg.target_dsf) ema_update(state.model.ema, state.model.params);

  state.step += 1;
  metrics.step = state.step;
  metrics.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return metrics;
}

Checkpoint snapshot(const TrainState& state) {
  Checkpoint ckpt;
  ckpt.config = state.model.cfg;
  ckpt.step = state.step;
  ckpt.opt_step = state.opt.step_count;
  for (const auto& [name, p] : state.model.params.entries) {
    Tensor copy = Tensor::constant(p.values(), p.shape(), p.dtype());
    copy.set_requires_grad(true);
    ckpt.params.entries.emplace(name, std::move(copy));
  }
  for (const auto& [name, s] : state.model.ema.shadow.entries) {
    ckpt.ema.entries.emplace(name, Tensor::constant(s.values(), s.shape(), s.dtype()));
  }
  ckpt.opt_m = state.opt.m;
  ckpt.opt_v = state.opt.v;
  return ckpt;
}

PretrainOutcome pretrain(const RunConfig& cfg, const std::filesystem::path& out_dir,
                         const std::optional<std::filesystem::path>& resume_path) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(out_dir);

  TrainState state;
  if (resume_path) {
    state = resume_training(cfg, load_checkpoint(*resume_path));
    log_info("resumed from ", resume_path->string(), " at step ", state.step);
  } else {
    state = init_training(cfg);
  }

  const std::vector<PointCloud> scenes = generate_training_scenes(cfg);

  const fs::path metrics_path = out_dir / "metrics.csv";
  const bool append = resume_path && fs::exists(metrics_path);
  std::ofstream metrics(metrics_path,
                        append ? (std::ios::binary | std::ios::app) : std::ios::binary);
  require(metrics.good(), ErrorKind::io, "cannot write " + metrics_path.string());
  if (!append) metrics << metrics_csv_header() << '\n';

  log_info("training ", state.total_steps - state.step, " steps (", scenes.size(),
           " scenes, batch ", cfg.train_batch, ", arch ", cfg.model_arch, ")");

  while (state.step < state.total_steps) {
    const StepMetrics m = train_one_step(state, scenes);
    metrics << metrics_csv_row(m) << '\n';
    metrics.flush();
    if (cfg.train_checkpoint_every > 0 && m.step % cfg.train_checkpoint_every == 0 &&
        m.step < state.total_steps) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06lld.msp",
                    static_cast<long long>(m.step));
      save_checkpoint(snapshot(state), out_dir / name);
    }
    if (m.step % 25 == 0 || m.step == state.total_steps) {
      log_info("step ", m.step, "/", state.total_steps, " loss ", m.loss_total, " lr ", m.lr);
    }
  }

  PretrainOutcome outcome;
  outcome.final = snapshot(state);
  outcome.checkpoint_path = out_dir / "checkpoint_final.msp";
  outcome.metrics_path = metrics_path;
  save_checkpoint(outcome.final, outcome.checkpoint_path);
  return outcome;
}

}  // namespace msp
