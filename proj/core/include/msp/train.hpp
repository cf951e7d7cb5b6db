#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msp/checkpoint.hpp"
#include "msp/losses.hpp"
#include "msp/model.hpp"
#include "msp/synthetic.hpp"

namespace msp {

struct StepMetrics {
  int64_t step = 0;  // 1-based
  double loss_total = 0.0;
  std::optional<double> sc, dsf, color, pointset;
  double lr = 0.0;
  double seconds = 0.0;
};

// "step,loss_total,loss_sc,loss_dsf,loss_color,loss_pointset,lr,seconds";
// disabled targets leave their field empty.
std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);

// lr_t = lr0 * 0.5 * (1 + cos(pi * t / total)), t counted from 0.
double cosine_lr(double lr0, int64_t step, int64_t total_steps);

struct TrainState {
  MspModel model;
  AdamW opt;
  int64_t step = 0;  // completed optimizer steps
  int64_t total_steps = 0;
};

TrainState init_training(const RunConfig& cfg);

// Rebuilds the model from cfg and adopts the checkpoint's parameters and
// optimizer state. cfg must serialize identically to the stored config;
// any shape or name difference is an incompatible-checkpoint error.
TrainState resume_training(const RunConfig& cfg, const Checkpoint& ckpt);

// The configured scene recipe with an explicit seed, so training, leakage
// and probe scenes share geometry statistics but never a random stream.
SyntheticSceneSpec scene_spec(const RunConfig& cfg, uint64_t seed);

std::vector<PointCloud> generate_training_scenes(const RunConfig& cfg);

// One optimizer step over the next batch (scenes cycle in fixed order).
// All randomness (augmentation, masking, keypoints) is derived from
// (config seed, step index, scene index), so a resumed run replays the
// exact same draws. Gradients accumulate across the batch scaled by 1/B.
StepMetrics train_one_step(TrainState& state, const std::vector<PointCloud>& scenes);

Checkpoint snapshot(const TrainState& state);

struct PretrainOutcome {
  Checkpoint final;
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
};

// Full run: scene generation, (optional) resume, step loop with metrics.csv
// and periodic checkpoints under out_dir, final checkpoint_final.msp.
PretrainOutcome pretrain(const RunConfig& cfg, const std::filesystem::path& out_dir,
                         const std::optional<std::filesystem::path>& resume_path = {});

}  // namespace msp
