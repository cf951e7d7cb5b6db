#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msp/shape_context.hpp"
#include "msp/tensor.hpp"

namespace msp {

// Complete run configuration, flat with dotted key names. Defaults are the
// "desk" profile: small enough to train on a laptop while exercising every
// code path. The "paper" profile swaps in the full-size model constants.
struct RunConfig {
  std::string profile = "desk";
  uint64_t seed = 0;
  int threads = 1;
  std::string precision = "f64";  // f64 | f32

  int data_scenes = 8;

  int scene_planes = 2;
  int scene_boxes = 2;
  int scene_spheres = 2;
  int scene_cylinders = 2;
  int scene_points_per_primitive = 160;
  double scene_extent = 4.0;
  double scene_noise_sigma = 0.005;

  double augment_jitter_sigma = 0.002;
  bool augment_flip = true;
  bool augment_rotate = true;

  double mask_ratio = 0.6;
  double mask_block = 0.3;

  double sc_radius = 0.15;
  double sc_xi = 0.3;
  std::string sc_partitions = "2x4x3,4x8x5";

  std::string model_arch = "sa";  // ca | ca_pp | sa
  int model_width = 64;
  int model_heads = 4;
  int model_blocks = 2;
  int model_encoder_blocks = 2;
  int model_k = 32;
  int model_keypoints = 512;
  double model_ln_eps = 1e-5;

  bool target_sc = true;
  bool target_dsf = true;
  bool target_color = true;
  bool target_pointset = false;
  double target_sc_weight = 1.0;
  double target_dsf_weight = 1.0;
  double target_color_weight = 1.0;
  double target_pointset_weight = 1.0;

  double pointset_radius = 0.15;
  int pointset_k = 200;

  double ema_decay = 0.999;

  double train_lr = 1e-3;
  double train_weight_decay = 0.1;
  double train_beta1 = 0.9;
  double train_beta2 = 0.999;
  double train_eps = 1e-8;
  int train_epochs = 75;
  int train_batch = 2;
  int64_t train_max_steps = 0;  // 0 = no cap
  int train_checkpoint_every = 100;

  int probe_scenes = 12;
  int probe_train_scenes = 4;
  int probe_steps = 200;
  double probe_lr = 1e-2;
  int probe_seeds = 3;
  double probe_margin = 3.0;  // accuracy points

  std::string leakage_fractions = "1,0.25,0.05";
  int leakage_seeds = 5;
  int leakage_scenes = 2;
  double leakage_margin = 0.05;

  Dtype dtype() const;
  std::vector<ScPartition> partitions() const;
  std::vector<double> leakage_fraction_list() const;

  // Cross-field sanity (width divisible by heads, ratio range, ...).
  void validate() const;
};

// Known profiles: "desk" (the defaults) and "paper". Applying a profile
// resets the keys it owns; explicitly set keys later win.
void apply_profile(RunConfig& cfg, const std::string& name);

// "key = value" lines, '#' comments. A `profile` key is honored first
// (wherever it appears), then the remaining keys apply in file order.
// Unknown keys and malformed values are parse errors naming the offender.
// ignore_profile drops the file's profile key, for when a command-line
// --profile flag has already decided the baseline.
RunConfig parse_config_text(const std::string& text, const RunConfig& base,
                            const std::string& origin = "<config>",
                            bool ignore_profile = false);
RunConfig load_config_file(const std::filesystem::path& path, const RunConfig& base,
                           bool ignore_profile = false);

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value,
                    const std::string& origin = "<set>");

// Canonical serialization: every key in registry order, values formatted
// shortest-round-trip. parse(dump(c)) == c and dump is byte-stable.
std::string dump_config(const RunConfig& cfg);

// One "key<TAB>default<TAB>description" line per key, for --help output.
std::string describe_config_keys();

}  // namespace msp
