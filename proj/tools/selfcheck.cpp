#include "selfcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "msp/checkpoint.hpp"
#include "msp/error.hpp"
#include "msp/grad_check.hpp"
#include "msp/layers.hpp"
#include "msp/losses.hpp"
#include "msp/masking.hpp"
#include "msp/model.hpp"
#include "msp/rng.hpp"
#include "msp/shape_context.hpp"
#include "msp/targets.hpp"
#include "msp/train.hpp"

namespace fs = std::filesystem;

namespace msp {
namespace {

struct CheckRunner {
  int failures = 0;

  template <class F>
  void run(const char* name, F&& f) {
    try {
      f();
      std::cout << "[ok] " << name << "\n";
    } catch (const std::exception& e) {
      ++failures;
      std::cout << "[FAIL] " << name << ": " << e.what() << "\n";
    }
  }
};

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

void check_close(double a, double b, double tol, const std::string& what) {
  check(std::abs(a - b) <= tol,
        what + ": " + std::to_string(a) + " vs " + std::to_string(b));
}

RunConfig tiny_cfg() {
  RunConfig c;
  c.scene_planes = c.scene_boxes = c.scene_spheres = c.scene_cylinders = 1;
  c.scene_points_per_primitive = 12;
  c.model_width = 8;
  c.model_heads = 2;
  c.model_blocks = 1;
  c.model_encoder_blocks = 1;
  c.model_k = 4;
  c.model_keypoints = 24;
  c.target_sc = true;
  c.target_dsf = false;
  c.target_color = false;
  c.target_pointset = false;
  c.sc_partitions = "2x2x2";
  c.data_scenes = 2;
  c.train_epochs = 1;
  c.train_batch = 1;
  c.validate();
  return c;
}

std::vector<std::pair<std::string, Tensor>> all_params(const ParamStore& store) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, t] : store.entries) out.emplace_back(name, t);
  return out;
}

Tensor random_constant(Rng& rng, std::vector<int64_t> shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = rng.normal();
  return Tensor::constant(std::move(v), std::move(shape));
}

Tensor random_param(Rng& rng, std::vector<int64_t> shape) {
  Tensor t = random_constant(rng, std::move(shape));
  t.set_requires_grad(true);
  return t;
}

void check_grad(const GradCheckReport& r) {
  check(r.pass, "max rel err " + std::to_string(r.max_rel_err) + " at " + r.worst);
}

void descriptor_oracle_check(const RunConfig& cfg) {
  const std::vector<ScPartition> parts = cfg.partitions();
  for (int s = 0; s < 3; ++s) {
    const PointCloud cloud = generate_scene(
        scene_spec(cfg, mix_seed(cfg.seed, "selfcheck-scene", static_cast<uint64_t>(s))));
    Rng pick(mix_seed(cfg.seed, "selfcheck-centers", static_cast<uint64_t>(s)));
    std::vector<Vec3> centers;
    for (int i = 0; i < 50; ++i)
      centers.push_back(cloud.positions[pick.uniform_int(cloud.size())]);
    const ScMatrix m = multiscale_shape_context(centers, cloud.positions, parts, cfg.threads);
    for (size_t i = 0; i < centers.size(); ++i) {
      std::vector<uint8_t> naive;
      for (const ScPartition& p : parts) {
        const std::vector<uint8_t> one = shape_context(centers[i], cloud.positions, p);
        naive.insert(naive.end(), one.begin(), one.end());
      }
      check(static_cast<int>(naive.size()) == m.row_bits, "descriptor width mismatch");
      check(std::memcmp(naive.data(), m.row(i), naive.size()) == 0,
            "descriptor differs from exhaustive oracle");
    }
  }
}

void masking_check(const RunConfig& cfg) {
  const PointCloud cloud =
      generate_scene(scene_spec(cfg, mix_seed(cfg.seed, "selfcheck-mask-scene")));
  const BlockGrid grid = build_block_grid(cloud, cfg.mask_block);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const MaskResult m = apply_mask(cloud, MaskSpec{cfg.mask_ratio, cfg.mask_block, seed});
    check(m.masked_blocks.size() == masked_block_count(cfg.mask_ratio, grid.block_count()),
          "masked block count is not round(r*B)");
    check(m.masked_idx.size() + m.remaining_idx.size() == cloud.size(),
          "mask partition sizes do not sum");
    std::vector<int> merged(m.masked_idx);
    merged.insert(merged.end(), m.remaining_idx.begin(), m.remaining_idx.end());
    std::sort(merged.begin(), merged.end());
    for (size_t i = 0; i < merged.size(); ++i)
      check(merged[i] == static_cast<int>(i), "mask partition is not disjoint and complete");
  }
}

void ema_check() {
  ParamStore online;
  online.add("encoder.x", Tensor::zeros({1}));
  EmaTracker tracker;
  tracker.decay = 0.999;
  tracker.init(online, "encoder.");
  online.at("encoder.x").values()[0] = 1.0;
  for (int i = 0; i < 100; ++i) ema_update(tracker, online);
  const double expect = 1.0 - std::pow(0.999, 100);
  check_close(tracker.shadow.at("encoder.x").values()[0], expect, 1e-12, "ema after 100 updates");
}

void loss_unit_check() {
  {
    Tensor logits = Tensor::constant({0.0}, {1, 1});
    Tensor target = Tensor::constant({1.0}, {1, 1});
    check_close(ops::bce_with_logits_mean(nullptr, logits, target).value(), std::log(2.0),
                1e-9, "bce(0, 1)");
  }
  const std::vector<uint8_t> one{1};
  Tensor ex = Tensor::constant({1.0, 0.0, 0.0}, {1, 3});
  check_close(ops::cosine_row_loss(nullptr, ex, Tensor::constant({1.0, 0.0, 0.0}, {1, 3}), one)
                  .value(),
              0.0, 1e-9, "cosine identical");
  check_close(ops::cosine_row_loss(nullptr, ex, Tensor::constant({0.0, 1.0, 0.0}, {1, 3}), one)
                  .value(),
              1.0, 1e-9, "cosine orthogonal");
  check_close(ops::cosine_row_loss(nullptr, ex, Tensor::constant({-1.0, 0.0, 0.0}, {1, 3}), one)
                  .value(),
              2.0, 1e-9, "cosine opposite");
  {
    Tensor pred = Tensor::constant({0.0, 0.0, 0.0}, {1, 3});
    const std::vector<std::vector<Vec3>> targets{{Vec3{1.0, 0.0, 0.0}}};
    check_close(ops::chamfer_row_loss(nullptr, pred, targets, one).value(), 2.0, 1e-9,
                "chamfer single point");
    check_close(chamfer_distance({Vec3{0, 0, 0}}, {Vec3{1, 0, 0}}), 2.0, 1e-9,
                "chamfer oracle single point");
  }
}

void layer_grad_checks() {
  {
    Rng rng(101);
    Tensor x = random_param(rng, {2, 5});
    Tensor gain = random_param(rng, {5});
    Tensor bias = random_param(rng, {5});
    check_grad(grad_check(
        [&](Tape* t) { return ops::mean_all(t, ops::layer_norm(t, x, gain, bias, 1e-5)); },
        {{"x", x}, {"gain", gain}, {"bias", bias}}));
  }
  {
    Rng rng(102);
    Tensor a = random_param(rng, {2, 3});
    Tensor b = random_param(rng, {3, 4});
    check_grad(grad_check(
        [&](Tape* t) {
          return ops::mean_all(t, ops::softmax_lastdim(t, ops::matmul(t, a, b)));
        },
        {{"a", a}, {"b", b}}));
  }
  {
    Rng rng(103);
    std::vector<Vec3> pos;
    for (int i = 0; i < 6; ++i)
      pos.push_back(Vec3{rng.uniform(), rng.uniform(), rng.uniform()});
    const KnnTable table = knn_search(pos, pos, 3);
    ParamStore store;
    add_attention_block(store, "blk.", 8, 104, Dtype::f64);
    const AttentionBlockRef ref = attention_block_ref(store, "blk.");
    Tensor x = random_constant(rng, {6, 8});
    check_grad(grad_check(
        [&](Tape* t) {
          return ops::mean_all(t,
                               attention_block_forward(t, ref, x, x, pos, pos, table, 2, 1e-5));
        },
        all_params(store)));
  }
  {
    Rng rng(105);
    Tensor logits = random_param(rng, {2, 3});
    Tensor targets = Tensor::constant({1, 0, 1, 0, 1, 0}, {2, 3});
    check_grad(grad_check(
        [&](Tape* t) { return ops::bce_with_logits_mean(t, logits, targets); },
        {{"logits", logits}}));
  }
  {
    Rng rng(106);
    Tensor pred = random_param(rng, {3, 4});
    std::vector<double> tv(12);
    for (int r = 0; r < 3; ++r) {
      double n2 = 0.0;
      for (int c = 0; c < 4; ++c) {
        tv[r * 4 + c] = rng.normal();
        n2 += tv[r * 4 + c] * tv[r * 4 + c];
      }
      for (int c = 0; c < 4; ++c) tv[r * 4 + c] /= std::sqrt(n2);
    }
    Tensor unit = Tensor::constant(tv, {3, 4});
    const std::vector<uint8_t> include{1, 0, 1};
    check_grad(grad_check(
        [&](Tape* t) { return ops::cosine_row_loss(t, pred, unit, include); }, {{"pred", pred}}));
  }
  {
    Rng rng(107);
    Tensor pred = random_param(rng, {2, 6});
    const std::vector<std::vector<Vec3>> targets{
        {Vec3{0.1, 0.0, -0.2}, Vec3{0.0, 0.3, 0.1}, Vec3{-0.2, 0.1, 0.0}},
        {Vec3{0.2, -0.1, 0.1}},
    };
    const std::vector<uint8_t> include{1, 1};
    check_grad(grad_check(
        [&](Tape* t) { return ops::chamfer_row_loss(t, pred, targets, include); },
        {{"pred", pred}}));
  }
  {
    Rng rng(108);
    Tensor logits = random_param(rng, {3, 4});
    const std::vector<int> labels{0, 2, 3};
    check_grad(grad_check(
        [&](Tape* t) { return ops::softmax_xent_mean(t, logits, labels); }, {{"logits", logits}}));
  }
}

void end_to_end_grad_check() {
  const RunConfig cfg = tiny_cfg();
  MspModel model = build_model(cfg, cfg.seed);
  const PointCloud cloud = generate_scene(scene_spec(cfg, 9));
  const MaskResult mask = apply_mask(cloud, MaskSpec{cfg.mask_ratio, cfg.mask_block, 5});
  const uint64_t step_seed = 77;

  const DecodeResult probe_ids = decode_features(
      nullptr, model, cloud, mask, encode_remaining(nullptr, model, cloud, mask), step_seed);
  const TargetBundle targets = compute_targets(model, cloud, probe_ids.ids, 1);

  check_grad(grad_check(
      [&](Tape* t) {
        const EncodeResult enc = encode_remaining(t, model, cloud, mask);
        const DecodeResult dec = decode_features(t, model, cloud, mask, enc, step_seed);
        const HeadOutputs heads = apply_heads(t, model, dec.feats);
        return compute_loss(t, model, heads, targets).total;
      },
      all_params(model.params)));
}

void checkpoint_check(const fs::path& dir) {
  const RunConfig cfg = tiny_cfg();
  TrainState state = init_training(cfg);
  const Checkpoint ckpt = snapshot(state);

  const fs::path a = dir / "selfcheck_a.msp";
  const fs::path b = dir / "selfcheck_b.msp";
  save_checkpoint(ckpt, a);
  const Checkpoint loaded = load_checkpoint(a);
  save_checkpoint(loaded, b);

  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  check(sa.str() == sb.str() && !sa.str().empty(), "save/load/save is not byte-identical");
}

void rng_check() {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i)
    check(a.uniform() == b.uniform(), "same-seed streams diverged");
  check(mix_seed(0, "a") != mix_seed(0, "b"), "stream tags collide");
  Rng c(5);
  double first = c.uniform();
  check(first >= 0.0 && first < 1.0, "uniform outside [0,1)");
}

}  // namespace

int run_selfcheck(const RunConfig& cfg, const std::string& out_dir) {
  fs::path dir;
  bool temp = false;
  if (out_dir.empty()) {
    const auto stamp =
        std::chrono::steady_clock::now().time_since_epoch().count();
    dir = fs::temp_directory_path() / ("msp-selfcheck-" + std::to_string(stamp));
    temp = true;
  } else {
    dir = out_dir;
  }
  fs::create_directories(dir);

  CheckRunner r;
  r.run("rng determinism", [] { rng_check(); });
  r.run("descriptor matches exhaustive oracle", [&] { descriptor_oracle_check(cfg); });
  r.run("masking counts and partition", [&] { masking_check(cfg); });
  r.run("ema closed form", [] { ema_check(); });
  r.run("loss unit values", [] { loss_unit_check(); });
  r.run("layer gradients", [] { layer_grad_checks(); });
  r.run("end-to-end gradients", [] { end_to_end_grad_check(); });
  r.run("checkpoint round trip", [&] { checkpoint_check(dir); });

  if (temp) {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::cout << (r.failures == 0 ? "selfcheck passed" : "selfcheck FAILED") << "\n";
  return r.failures == 0 ? 0 : 1;
}

}  // namespace msp
