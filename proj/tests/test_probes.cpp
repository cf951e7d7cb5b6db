#include <cmath>
#include <numeric>

#include "doctest.h"
#include "msp/error.hpp"
#include "msp/probes.hpp"
#include "msp/rng.hpp"
#include "msp/synthetic.hpp"
#include "test_util.hpp"

using namespace msp;

namespace {

MaskResult mask_everything(size_t n) {
  MaskResult mask;
  for (size_t i = 0; i < n; ++i) mask.masked_idx.push_back(static_cast<int>(i));
  return mask;
}

std::vector<ScPartition> one_scale() {
  ScPartition p;
  p.n_theta = 2;
  p.n_phi = 4;
  p.n_rad = 3;
  p.radius = 0.15;
  p.xi = 0.3;
  return {p};
}

}  // namespace

TEST_CASE("full information gives recall one, none gives zero") {
  PointCloud cloud = msp::test::random_cloud(60, 0.3, 5);
  MaskResult mask = mask_everything(60);

  LeakageReport report =
      leakage_probe(cloud, mask, one_scale(), {1.0, 1e-12}, {0, 1, 2});
  REQUIRE(report.rows.size() == 2);
  // Every point is masked, so at f=1 the adversary sees the entire cloud.
  CHECK(report.rows[0].mean_recall == doctest::Approx(1.0).epsilon(1e-15));
  // At f ~ 0 nothing survives and no bit can be recovered.
  CHECK(report.rows[1].mean_recall == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(report.rows[0].n_centers == 60);
  CHECK(report.rows[0].seeds == std::vector<uint64_t>{0, 1, 2});
}

TEST_CASE("recall is monotone in the keep fraction") {
  PointCloud cloud = msp::test::random_cloud(200, 0.5, 7);
  MaskResult mask = apply_mask(cloud, {0.6, 0.2, 3}, true);
  REQUIRE(mask.masked_idx.size() > 50);

  const std::vector<double> fractions = {1.0, 0.5, 0.25, 0.1, 0.02};
  LeakageReport report =
      leakage_probe(cloud, mask, one_scale(), fractions, {0, 1, 2, 3, 4});
  for (size_t i = 0; i + 1 < fractions.size(); ++i)
    CHECK(report.rows[i].mean_recall >= report.rows[i + 1].mean_recall);
  CHECK(report.rows[0].mean_recall == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("centers with empty ground truth are skipped") {
  // Two tight clusters and one isolated point; radius 0.15 never reaches
  // from the isolated point to anything else.
  PointCloud cloud;
  for (int i = 0; i < 10; ++i) {
    cloud.positions.push_back({0.01 * i, 0, 0});
    cloud.positions.push_back({0.01 * i, 0.05, 0});
  }
  cloud.positions.push_back({5, 5, 5});
  MaskResult mask = mask_everything(cloud.size());

  LeakageReport report = leakage_probe(cloud, mask, one_scale(), {1.0}, {0});
  CHECK(report.rows[0].n_centers == 20);  // the isolated center is not counted
  CHECK(report.rows[0].mean_recall == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("all-empty ground truth is a degenerate probe") {
  PointCloud cloud;
  cloud.positions = {{0, 0, 0}, {10, 0, 0}, {0, 10, 0}};
  MaskResult mask = mask_everything(3);
  try {
    leakage_probe(cloud, mask, one_scale(), {1.0}, {0});
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate_probe);
  }
}

TEST_CASE("leakage probe validates its inputs") {
  PointCloud cloud = msp::test::random_cloud(20, 0.3, 9);
  MaskResult mask = mask_everything(20);
  CHECK_THROWS_AS(leakage_probe(cloud, mask, one_scale(), {}, {0}), Error);
  CHECK_THROWS_AS(leakage_probe(cloud, mask, one_scale(), {0.0}, {0}), Error);
  CHECK_THROWS_AS(leakage_probe(cloud, mask, one_scale(), {1.5}, {0}), Error);
  CHECK_THROWS_AS(leakage_probe(cloud, mask, one_scale(), {1.0}, {}), Error);
  CHECK_THROWS_AS(leakage_probe(cloud, MaskResult{}, one_scale(), {1.0}, {0}), Error);
}

TEST_CASE("merging weights scenes by counted centers") {
  LeakageRow a;
  a.keep_fraction = 0.5;
  a.mean_recall = 0.9;
  a.n_centers = 2;
  a.seeds = {0, 1};
  LeakageRow b = a;
  b.mean_recall = 0.1;
  b.n_centers = 6;

  LeakageReport ra, rb;
  ra.rows = {a};
  rb.rows = {b};
  LeakageReport merged = merge_leakage({ra, rb});
  REQUIRE(merged.rows.size() == 1);
  CHECK(merged.rows[0].n_centers == 8);
  CHECK(merged.rows[0].mean_recall == doctest::Approx((0.9 * 2 + 0.1 * 6) / 8).epsilon(1e-12));

  LeakageReport other = ra;
  other.rows[0].keep_fraction = 0.25;
  CHECK_THROWS_AS(merge_leakage({ra, other}), Error);
}

TEST_CASE("leakage csv round-trips") {
  PointCloud cloud = msp::test::random_cloud(50, 0.3, 11);
  MaskResult mask = mask_everything(50);
  LeakageReport report = leakage_probe(cloud, mask, one_scale(), {1.0, 0.25}, {0, 1});

  LeakageReport back = parse_leakage_csv(leakage_csv(report));
  REQUIRE(back.rows.size() == report.rows.size());
  for (size_t i = 0; i < back.rows.size(); ++i) {
    CHECK(back.rows[i].keep_fraction == report.rows[i].keep_fraction);
    CHECK(back.rows[i].mean_recall == report.rows[i].mean_recall);
    CHECK(back.rows[i].n_centers == report.rows[i].n_centers);
    CHECK(back.rows[i].seeds.size() == report.rows[i].seeds.size());
  }
  CHECK_THROWS_AS(parse_leakage_csv("bogus\n1,2,3,4\n"), Error);
}

namespace {

// Well-separated class blobs, the easy case a linear probe must solve.
void blob_data(int per_class, uint64_t seed, double scale0, std::vector<double>& vals,
               std::vector<int>& labels) {
  Rng rng(seed);
  for (int c = 0; c < scene_class_count; ++c) {
    for (int i = 0; i < per_class; ++i) {
      for (int d = 0; d < 8; ++d) {
        double v = rng.normal() * 0.3 + (d == c ? 3.0 : 0.0);
        if (d == 0) v *= scale0;  // one deliberately ill-scaled dimension
        vals.push_back(v);
      }
      labels.push_back(c);
    }
  }
}

RunConfig probe_cfg() {
  RunConfig cfg;
  cfg.probe_steps = 200;
  cfg.probe_lr = 1e-2;
  return cfg;
}

}  // namespace

TEST_CASE("probe classifier separates standardized blobs") {
  std::vector<double> train_vals, eval_vals;
  std::vector<int> train_labels, eval_labels;
  blob_data(40, 21, 1000.0, train_vals, train_labels);
  blob_data(25, 22, 1000.0, eval_vals, eval_labels);
  Tensor train = Tensor::constant(std::move(train_vals),
                                  {static_cast<int64_t>(train_labels.size()), 8});
  Tensor eval_t = Tensor::constant(std::move(eval_vals),
                                   {static_cast<int64_t>(eval_labels.size()), 8});

  RunConfig cfg = probe_cfg();
  ProbeClassifier clf = train_probe_classifier(train, train_labels, cfg);
  // The class-0 coordinate is a thousand times larger than the others; the
  // stored statistics bring it back in range.
  CHECK(clf.sd.values()[0] > 100.0);
  const double acc = eval_probe_classifier(clf, eval_t, eval_labels);
  CHECK(acc > 0.95);
}

TEST_CASE("probe training is invariant to per-dimension affine rescaling") {
  std::vector<double> vals, eval_vals;
  std::vector<int> labels, eval_labels;
  blob_data(30, 31, 1.0, vals, labels);
  blob_data(20, 32, 1.0, eval_vals, eval_labels);
  const int64_t n = static_cast<int64_t>(labels.size());
  const int64_t ne = static_cast<int64_t>(eval_labels.size());

  // Power-of-two per-dim scales keep the arithmetic exact, so the
  // standardized features and everything after them are bit-identical.
  std::vector<double> scaled = vals, eval_scaled = eval_vals;
  for (size_t i = 0; i < scaled.size(); ++i) scaled[i] *= (i % 8 == 3) ? 1024.0 : 0.25;
  for (size_t i = 0; i < eval_scaled.size(); ++i)
    eval_scaled[i] *= (i % 8 == 3) ? 1024.0 : 0.25;

  RunConfig cfg = probe_cfg();
  ProbeClassifier c1 =
      train_probe_classifier(Tensor::constant(vals, {n, 8}), labels, cfg);
  ProbeClassifier c2 =
      train_probe_classifier(Tensor::constant(scaled, {n, 8}), labels, cfg);
  CHECK(c1.w.values() == c2.w.values());

  const double a1 =
      eval_probe_classifier(c1, Tensor::constant(eval_vals, {ne, 8}), eval_labels);
  const double a2 =
      eval_probe_classifier(c2, Tensor::constant(eval_scaled, {ne, 8}), eval_labels);
  CHECK(a1 == a2);
}

TEST_CASE("constant feature dimensions are left centered") {
  std::vector<double> vals;
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) {
    vals.push_back(7.5);                      // constant dim
    vals.push_back(i < 10 ? -1.0 : 1.0);      // informative dim
    labels.push_back(i < 10 ? 0 : 1);
  }
  RunConfig cfg = probe_cfg();
  ProbeClassifier clf =
      train_probe_classifier(Tensor::constant(std::move(vals), {20, 2}), labels, cfg);
  CHECK(clf.sd.values()[0] == 1.0);
  CHECK(clf.mean.values()[0] == doctest::Approx(7.5).epsilon(1e-12));
}

TEST_CASE("probe training tolerates row permutations") {
  std::vector<double> vals;
  std::vector<int> labels;
  blob_data(30, 41, 1.0, vals, labels);
  const int64_t n = static_cast<int64_t>(labels.size());

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(43);
  rng.shuffle(order);
  std::vector<double> pvals(vals.size());
  std::vector<int> plabels(labels.size());
  for (size_t r = 0; r < order.size(); ++r) {
    plabels[r] = labels[static_cast<size_t>(order[r])];
    for (int c = 0; c < 8; ++c)
      pvals[r * 8 + static_cast<size_t>(c)] =
          vals[static_cast<size_t>(order[r]) * 8 + static_cast<size_t>(c)];
  }

  std::vector<double> eval_vals;
  std::vector<int> eval_labels;
  blob_data(20, 42, 1.0, eval_vals, eval_labels);
  const int64_t ne = static_cast<int64_t>(eval_labels.size());
  Tensor eval_t = Tensor::constant(std::move(eval_vals), {ne, 8});

  RunConfig cfg = probe_cfg();
  ProbeClassifier c1 = train_probe_classifier(Tensor::constant(vals, {n, 8}), labels, cfg);
  ProbeClassifier c2 = train_probe_classifier(Tensor::constant(pvals, {n, 8}), plabels, cfg);
  const double a1 = eval_probe_classifier(c1, eval_t, eval_labels);
  const double a2 = eval_probe_classifier(c2, eval_t, eval_labels);
  // Row order only reorders float accumulations; decisions may flip only on
  // razor-thin margins.
  CHECK(std::abs(a1 - a2) <= 0.02);
}

TEST_CASE("single-class probe data is degenerate") {
  std::vector<double> vals = {1, 2, 3, 4, 5, 6};
  std::vector<int> labels = {2, 2, 2};
  try {
    train_probe_classifier(Tensor::constant(std::move(vals), {3, 2}), labels, probe_cfg());
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate_probe);
  }
}

TEST_CASE("probe features demand labels") {
  RunConfig cfg;
  cfg.model_arch = "ca";
  cfg.model_width = 16;
  cfg.model_heads = 2;
  cfg.model_blocks = 1;
  cfg.model_encoder_blocks = 1;
  cfg.model_k = 8;
  MspModel model = build_model(cfg, 3);
  PointCloud unlabeled = msp::test::random_cloud(30, 1.0, 5);
  CHECK_THROWS_AS(probe_features(model, model.params.subset("encoder."), unlabeled), Error);
}

TEST_CASE("linear probe is split-deterministic") {
  RunConfig cfg;
  cfg.model_arch = "ca";
  cfg.model_width = 16;
  cfg.model_heads = 2;
  cfg.model_blocks = 1;
  cfg.model_encoder_blocks = 1;
  cfg.model_k = 8;
  cfg.probe_train_scenes = 2;
  cfg.probe_steps = 50;
  MspModel model = build_model(cfg, 7);

  SyntheticSceneSpec spec;
  spec.planes = 1;
  spec.boxes = 1;
  spec.spheres = 1;
  spec.cylinders = 1;
  spec.points_per_primitive = 40;
  spec.extent = 2.0;
  std::vector<PointCloud> scenes;
  for (uint64_t i = 0; i < 4; ++i) {
    spec.seed = 100 + i;
    scenes.push_back(generate_scene(spec));
  }

  const ParamStore enc = model.params.subset("encoder.");
  ProbeResult r1 = linear_probe(model, enc, scenes, 9, "scratch");
  ProbeResult r2 = linear_probe(model, enc, scenes, 9, "scratch");
  CHECK(r1.overall_acc == r2.overall_acc);
  CHECK(r1.class_total == r2.class_total);
  CHECK(r1.arm == "scratch");
  CHECK(r1.train_points + r1.eval_points == 4 * 160);

  CHECK_THROWS_AS(linear_probe(model, enc, {scenes[0]}, 9, "scratch"), Error);
}

TEST_CASE("probe csv round-trips") {
  ProbeResult r;
  r.arm = "pretrained";
  r.overall_acc = 0.75;
  r.class_acc = {1.0, 0.5, 0.25, 0.75};
  r.class_total = {10, 20, 30, 40};
  const std::string text = probe_csv({r});
  std::vector<ProbeResult> back = parse_probe_csv(text);
  REQUIRE(back.size() == 1);
  CHECK(back[0].arm == "pretrained");
  CHECK(back[0].overall_acc == 0.75);
  CHECK(back[0].class_acc == r.class_acc);
  CHECK(back[0].class_total == std::array<int64_t, 4>{0, 0, 0, 0});
  CHECK_THROWS_AS(parse_probe_csv("arm,overall\nx,1\n"), Error);
}

namespace {

ProbeResult arm_result(const std::string& arm, double acc) {
  ProbeResult r;
  r.arm = arm;
  r.overall_acc = acc;
  r.class_acc = {acc, acc, acc, acc};
  r.class_total = {5, 5, 5, 5};
  return r;
}

}  // namespace

TEST_CASE("comparison recomputes the probe margin rule") {
  RunConfig cfg;
  cfg.probe_margin = 3.0;

  ComparisonReport win = compare_runs(
      {arm_result("pretrained", 0.80), arm_result("pretrained", 0.70),
       arm_result("scratch", 0.70), arm_result("scratch", 0.69)},
      {}, cfg);
  REQUIRE(win.probe_margin_points.has_value());
  // Means: 0.75 vs 0.695, margin 5.5 points.
  CHECK(*win.probe_margin_points == doctest::Approx(5.5).epsilon(1e-9));
  CHECK(win.pass);

  ComparisonReport tie = compare_runs(
      {arm_result("pretrained", 0.7), arm_result("scratch", 0.7)}, {}, cfg);
  CHECK(*tie.probe_margin_points == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(!tie.pass);
  CHECK(tie.text.find("FAIL") != std::string::npos);
}

TEST_CASE("comparison checks leakage drops against the margin") {
  RunConfig cfg;
  cfg.leakage_margin = 0.05;

  LeakageReport report;
  for (double p : {0.9, 0.6, 0.58}) {
    LeakageRow row;
    row.keep_fraction = p;  // reused as a distinct label per row
    row.mean_recall = p;
    row.n_centers = 10;
    row.seeds = {0};
    report.rows.push_back(row);
  }
  ComparisonReport rep = compare_runs({}, {report}, cfg);
  REQUIRE(rep.leakage_drops.size() == 2);
  CHECK(rep.leakage_drops[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(rep.leakage_drops[1] == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(!rep.pass);  // the second drop is under the margin

  ComparisonReport vacuous = compare_runs({}, {}, cfg);
  CHECK(vacuous.pass);
  CHECK(vacuous.text.find("none configured") != std::string::npos);
}
