#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "msp/error.hpp"
#include "msp/grad_check.hpp"
#include "msp/masking.hpp"
#include "msp/model.hpp"
#include "test_util.hpp"

using namespace msp;

namespace {

RunConfig small_cfg(const std::string& arch) {
  RunConfig cfg;
  cfg.model_arch = arch;
  cfg.model_width = 16;
  cfg.model_heads = 2;
  cfg.model_blocks = 2;
  cfg.model_encoder_blocks = 2;
  cfg.model_k = 8;
  cfg.model_keypoints = 24;
  cfg.target_pointset = true;
  cfg.pointset_k = 5;
  return cfg;
}

std::vector<int> all_ids(size_t n) {
  std::vector<int> ids(n);
  for (size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
  return ids;
}

bool rows_equal(const Tensor& a, int64_t ra, const Tensor& b, int64_t rb) {
  const int64_t w = a.shape()[1];
  for (int64_t c = 0; c < w; ++c)
    if (a.values()[static_cast<size_t>(ra * w + c)] !=
        b.values()[static_cast<size_t>(rb * w + c)])
      return false;
  return true;
}

}  // namespace

TEST_CASE("local geometry features are scale-normalized and translation invariant") {
  KnnTable table;
  table.nq = 2;
  table.k = 1;
  table.idx = {1, 0};  // each point's neighborhood is the other point

  for (double r : {0.05, 0.5}) {
    std::vector<Vec3> pos = {{0, 0, 0}, {r, 0, 0}};
    Tensor f = local_geometry_features(pos, table, Dtype::f64);
    REQUIRE(f.shape() == std::vector<int64_t>{2, geometry_feature_width});
    const auto& v = f.values();
    CHECK(v[0] == doctest::Approx(1.0));   // mean offset, unit normalized
    CHECK(v[3] == doctest::Approx(1.0));   // xx second moment
    CHECK(v[4] == doctest::Approx(0.0));
    CHECK(v[9] == doctest::Approx(r * 10.0));  // only the scale channel moves
  }

  std::vector<Vec3> base = {{0.1, 0.2, 0.3}, {0.15, 0.22, 0.31}};
  std::vector<Vec3> moved = base;
  for (auto& p : moved) p += Vec3(10, -20, 30);
  Tensor fb = local_geometry_features(base, table, Dtype::f64);
  Tensor fm = local_geometry_features(moved, table, Dtype::f64);
  CHECK(fb.values() == fm.values());
}

TEST_CASE("degenerate neighborhoods produce zero feature rows") {
  KnnTable table;
  table.nq = 1;
  table.k = 1;
  table.idx = {0};  // self only
  Tensor f = local_geometry_features({{1, 2, 3}}, table, Dtype::f64);
  for (double v : f.values()) CHECK(v == 0.0);
}

TEST_CASE("encoding is deterministic and tape-neutral") {
  RunConfig cfg = small_cfg("ca");
  MspModel model = build_model(cfg, 7);
  PointCloud cloud = msp::test::random_cloud(50, 1.0, 21);
  const std::vector<int> ids = all_ids(cloud.size());

  Tape tape;
  EncodeResult tracked = encode_points(&tape, model, model.params, cloud, ids);
  EncodeResult untracked = encode_points(nullptr, model, model.params, cloud, ids);
  EncodeResult again = encode_points(nullptr, model, model.params, cloud, ids);

  CHECK(tracked.feats.values() == untracked.feats.values());
  CHECK(untracked.feats.values() == again.feats.values());
  CHECK(tape.node_count() > 0);

  REQUIRE(tracked.trace.size() == 2);
  CHECK(tracked.trace[0].label == "encoder.block0");
  CHECK(tracked.trace[1].label == "encoder.block1");
  CHECK(tracked.trace[0].query_ids == ids);
  for (int key : tracked.trace[0].key_ids)
    CHECK(std::find(ids.begin(), ids.end(), key) != ids.end());
}

TEST_CASE("a single point encodes to finite features") {
  RunConfig cfg = small_cfg("ca");
  MspModel model = build_model(cfg, 7);
  PointCloud cloud = msp::test::random_cloud(10, 1.0, 33);
  EncodeResult r = encode_points(nullptr, model, model.params, cloud, {3});
  REQUIRE(r.feats.shape() == std::vector<int64_t>{1, 16});
  for (double v : r.feats.values()) CHECK(std::isfinite(v));
}

TEST_CASE("encoding is equivariant under point reordering") {
  RunConfig cfg = small_cfg("ca");
  MspModel model = build_model(cfg, 11);
  PointCloud cloud = msp::test::random_cloud(40, 1.0, 55);

  // Reversal as the permutation: perm[j] is the original index at row j.
  std::vector<int> perm(cloud.size());
  for (size_t j = 0; j < cloud.size(); ++j)
    perm[j] = static_cast<int>(cloud.size() - 1 - j);
  PointCloud shuffled;
  for (int p : perm) shuffled.positions.push_back(cloud.positions[static_cast<size_t>(p)]);

  EncodeResult a = encode_points(nullptr, model, model.params, cloud, all_ids(cloud.size()));
  EncodeResult b =
      encode_points(nullptr, model, model.params, shuffled, all_ids(cloud.size()));
  for (size_t j = 0; j < cloud.size(); ++j)
    CHECK(rows_equal(b.feats, static_cast<int64_t>(j), a.feats, perm[j]));
}

TEST_CASE("encode validates its id list") {
  RunConfig cfg = small_cfg("ca");
  MspModel model = build_model(cfg, 7);
  PointCloud cloud = msp::test::random_cloud(10, 1.0, 1);
  CHECK_THROWS_AS(encode_points(nullptr, model, model.params, cloud, {}), Error);
  CHECK_THROWS_AS(encode_points(nullptr, model, model.params, cloud, {10}), Error);
  CHECK_THROWS_AS(encode_points(nullptr, model, model.params, cloud, {-1}), Error);
}

TEST_CASE("mask queries embed the absolute coordinate") {
  RunConfig cfg = small_cfg("ca");
  MspModel model = build_model(cfg, 13);
  PointCloud cloud;
  cloud.positions = {{0, 0, 0}, {0.4, 0.2, 0.1}, {0.4, 0.2, 0.1}};

  Tensor q = build_mask_queries(nullptr, model, cloud, {0, 1, 2});
  // Zero coordinate contributes nothing: the row is exactly the mask token.
  const auto& token = model.params.at("decoder.mask_token").values();
  for (size_t c = 0; c < token.size(); ++c) CHECK(q.values()[c] == token[c]);
  CHECK(rows_equal(q, 1, q, 2));

  CHECK_THROWS_AS(build_mask_queries(nullptr, model, cloud, {}), Error);

  auto f = [&](Tape* tape) {
    Tensor out = build_mask_queries(tape, model, cloud, {0, 1, 2});
    return ops::mean_all(tape, ops::mul(tape, out, out));
  };
  GradCheckReport rep = grad_check(f, {{"decoder.mask_token", model.params.at("decoder.mask_token")},
                                       {"decoder.coord_embed", model.params.at("decoder.coord_embed")}});
  CHECK(rep.pass);
}

TEST_CASE("decoding an empty mask is a degenerate-mask error") {
  RunConfig cfg = small_cfg("ca");
  MspModel model = build_model(cfg, 13);
  PointCloud cloud = msp::test::random_cloud(30, 1.0, 9);
  EncodeResult enc = encode_points(nullptr, model, model.params, cloud, all_ids(30));
  MaskResult empty;
  empty.remaining_idx = all_ids(30);
  try {
    decode_features(nullptr, model, cloud, empty, enc, 0);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate_mask);
  }
}

namespace {

// Shared setup for the cross-attention isolation tests: decode a cloud, then
// decode again with one masked point nudged, holding the mask fixed.
void check_masked_isolation(const std::string& arch) {
  RunConfig cfg = small_cfg(arch);
  MspModel model = build_model(cfg, 17);
  PointCloud cloud = msp::test::random_cloud(120, 1.0, 71);
  MaskResult mask = apply_mask(cloud, {0.6, 0.3, 3});
  REQUIRE(mask.masked_idx.size() >= 4);

  EncodeResult enc = encode_remaining(nullptr, model, cloud, mask);
  DecodeResult base = decode_features(nullptr, model, cloud, mask, enc, 0);

  const int moved = mask.masked_idx[mask.masked_idx.size() / 2];
  PointCloud nudged = cloud;
  nudged.positions[static_cast<size_t>(moved)] += Vec3(0.01, -0.02, 0.015);

  EncodeResult enc2 = encode_remaining(nullptr, model, nudged, mask);
  CHECK(enc.feats.values() == enc2.feats.values());  // remaining points untouched
  DecodeResult out = decode_features(nullptr, model, nudged, mask, enc2, 0);

  REQUIRE(base.ids == out.ids);
  bool moved_row_changed = false;
  for (size_t r = 0; r < base.ids.size(); ++r) {
    if (base.ids[r] == moved) {
      moved_row_changed = !rows_equal(base.feats, static_cast<int64_t>(r), out.feats,
                                      static_cast<int64_t>(r));
    } else {
      // No path from one masked point to another: bit-identical rows.
      CHECK(rows_equal(base.feats, static_cast<int64_t>(r), out.feats,
                       static_cast<int64_t>(r)));
    }
  }
  CHECK(moved_row_changed);

  // Masked ids never appear among cross-attention keys.
  std::set<int> masked_set(mask.masked_idx.begin(), mask.masked_idx.end());
  for (const auto& entry : out.trace) {
    if (entry.label.rfind("decoder.block", 0) == 0) {
      CHECK(entry.query_ids == mask.masked_idx);
      for (int key : entry.key_ids) CHECK(masked_set.count(key) == 0);
    }
  }
}

}  // namespace

TEST_CASE("cross-attention decoders keep masked points isolated") {
  check_masked_isolation("ca");
  check_masked_isolation("ca_pp");
}

TEST_CASE("refining decoder equals its manual decomposition") {
  RunConfig cfg = small_cfg("ca_pp");
  MspModel model = build_model(cfg, 19);
  PointCloud cloud = msp::test::random_cloud(90, 1.0, 77);
  MaskResult mask = apply_mask(cloud, {0.6, 0.3, 5});
  EncodeResult enc = encode_remaining(nullptr, model, cloud, mask);
  DecodeResult got = decode_features(nullptr, model, cloud, mask, enc, 0);

  std::vector<Vec3> qpos, kpos;
  for (int i : mask.masked_idx) qpos.push_back(cloud.positions[static_cast<size_t>(i)]);
  for (int i : mask.remaining_idx) kpos.push_back(cloud.positions[static_cast<size_t>(i)]);
  KnnTable cross = knn_search(qpos, kpos, cfg.model_k);
  KnnTable self = knn_search(kpos, kpos, cfg.model_k);

  Tensor x = build_mask_queries(nullptr, model, cloud, mask.masked_idx);
  Tensor kv = enc.feats;
  for (int i = 0; i < cfg.model_blocks; ++i) {
    const AttentionBlockRef rref =
        attention_block_ref(model.params, "decoder.refine" + std::to_string(i));
    kv = attention_block_forward(nullptr, rref, kv, kv, kpos, kpos, self, cfg.model_heads,
                                 cfg.model_ln_eps);
    const AttentionBlockRef ref =
        attention_block_ref(model.params, "decoder.block" + std::to_string(i));
    x = attention_block_forward(nullptr, ref, x, kv, qpos, kpos, cross, cfg.model_heads,
                                cfg.model_ln_eps);
  }
  CHECK(got.feats.values() == x.values());
}

TEST_CASE("self-attention decoder saturates when keypoints cover the cloud") {
  RunConfig cfg = small_cfg("sa");
  cfg.model_keypoints = 1000;
  MspModel model = build_model(cfg, 23);
  PointCloud cloud = msp::test::random_cloud(80, 1.0, 81);
  MaskResult mask = apply_mask(cloud, {0.6, 0.3, 7});
  EncodeResult enc = encode_remaining(nullptr, model, cloud, mask);
  DecodeResult out = decode_features(nullptr, model, cloud, mask, enc, 4);

  CHECK(out.sa_keypoints == all_ids(cloud.size()));
  CHECK(out.ids == mask.masked_idx);  // every masked point is supervised
}

TEST_CASE("self-attention decoder is seed-deterministic") {
  RunConfig cfg = small_cfg("sa");
  MspModel model = build_model(cfg, 23);
  PointCloud cloud = msp::test::random_cloud(150, 1.0, 83);
  MaskResult mask = apply_mask(cloud, {0.6, 0.3, 9});
  EncodeResult enc = encode_remaining(nullptr, model, cloud, mask);

  DecodeResult a = decode_features(nullptr, model, cloud, mask, enc, 12);
  DecodeResult b = decode_features(nullptr, model, cloud, mask, enc, 12);
  CHECK(a.sa_keypoints == b.sa_keypoints);
  CHECK(a.feats.values() == b.feats.values());

  DecodeResult c = decode_features(nullptr, model, cloud, mask, enc, 13);
  CHECK(a.sa_keypoints != c.sa_keypoints);
}

TEST_CASE("self-attention graph stays inside the sampled set") {
  RunConfig cfg = small_cfg("sa");
  cfg.model_keypoints = 48;
  MspModel model = build_model(cfg, 23);
  PointCloud cloud = msp::test::random_cloud(200, 1.0, 85);
  MaskResult mask = apply_mask(cloud, {0.6, 0.3, 11});
  EncodeResult enc = encode_remaining(nullptr, model, cloud, mask);
  DecodeResult out = decode_features(nullptr, model, cloud, mask, enc, 21);

  CHECK(out.sa_keypoints.size() == 48);
  CHECK(std::is_sorted(out.sa_keypoints.begin(), out.sa_keypoints.end()));
  std::set<int> sampled(out.sa_keypoints.begin(), out.sa_keypoints.end());
  for (const auto& entry : out.trace) {
    CHECK(entry.query_ids == out.sa_keypoints);
    for (int key : entry.key_ids) CHECK(sampled.count(key) == 1);
  }

  // Supervised ids are exactly the sampled masked points, ascending.
  std::vector<int> want;
  std::set<int> masked(mask.masked_idx.begin(), mask.masked_idx.end());
  for (int id : out.sa_keypoints)
    if (masked.count(id)) want.push_back(id);
  CHECK(out.ids == want);
}

TEST_CASE("keypoint sampling is unbiased toward masked points") {
  RunConfig cfg = small_cfg("sa");
  cfg.model_keypoints = 64;
  cfg.model_k = 8;
  MspModel model = build_model(cfg, 29);
  PointCloud cloud = msp::test::random_cloud(400, 1.0, 87);
  MaskResult mask = apply_mask(cloud, {0.6, 0.3, 13});
  EncodeResult enc = encode_remaining(nullptr, model, cloud, mask);

  const double p = static_cast<double>(mask.masked_idx.size()) / 400.0;
  const int draws = 20;
  double mean_frac = 0.0;
  for (int sd = 0; sd < draws; ++sd) {
    DecodeResult out = decode_features(nullptr, model, cloud, mask, enc, 1000 + sd);
    mean_frac += static_cast<double>(out.ids.size()) / 64.0 / draws;
  }
  // Hypergeometric sd of a single draw's fraction, shrunk by the draw count.
  const double single_sd =
      std::sqrt(p * (1 - p) / 64.0 * (400.0 - 64.0) / (400.0 - 1.0));
  CHECK(std::abs(mean_frac - p) < 3.0 * single_sd / std::sqrt(static_cast<double>(draws)));
}

TEST_CASE("a keypoint sample with no masked points is degenerate") {
  RunConfig cfg = small_cfg("sa");
  cfg.model_keypoints = 3;
  MspModel model = build_model(cfg, 31);
  PointCloud cloud = msp::test::random_cloud(60, 1.0, 91);
  MaskResult mask;
  mask.masked_idx = {0};
  for (int i = 1; i < 60; ++i) mask.remaining_idx.push_back(i);
  EncodeResult enc = encode_points(nullptr, model, model.params, cloud, mask.remaining_idx);

  bool saw_degenerate = false, saw_hit = false;
  for (uint64_t sd = 0; sd < 40 && !(saw_degenerate && saw_hit); ++sd) {
    try {
      DecodeResult out = decode_features(nullptr, model, cloud, mask, enc, sd);
      CHECK(out.ids == std::vector<int>{0});
      saw_hit = true;
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::degenerate_target);
      saw_degenerate = true;
    }
  }
  CHECK(saw_degenerate);
  CHECK(saw_hit);
}

TEST_CASE("heads produce per-target outputs with documented shapes") {
  RunConfig cfg = small_cfg("ca");
  MspModel model = build_model(cfg, 37);
  const int64_t s = 6;
  Rng rng(3);
  std::vector<double> v(static_cast<size_t>(s * 16));
  for (auto& x : v) x = rng.uniform(-1, 1);
  Tensor feats = Tensor::constant(std::move(v), {s, 16});

  HeadOutputs out = apply_heads(nullptr, model, feats);
  CHECK(out.sc_logits.shape() == std::vector<int64_t>{s, static_cast<int64_t>(model.sc_bits)});
  CHECK(out.dsf.shape() == std::vector<int64_t>{s, 16});
  CHECK(out.color.shape() == std::vector<int64_t>{s, 3});
  CHECK(out.pointset.shape() == std::vector<int64_t>{s, 15});
  for (double x : out.pointset.values()) CHECK(std::abs(x) < cfg.pointset_radius);
}

TEST_CASE("disabled targets have no heads and no outputs") {
  RunConfig cfg = small_cfg("ca");
  cfg.target_dsf = false;
  cfg.target_color = false;
  cfg.target_pointset = false;
  MspModel model = build_model(cfg, 37);
  CHECK(!model.params.contains("head.color.w"));
  CHECK(!model.params.contains("head.pointset.w"));
  CHECK(model.params.at("head.shape.w").shape() ==
        std::vector<int64_t>{16, static_cast<int64_t>(model.sc_bits)});
  CHECK(model.ema.shadow.entries.empty());

  Tensor feats = Tensor::zeros({2, 16});
  HeadOutputs out = apply_heads(nullptr, model, feats);
  CHECK(out.sc_logits.defined());
  CHECK(!out.dsf.defined());
  CHECK(!out.color.defined());
  CHECK(!out.pointset.defined());
}

TEST_CASE("architectures own the expected parameter blocks") {
  RunConfig ca = small_cfg("ca");
  RunConfig capp = small_cfg("ca_pp");
  RunConfig sa = small_cfg("sa");
  MspModel mca = build_model(ca, 1), mcapp = build_model(capp, 1), msa = build_model(sa, 1);

  CHECK(!mca.params.contains("decoder.refine0.wq"));
  CHECK(!msa.params.contains("decoder.refine0.wq"));
  CHECK(mcapp.params.contains("decoder.refine0.wq"));
  CHECK(mcapp.params.contains("decoder.refine1.wq"));

  // Deep-feature target on: the EMA shadow mirrors exactly the encoder names.
  std::vector<std::string> shadow_names = mca.ema.shadow.names();
  std::vector<std::string> enc_names = mca.params.subset("encoder.").names();
  CHECK(shadow_names == enc_names);

  CHECK_THROWS_AS(parse_arch("transformer"), Error);
}
