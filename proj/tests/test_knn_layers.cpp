#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "msp/error.hpp"
#include "msp/grad_check.hpp"
#include "msp/knn.hpp"
#include "msp/layers.hpp"
#include "msp/optim.hpp"
#include "msp/rng.hpp"
#include "test_util.hpp"

using namespace msp;

namespace {

std::vector<Vec3> random_points(size_t n, uint64_t seed, double extent = 1.0) {
  return msp::test::random_cloud(n, extent, seed).positions;
}

Tensor random_features(Rng& rng, int64_t rows, int64_t cols) {
  std::vector<double> v(static_cast<size_t>(rows * cols));
  for (auto& x : v) x = rng.uniform(-1, 1);
  return Tensor::constant(std::move(v), {rows, cols});
}

}  // namespace

TEST_CASE("knn self query and saturation") {
  std::vector<Vec3> keys = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  KnnTable t = knn_search({{1, 0, 0}}, keys, 1);
  CHECK(t.k == 1);
  CHECK(t.idx == std::vector<int>{1});

  KnnTable all = knn_search({{0.9, 0, 0}}, keys, 10);
  CHECK(all.k == 3);  // clamped to the key count
  CHECK(all.idx == std::vector<int>{1, 0, 2});
}

TEST_CASE("knn ties break toward the lower key index") {
  std::vector<Vec3> keys = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}};
  KnnTable t = knn_search({{0, 0, 0}}, keys, 4);
  CHECK(t.idx == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("knn rejects empty keys") {
  try {
    knn_search({{0, 0, 0}}, {}, 3);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::contract);
  }
}

TEST_CASE("knn matches a full-sort oracle on random instances") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto keys = random_points(200, seed * 3 + 1);
    auto queries = random_points(50, seed * 3 + 2);
    const int k = 7;
    KnnTable t = knn_search(queries, keys, k);
    for (size_t q = 0; q < queries.size(); ++q) {
      std::vector<int> order(keys.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double da = (keys[static_cast<size_t>(a)] - queries[q]).norm2();
        const double db = (keys[static_cast<size_t>(b)] - queries[q]).norm2();
        if (da != db) return da < db;
        return a < b;
      });
      for (int j = 0; j < k; ++j)
        REQUIRE(t.row(static_cast<int>(q))[j] == order[static_cast<size_t>(j)]);
    }
  }
}

TEST_CASE("attention with a single neighbor reduces to the projected value") {
  ParamStore store;
  add_attention_block(store, "blk", 8, 3, Dtype::f64);
  AttentionBlockRef ref = attention_block_ref(store, "blk");

  Rng rng(5);
  Tensor qfeat = random_features(rng, 1, 8);
  Tensor kvfeat = random_features(rng, 1, 8);
  std::vector<Vec3> qpos = {{0, 0, 0}};
  std::vector<Vec3> kvpos = {{0.1, 0, 0}};
  KnnTable table;
  table.nq = 1;
  table.k = 1;
  table.idx = {0};

  Tensor weights;
  Tensor out = attention_core(nullptr, ref, qfeat, kvfeat, qpos, kvpos, table, 2, &weights);

  // Softmax over one neighbor is 1 for every head.
  for (double w : weights.values()) CHECK(w == doctest::Approx(1.0).epsilon(1e-15));

  // Context = value of that single key through Wo, independent of scores.
  Tensor v = ops::matmul(nullptr, kvfeat, ref.wv);
  Tensor want = ops::matmul(nullptr, v, ref.wo);
  for (size_t i = 0; i < want.values().size(); ++i)
    CHECK(out.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-12));
}

TEST_CASE("identical keys at identical positions get uniform weights") {
  ParamStore store;
  add_attention_block(store, "blk", 8, 7, Dtype::f64);
  AttentionBlockRef ref = attention_block_ref(store, "blk");

  Rng rng(11);
  Tensor qfeat = random_features(rng, 2, 8);
  std::vector<double> row(8);
  for (auto& v : row) v = rng.uniform(-1, 1);
  std::vector<double> kv;
  for (int i = 0; i < 3; ++i) kv.insert(kv.end(), row.begin(), row.end());
  Tensor kvfeat = Tensor::constant(kv, {3, 8});

  std::vector<Vec3> qpos = {{0, 0, 0}, {0.2, 0, 0}};
  std::vector<Vec3> kvpos = {{0.5, 0.5, 0}, {0.5, 0.5, 0}, {0.5, 0.5, 0}};
  KnnTable table;
  table.nq = 2;
  table.k = 3;
  table.idx = {0, 1, 2, 0, 1, 2};

  Tensor weights;
  attention_core(nullptr, ref, qfeat, kvfeat, qpos, kvpos, table, 2, &weights);
  for (double w : weights.values()) CHECK(std::abs(w - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("local attention equals a dense masked oracle on a micro config") {
  const int width = 8, heads = 2, nq = 3, nk = 4, k = 2;
  ParamStore store;
  add_attention_block(store, "blk", width, 13, Dtype::f64);
  AttentionBlockRef ref = attention_block_ref(store, "blk");

  Rng rng(29);
  Tensor qfeat = random_features(rng, nq, width);
  Tensor kvfeat = random_features(rng, nk, width);
  auto qpos = random_points(nq, 31);
  auto kvpos = random_points(nk, 32);
  KnnTable table = knn_search(qpos, kvpos, k);

  Tensor got = attention_block_forward(nullptr, ref, qfeat, kvfeat, qpos, kvpos, table,
                                       heads, 1e-5);

  // Dense reference: full scores with non-neighbors masked to -inf, plain
  // loops in f64, then the same post-norm residual structure.
  const int hw = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hw));
  auto matmul_ref = [&](const std::vector<double>& a, const Tensor& w, int rows) {
    const auto& wv = w.values();
    const int cols = static_cast<int>(w.shape()[1]);
    const int inner = static_cast<int>(w.shape()[0]);
    std::vector<double> out(static_cast<size_t>(rows * cols), 0.0);
    for (int r = 0; r < rows; ++r)
      for (int i = 0; i < inner; ++i)
        for (int c = 0; c < cols; ++c)
          out[static_cast<size_t>(r * cols + c)] +=
              a[static_cast<size_t>(r * inner + i)] * wv[static_cast<size_t>(i * cols + c)];
    return out;
  };

  std::vector<double> q = matmul_ref(qfeat.values(), ref.wq, nq);
  std::vector<double> kproj = matmul_ref(kvfeat.values(), ref.wk, nk);
  std::vector<double> vproj = matmul_ref(kvfeat.values(), ref.wv, nk);

  std::vector<double> context(static_cast<size_t>(nq * width), 0.0);
  for (int qi = 0; qi < nq; ++qi) {
    std::vector<bool> isnb(static_cast<size_t>(nk), false);
    for (int j = 0; j < table.k; ++j) isnb[static_cast<size_t>(table.row(qi)[j])] = true;

    // Per-key embedded relative position, added to the projected key.
    std::vector<double> kk(static_cast<size_t>(nk * width));
    for (int ki = 0; ki < nk; ++ki) {
      const Vec3 rel = kvpos[static_cast<size_t>(ki)] - qpos[static_cast<size_t>(qi)];
      const double r3[3] = {rel.x, rel.y, rel.z};
      for (int c = 0; c < width; ++c) {
        double emb = 0;
        for (int a = 0; a < 3; ++a)
          emb += r3[a] * ref.wpos.values()[static_cast<size_t>(a * width + c)];
        kk[static_cast<size_t>(ki * width + c)] =
            kproj[static_cast<size_t>(ki * width + c)] + emb;
      }
    }
    for (int h = 0; h < heads; ++h) {
      std::vector<double> scores(static_cast<size_t>(nk), -1e300);
      for (int ki = 0; ki < nk; ++ki) {
        if (!isnb[static_cast<size_t>(ki)]) continue;
        double s = 0;
        for (int c = h * hw; c < (h + 1) * hw; ++c)
          s += q[static_cast<size_t>(qi * width + c)] * kk[static_cast<size_t>(ki * width + c)];
        scores[static_cast<size_t>(ki)] = s * scale;
      }
      double mx = -1e300;
      for (double s : scores) mx = std::max(mx, s);
      double z = 0;
      std::vector<double> w(static_cast<size_t>(nk), 0.0);
      for (int ki = 0; ki < nk; ++ki) {
        if (!isnb[static_cast<size_t>(ki)]) continue;
        w[static_cast<size_t>(ki)] = std::exp(scores[static_cast<size_t>(ki)] - mx);
        z += w[static_cast<size_t>(ki)];
      }
      for (int ki = 0; ki < nk; ++ki)
        if (isnb[static_cast<size_t>(ki)])
          for (int c = h * hw; c < (h + 1) * hw; ++c)
            context[static_cast<size_t>(qi * width + c)] +=
                w[static_cast<size_t>(ki)] / z * vproj[static_cast<size_t>(ki * width + c)];
    }
  }
  std::vector<double> attn_out = matmul_ref(context, ref.wo, nq);

  auto layer_norm_ref = [&](std::vector<double>& x, const Tensor& g, const Tensor& b) {
    for (int r = 0; r < nq; ++r) {
      double mean = 0, var = 0;
      for (int c = 0; c < width; ++c) mean += x[static_cast<size_t>(r * width + c)] / width;
      for (int c = 0; c < width; ++c) {
        const double d = x[static_cast<size_t>(r * width + c)] - mean;
        var += d * d / width;
      }
      const double inv = 1.0 / std::sqrt(var + 1e-5);
      for (int c = 0; c < width; ++c) {
        const size_t at = static_cast<size_t>(r * width + c);
        x[at] = (x[at] - mean) * inv * g.values()[static_cast<size_t>(c)] +
                b.values()[static_cast<size_t>(c)];
      }
    }
  };

  std::vector<double> x(static_cast<size_t>(nq * width));
  for (size_t i = 0; i < x.size(); ++i) x[i] = qfeat.values()[i] + attn_out[i];
  layer_norm_ref(x, ref.ln1_g, ref.ln1_b);
  std::vector<double> h1 = matmul_ref(x, ref.ffn_w1, nq);
  for (auto& v : h1) v = std::max(0.0, v);
  std::vector<double> h2 = matmul_ref(h1, ref.ffn_w2, nq);
  for (size_t i = 0; i < x.size(); ++i) x[i] += h2[i];
  layer_norm_ref(x, ref.ln2_g, ref.ln2_b);

  for (size_t i = 0; i < x.size(); ++i)
    CHECK(std::abs(got.values()[i] - x[i]) < 1e-10);
}

TEST_CASE("gradients flow through a whole attention block") {
  const int width = 8, heads = 2;
  ParamStore store;
  add_attention_block(store, "blk", width, 41, Dtype::f64);
  AttentionBlockRef ref = attention_block_ref(store, "blk");

  auto pts = random_points(5, 43, 0.5);
  KnnTable table = knn_search(pts, pts, 3);
  Rng rng(47);
  Tensor feats = random_features(rng, 5, width);

  std::vector<std::pair<std::string, Tensor>> params;
  for (const auto& name : store.names()) params.emplace_back(name, store.at(name));

  auto f = [&](Tape* tape) {
    Tensor out = attention_block_forward(tape, ref, feats, feats, pts, pts, table, heads, 1e-5);
    return ops::mean_all(tape, ops::mul(tape, out, out));
  };
  GradCheckReport rep = grad_check(f, params);
  INFO("worst " << rep.worst << " rel err " << rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("adamw analytic first steps") {
  // Pure decay: zero grad, zero moments.
  ParamStore decay_store;
  decay_store.add("p", Tensor::constant({2.0}, {1}).set_requires_grad(true));
  AdamW opt1{{1e-3, 0.9, 0.999, 1e-8, 0.1}, 0, {}, {}};
  opt1.step(decay_store);
  CHECK(decay_store.at("p").values()[0] ==
        doctest::Approx(2.0 * (1.0 - 1e-3 * 0.1)).epsilon(1e-15));

  // Bias-corrected first step with unit gradient.
  ParamStore store;
  store.add("p", Tensor::constant({0.0}, {1}).set_requires_grad(true));
  store.at("p").grad() = {1.0};
  AdamW opt2{{1e-3, 0.9, 0.999, 1e-8, 0.1}, 0, {}, {}};
  opt2.step(store);
  CHECK(store.at("p").values()[0] ==
        doctest::Approx(-1e-3 * (1.0 / (1.0 + 1e-8))).epsilon(1e-12));
  CHECK(opt2.step_count == 1);
}

TEST_CASE("adamw with zero weight decay and no grads is a no-op") {
  ParamStore store;
  store.add("p", Tensor::constant({1.5, -2.5}, {2}).set_requires_grad(true));
  AdamW opt{{1e-2, 0.9, 0.999, 1e-8, 0.0}, 0, {}, {}};
  opt.step(store);
  CHECK(store.at("p").values() == std::vector<double>{1.5, -2.5});
}

TEST_CASE("adamw is deterministic across identical runs") {
  auto make = [] {
    ParamStore s;
    s.add("a", Tensor::constant({0.5, -0.25, 1.0}, {3}).set_requires_grad(true));
    s.at("a").grad() = {0.1, -0.2, 0.3};
    return s;
  };
  ParamStore s1 = make(), s2 = make();
  AdamW o1{{1e-3, 0.9, 0.999, 1e-8, 0.1}, 0, {}, {}};
  AdamW o2{{1e-3, 0.9, 0.999, 1e-8, 0.1}, 0, {}, {}};
  for (int i = 0; i < 5; ++i) {
    o1.step(s1);
    o2.step(s2);
  }
  CHECK(s1.at("a").values() == s2.at("a").values());
}

TEST_CASE("adamw refuses parameters that cannot carry gradients") {
  ParamStore store;
  store.add("frozen", Tensor::constant({1.0}, {1}));
  AdamW opt{{1e-3, 0.9, 0.999, 1e-8, 0.1}, 0, {}, {}};
  try {
    opt.step(store);
    FAIL("expected contract error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::contract);
    CHECK(std::string(e.what()).find("frozen") != std::string::npos);
  }
}

TEST_CASE("ema endpoints and closed form") {
  ParamStore online;
  online.add("enc.p", Tensor::constant({1.0}, {1}).set_requires_grad(true));

  EmaTracker hold;
  hold.decay = 1.0;
  hold.init(online, "enc.");
  hold.shadow.at("enc.p").values()[0] = 0.25;
  ema_update(hold, online);
  CHECK(hold.shadow.at("enc.p").values()[0] == 0.25);

  EmaTracker copy;
  copy.decay = 0.0;
  copy.init(online, "enc.");
  copy.shadow.at("enc.p").values()[0] = 0.25;
  ema_update(copy, online);
  CHECK(copy.shadow.at("enc.p").values()[0] == 1.0);

  EmaTracker t;
  t.decay = 0.999;
  t.init(online, "enc.");
  t.shadow.at("enc.p").values()[0] = 0.0;
  for (int i = 0; i < 100; ++i) ema_update(t, online);
  const double want = 1.0 - std::pow(0.999, 100);
  CHECK(std::abs(t.shadow.at("enc.p").values()[0] - want) <= 1e-12);
}

TEST_CASE("ema general closed form from a nonzero start") {
  ParamStore online;
  online.add("enc.p", Tensor::constant({3.0}, {1}).set_requires_grad(true));
  EmaTracker t;
  t.decay = 0.9;
  t.init(online, "enc.");
  t.shadow.at("enc.p").values()[0] = -1.0;
  for (int i = 0; i < 37; ++i) ema_update(t, online);
  const double mt = std::pow(0.9, 37);
  CHECK(std::abs(t.shadow.at("enc.p").values()[0] - (mt * -1.0 + (1 - mt) * 3.0)) <= 1e-12);
}

TEST_CASE("ema mirror violations are contract errors") {
  ParamStore online;
  online.add("enc.p", Tensor::constant({1.0}, {1}).set_requires_grad(true));
  EmaTracker t;
  t.init(online, "enc.");

  ParamStore wrong;
  wrong.add("enc.q", Tensor::constant({1.0}, {1}));
  CHECK_THROWS_AS(ema_update(t, wrong), Error);

  CHECK_THROWS_AS([&] {
    EmaTracker empty;
    empty.init(online, "nothing.");
  }(), Error);
}

TEST_CASE("param store iterates in name order and rejects duplicates") {
  ParamStore store;
  store.add("b", Tensor::zeros({1}));
  store.add("a", Tensor::zeros({1}));
  store.add("c", Tensor::zeros({1}));
  CHECK(store.names() == std::vector<std::string>{"a", "b", "c"});
  CHECK_THROWS_AS(store.add("a", Tensor::zeros({1})), Error);

  ParamStore sub = store.subset("a");
  CHECK(sub.names() == std::vector<std::string>{"a"});
}
