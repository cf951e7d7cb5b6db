#include "msp/layers.hpp"

#include <cmath>

#include "msp/error.hpp"

namespace msp {

void add_attention_block(ParamStore& store, const std::string& prefix, int width,
                         uint64_t seed, Dtype dt) {
  require(width >= 1, ErrorKind::invalid_spec, "block width must be >= 1");
  const int64_t w = width;
  const double proj_sigma = 1.0 / std::sqrt(static_cast<double>(w));
  const double ffn_sigma = 1.0 / std::sqrt(4.0 * static_cast<double>(w));
  auto weight = [&](const std::string& name, int64_t rows, int64_t cols, double sigma) {
    store.add(name, init_normal({rows, cols}, sigma, seed, name, dt));
  };
  weight(prefix + ".wq", w, w, proj_sigma);
  weight(prefix + ".wk", w, w, proj_sigma);
  weight(prefix + ".wv", w, w, proj_sigma);
  weight(prefix + ".wo", w, w, proj_sigma);
  weight(prefix + ".wpos", 3, w, proj_sigma);
  weight(prefix + ".ffn_w1", w, 4 * w, proj_sigma);
  weight(prefix + ".ffn_w2", 4 * w, w, ffn_sigma);

  Tensor g1 = Tensor::constant(std::vector<double>(static_cast<size_t>(w), 1.0), {w}, dt);
  Tensor g2 = Tensor::constant(std::vector<double>(static_cast<size_t>(w), 1.0), {w}, dt);
  store.add(prefix + ".ln1_g", g1.set_requires_grad(true));
  store.add(prefix + ".ln1_b", Tensor::zeros({w}, dt).set_requires_grad(true));
  store.add(prefix + ".ln2_g", g2.set_requires_grad(true));
  store.add(prefix + ".ln2_b", Tensor::zeros({w}, dt).set_requires_grad(true));
}

AttentionBlockRef attention_block_ref(const ParamStore& store, const std::string& prefix) {
  AttentionBlockRef ref;
  ref.wq = store.at(prefix + ".wq");
  ref.wk = store.at(prefix + ".wk");
  ref.wv = store.at(prefix + ".wv");
  ref.wo = store.at(prefix + ".wo");
  ref.wpos = store.at(prefix + ".wpos");
  ref.ffn_w1 = store.at(prefix + ".ffn_w1");
  ref.ffn_w2 = store.at(prefix + ".ffn_w2");
  ref.ln1_g = store.at(prefix + ".ln1_g");
  ref.ln1_b = store.at(prefix + ".ln1_b");
  ref.ln2_g = store.at(prefix + ".ln2_g");
  ref.ln2_b = store.at(prefix + ".ln2_b");
  return ref;
}

Tensor positions_tensor(const std::vector<Vec3>& pos, Dtype dt) {
  std::vector<double> vals;
  vals.reserve(pos.size() * 3);
  for (const auto& p : pos) {
    vals.push_back(p.x);
    vals.push_back(p.y);
    vals.push_back(p.z);
  }
  return Tensor::constant(std::move(vals), {static_cast<int64_t>(pos.size()), 3}, dt);
}

Tensor attention_core(Tape* tape, const AttentionBlockRef& ref, const Tensor& qfeat,
                      const Tensor& kvfeat, const std::vector<Vec3>& qpos,
                      const std::vector<Vec3>& kvpos, const KnnTable& table, int heads,
                      Tensor* out_weights) {
  const int64_t n = qfeat.dim(0);
  const int64_t width = qfeat.dim(1);
  require(static_cast<int64_t>(qpos.size()) == n, ErrorKind::contract,
          "query position count mismatch");
  require(static_cast<int64_t>(kvpos.size()) == kvfeat.dim(0), ErrorKind::contract,
          "key position count mismatch");
  require(table.nq == n, ErrorKind::contract, "neighbor table does not cover the queries");
  require(heads >= 1 && width % heads == 0, ErrorKind::invalid_spec,
          "width must be divisible by heads");

  const Tensor q = ops::matmul(tape, qfeat, ref.wq);
  const Tensor kproj = ops::matmul(tape, kvfeat, ref.wk);
  const Tensor vproj = ops::matmul(tape, kvfeat, ref.wv);

  const int kk = table.k;
  std::vector<int> flat(table.idx.begin(), table.idx.end());

  // Relative key positions per (query, neighbor) slot, embedded linearly.
  std::vector<double> rel;
  rel.reserve(flat.size() * 3);
  for (int64_t i = 0; i < n; ++i) {
    for (int j = 0; j < kk; ++j) {
      const Vec3 d = kvpos[static_cast<size_t>(table.row(static_cast<int>(i))[j])] -
                     qpos[static_cast<size_t>(i)];
      rel.push_back(d.x);
      rel.push_back(d.y);
      rel.push_back(d.z);
    }
  }
  const Tensor rel_t =
      Tensor::constant(std::move(rel), {static_cast<int64_t>(flat.size()), 3}, qfeat.dtype());

  Tensor kg = ops::gather_rows(tape, kproj, flat);
  kg = ops::add(tape, kg, ops::matmul(tape, rel_t, ref.wpos));
  const Tensor vg = ops::gather_rows(tape, vproj, flat);

  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(width / heads));
  const Tensor scores = ops::scale(tape, ops::qk_scores(tape, q, kg, kk, heads), inv_scale);
  const Tensor w = ops::softmax_lastdim(tape, scores);
  if (out_weights) *out_weights = w;
  const Tensor ctx = ops::attn_mix(tape, w, vg);
  return ops::matmul(tape, ctx, ref.wo);
}

Tensor attention_block_forward(Tape* tape, const AttentionBlockRef& ref, const Tensor& qfeat,
                               const Tensor& kvfeat, const std::vector<Vec3>& qpos,
                               const std::vector<Vec3>& kvpos, const KnnTable& table,
                               int heads, double ln_eps) {
  const Tensor o = attention_core(tape, ref, qfeat, kvfeat, qpos, kvpos, table, heads);
  Tensor x = ops::layer_norm(tape, ops::add(tape, qfeat, o), ref.ln1_g, ref.ln1_b, ln_eps);
  const Tensor h = ops::matmul(tape, ops::relu(tape, ops::matmul(tape, x, ref.ffn_w1)), ref.ffn_w2);
  return ops::layer_norm(tape, ops::add(tape, x, h), ref.ln2_g, ref.ln2_b, ln_eps);
}

}  // namespace msp
