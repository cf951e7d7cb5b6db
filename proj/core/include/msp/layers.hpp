#pragma once

#include <string>
#include <vector>

#include "msp/knn.hpp"
#include "msp/params.hpp"
#include "msp/tensor.hpp"

namespace msp {

// Parameter bundle of one attention block. Names under `prefix`:
// wq wk wv wo (width x width), wpos (3 x width), ffn_w1 (width x 4*width),
// ffn_w2 (4*width x width), ln1_g ln1_b ln2_g ln2_b (width).
// Projections and the FFN are weight-only; biases live in the layer norms.
struct AttentionBlockRef {
  Tensor wq, wk, wv, wo, wpos, ffn_w1, ffn_w2, ln1_g, ln1_b, ln2_g, ln2_b;
};

void add_attention_block(ParamStore& store, const std::string& prefix, int width,
                         uint64_t seed, Dtype dt);
AttentionBlockRef attention_block_ref(const ParamStore& store, const std::string& prefix);

Tensor positions_tensor(const std::vector<Vec3>& pos, Dtype dt = Dtype::f64);

// Scaled dot-product attention restricted to each query's neighbor list.
// Keys get a learned linear embedding of (key_pos - query_pos) added after
// projection; scores are scaled by 1/sqrt(width/heads). Returns the
// post-Wo context (pre-residual). When out_weights is non-null the softmax
// weights [nq, heads, k] are exposed for inspection.
Tensor attention_core(Tape* tape, const AttentionBlockRef& ref, const Tensor& qfeat,
                      const Tensor& kvfeat, const std::vector<Vec3>& qpos,
                      const std::vector<Vec3>& kvpos, const KnnTable& table, int heads,
                      Tensor* out_weights = nullptr);

// Post-norm residual block:
//   x = LN1(qfeat + attention_core(...)); x = LN2(x + W2 relu(W1 x)).
Tensor attention_block_forward(Tape* tape, const AttentionBlockRef& ref, const Tensor& qfeat,
                               const Tensor& kvfeat, const std::vector<Vec3>& qpos,
                               const std::vector<Vec3>& kvpos, const KnnTable& table,
                               int heads, double ln_eps);

}  // namespace msp
