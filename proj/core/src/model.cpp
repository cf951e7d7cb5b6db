#include "msp/model.hpp"

#include <algorithm>
#include <cmath>

#include "msp/error.hpp"
#include "msp/rng.hpp"

namespace msp {

DecoderArch parse_arch(const std::string& name) {
  if (name == "ca") return DecoderArch::ca;
  if (name == "ca_pp") return DecoderArch::ca_pp;
  if (name == "sa") return DecoderArch::sa;
  fail(ErrorKind::parse, "unknown decoder arch '" + name + "'");
}

MspModel build_model(const RunConfig& cfg, uint64_t seed) {
  cfg.validate();
  MspModel model;
  model.cfg = cfg;
  model.sc_bits = total_bins(cfg.partitions());

  const Dtype dt = cfg.dtype();
  const int64_t w = cfg.model_width;
  ParamStore& ps = model.params;

  const double token_sigma = 0.1;
  const double head_sigma = 1.0 / std::sqrt(static_cast<double>(w));
  const double coord_sigma = 1.0 / std::sqrt(3.0);

  ps.add("encoder.input_token", init_normal({w}, token_sigma, seed, "encoder.input_token", dt));
  ps.add("encoder.geom_embed",
         init_normal({geometry_feature_width, w}, 1.0 / std::sqrt((double)geometry_feature_width),
                     seed, "encoder.geom_embed", dt));
  for (int i = 0; i < cfg.model_encoder_blocks; ++i) {
    add_attention_block(ps, "encoder.block" + std::to_string(i), cfg.model_width, seed, dt);
  }

  ps.add("decoder.mask_token", init_normal({w}, token_sigma, seed, "decoder.mask_token", dt));
  ps.add("decoder.coord_embed",
         init_normal({3, w}, coord_sigma, seed, "decoder.coord_embed", dt));
  const DecoderArch arch = parse_arch(cfg.model_arch);
  for (int i = 0; i < cfg.model_blocks; ++i) {
    add_attention_block(ps, "decoder.block" + std::to_string(i), cfg.model_width, seed, dt);
    if (arch == DecoderArch::ca_pp) {
      add_attention_block(ps, "decoder.refine" + std::to_string(i), cfg.model_width, seed, dt);
    }
  }

  const int64_t shape_cols = (cfg.target_sc ? model.sc_bits : 0) + (cfg.target_dsf ? w : 0);
  if (shape_cols > 0) {
    ps.add("head.shape.w", init_normal({w, shape_cols}, head_sigma, seed, "head.shape.w", dt));
    ps.add("head.shape.b", Tensor::zeros({shape_cols}, dt).set_requires_grad(true));
  }
  if (cfg.target_color) {
    ps.add("head.color.w", init_normal({w, 3}, head_sigma, seed, "head.color.w", dt));
    ps.add("head.color.b", Tensor::zeros({3}, dt).set_requires_grad(true));
  }
  if (cfg.target_pointset) {
    const int64_t cols = 3 * static_cast<int64_t>(cfg.pointset_k);
    ps.add("head.pointset.w",
           init_normal({w, cols}, head_sigma, seed, "head.pointset.w", dt));
    ps.add("head.pointset.b", Tensor::zeros({cols}, dt).set_requires_grad(true));
  }

  if (cfg.target_dsf) {
    model.ema.decay = cfg.ema_decay;
    model.ema.init(ps, "encoder.");
  }
  return model;
}

namespace {

std::vector<Vec3> gather_positions(const PointCloud& cloud, const std::vector<int>& ids) {
  std::vector<Vec3> out;
  out.reserve(ids.size());
  for (int i : ids) {
    require(i >= 0 && static_cast<size_t>(i) < cloud.size(), ErrorKind::contract,
            "point id out of range");
    out.push_back(cloud.positions[static_cast<size_t>(i)]);
  }
  return out;
}

void push_trace(AttentionTrace& trace, const std::string& label,
                const std::vector<int>& query_ids, const std::vector<int>& key_ids,
                const KnnTable& table) {
  AttentionTraceEntry entry;
  entry.label = label;
  entry.query_ids = query_ids;
  entry.key_ids.reserve(table.idx.size());
  for (int slot : table.idx) entry.key_ids.push_back(key_ids[static_cast<size_t>(slot)]);
  trace.push_back(std::move(entry));
}

}  // namespace

Tensor local_geometry_features(const std::vector<Vec3>& pos, const KnnTable& table, Dtype dt) {
  const size_t n = pos.size();
  std::vector<double> out(n * static_cast<size_t>(geometry_feature_width), 0.0);
  for (size_t i = 0; i < n; ++i) {
    const int* nb = table.row(static_cast<int>(i));
    Vec3 m(0, 0, 0);
    double sxx = 0, syy = 0, szz = 0, sxy = 0, sxz = 0, syz = 0, s2 = 0;
    for (int j = 0; j < table.k; ++j) {
      const Vec3 d = pos[static_cast<size_t>(nb[j])] - pos[i];
      m = m + d;
      sxx += d.x * d.x;
      syy += d.y * d.y;
      szz += d.z * d.z;
      sxy += d.x * d.y;
      sxz += d.x * d.z;
      syz += d.y * d.z;
      s2 += d.dot(d);
    }
    const double inv_k = 1.0 / static_cast<double>(table.k);
    s2 *= inv_k;
    if (s2 <= 0.0) continue;  // all neighbors coincide; the row stays zero
    const double s = std::sqrt(s2);
    double* row = out.data() + i * static_cast<size_t>(geometry_feature_width);
    row[0] = m.x * inv_k / s;
    row[1] = m.y * inv_k / s;
    row[2] = m.z * inv_k / s;
    row[3] = sxx * inv_k / s2;
    row[4] = syy * inv_k / s2;
    row[5] = szz * inv_k / s2;
    row[6] = sxy * inv_k / s2;
    row[7] = sxz * inv_k / s2;
    row[8] = syz * inv_k / s2;
    row[9] = s * 10.0;  // absolute scale, in units of a 0.1 m neighborhood
  }
  return Tensor::constant(std::move(out),
                          {static_cast<int64_t>(n), geometry_feature_width}, dt);
}

EncodeResult encode_points(Tape* tape, const MspModel& model, const ParamStore& weights,
                           const PointCloud& cloud, const std::vector<int>& ids) {
  require(!ids.empty(), ErrorKind::contract, "encode_points over empty subset");
  const auto& cfg = model.cfg;
  EncodeResult result;
  result.ids = ids;

  const std::vector<Vec3> pos = gather_positions(cloud, ids);
  const KnnTable table = knn_search(pos, pos, cfg.model_k);

  // Input row i: shared token plus an embedding of the point's neighborhood
  // shape. The embedding is what lets attention mixing distinguish points at
  // all (with a bare token every value row would be identical and the whole
  // stack would collapse to one feature per cloud), and it is deliberately
  // translation invariant: absolute coordinates are scene-specific noise for
  // every downstream consumer of these features.
  const Tensor token = weights.at("encoder.input_token");
  const Tensor embedded = ops::matmul(tape, local_geometry_features(pos, table, cfg.dtype()),
                                      weights.at("encoder.geom_embed"));
  Tensor x = ops::add(tape, embedded, token);

  for (int i = 0; i < cfg.model_encoder_blocks; ++i) {
    const std::string prefix = "encoder.block" + std::to_string(i);
    const AttentionBlockRef ref = attention_block_ref(weights, prefix);
    x = attention_block_forward(tape, ref, x, x, pos, pos, table, cfg.model_heads,
                                cfg.model_ln_eps);
    push_trace(result.trace, prefix, ids, ids, table);
  }
  result.feats = x;
  return result;
}

Tensor build_mask_queries(Tape* tape, const MspModel& model, const PointCloud& cloud,
                          const std::vector<int>& masked_ids) {
  require(!masked_ids.empty(), ErrorKind::contract, "no masked points to query");
  const Tensor coords = positions_tensor(gather_positions(cloud, masked_ids),
                                         model.cfg.dtype());
  const Tensor embedded = ops::matmul(tape, coords, model.params.at("decoder.coord_embed"));
  return ops::add(tape, embedded, model.params.at("decoder.mask_token"));
}

namespace {

DecodeResult decode_cross(Tape* tape, const MspModel& model, const PointCloud& cloud,
                          const MaskResult& mask, const EncodeResult& encoded,
                          bool refine_remaining) {
  const auto& cfg = model.cfg;
  DecodeResult result;
  result.ids = mask.masked_idx;

  const std::vector<Vec3> qpos = gather_positions(cloud, mask.masked_idx);
  const std::vector<Vec3> kpos = gather_positions(cloud, encoded.ids);
  const KnnTable cross_table = knn_search(qpos, kpos, cfg.model_k);
  KnnTable self_table;
  if (refine_remaining) self_table = knn_search(kpos, kpos, cfg.model_k);

  Tensor x = build_mask_queries(tape, model, cloud, mask.masked_idx);
  Tensor kv = encoded.feats;

  for (int i = 0; i < cfg.model_blocks; ++i) {
    if (refine_remaining) {
      const std::string rprefix = "decoder.refine" + std::to_string(i);
      const AttentionBlockRef rref = attention_block_ref(model.params, rprefix);
      kv = attention_block_forward(tape, rref, kv, kv, kpos, kpos, self_table,
                                   cfg.model_heads, cfg.model_ln_eps);
      push_trace(result.trace, rprefix, encoded.ids, encoded.ids, self_table);
    }
    const std::string prefix = "decoder.block" + std::to_string(i);
    const AttentionBlockRef ref = attention_block_ref(model.params, prefix);
    x = attention_block_forward(tape, ref, x, kv, qpos, kpos, cross_table, cfg.model_heads,
                                cfg.model_ln_eps);
    push_trace(result.trace, prefix, mask.masked_idx, encoded.ids, cross_table);
  }
  result.feats = x;
  return result;
}

DecodeResult decode_self(Tape* tape, const MspModel& model, const PointCloud& cloud,
                         const MaskResult& mask, const EncodeResult& encoded,
                         uint64_t step_seed) {
  const auto& cfg = model.cfg;
  const int64_t n = static_cast<int64_t>(cloud.size());
  const int64_t s = std::min<int64_t>(cfg.model_keypoints, n);

  // Uniform keypoint subsample over the whole cloud, mask-agnostic.
  std::vector<int> pool(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = static_cast<int>(i);
  Rng rng = derived_rng(step_seed, "sa-keypoints");
  for (int64_t i = 0; i < s; ++i) {
    const int64_t j = i + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  std::vector<int> sampled(pool.begin(), pool.begin() + s);
  std::sort(sampled.begin(), sampled.end());

  // Row lookup: encoder rows for remaining points, mask queries otherwise.
  std::vector<int> row_of(static_cast<size_t>(n), -1);
  for (size_t r = 0; r < encoded.ids.size(); ++r)
    row_of[static_cast<size_t>(encoded.ids[r])] = static_cast<int>(r);
  const int64_t n_rem = static_cast<int64_t>(encoded.ids.size());
  for (size_t r = 0; r < mask.masked_idx.size(); ++r)
    row_of[static_cast<size_t>(mask.masked_idx[r])] = static_cast<int>(n_rem) + static_cast<int>(r);

  Tensor queries = build_mask_queries(tape, model, cloud, mask.masked_idx);
  Tensor combined = ops::concat_rows(tape, encoded.feats, queries);

  std::vector<int> union_rows;
  union_rows.reserve(sampled.size());
  for (int id : sampled) {
    require(row_of[static_cast<size_t>(id)] >= 0, ErrorKind::contract,
            "sampled point is neither masked nor remaining");
    union_rows.push_back(row_of[static_cast<size_t>(id)]);
  }
  Tensor x = ops::gather_rows(tape, combined, union_rows);

  DecodeResult result;
  result.sa_keypoints = sampled;

  const std::vector<Vec3> pos = gather_positions(cloud, sampled);
  const KnnTable table = knn_search(pos, pos, cfg.model_k);
  for (int i = 0; i < cfg.model_blocks; ++i) {
    const std::string prefix = "decoder.block" + std::to_string(i);
    const AttentionBlockRef ref = attention_block_ref(model.params, prefix);
    x = attention_block_forward(tape, ref, x, x, pos, pos, table, cfg.model_heads,
                                cfg.model_ln_eps);
    push_trace(result.trace, prefix, sampled, sampled, table);
  }

  // Supervision only on sampled masked keypoints.
  std::vector<uint8_t> is_masked(static_cast<size_t>(n), 0);
  for (int id : mask.masked_idx) is_masked[static_cast<size_t>(id)] = 1;
  std::vector<int> sup_rows;
  for (size_t r = 0; r < sampled.size(); ++r) {
    if (is_masked[static_cast<size_t>(sampled[r])]) {
      sup_rows.push_back(static_cast<int>(r));
      result.ids.push_back(sampled[r]);
    }
  }
  require(!sup_rows.empty(), ErrorKind::degenerate_target,
          "keypoint subsample contains no masked points");
  result.feats = ops::gather_rows(tape, x, sup_rows);
  return result;
}

}  // namespace

DecodeResult decode_features(Tape* tape, const MspModel& model, const PointCloud& cloud,
                             const MaskResult& mask, const EncodeResult& encoded,
                             uint64_t step_seed) {
  require(!mask.masked_idx.empty(), ErrorKind::degenerate_mask, "nothing is masked");
  switch (parse_arch(model.cfg.model_arch)) {
    case DecoderArch::ca:
      return decode_cross(tape, model, cloud, mask, encoded, false);
    case DecoderArch::ca_pp:
      return decode_cross(tape, model, cloud, mask, encoded, true);
    case DecoderArch::sa:
      return decode_self(tape, model, cloud, mask, encoded, step_seed);
  }
  fail(ErrorKind::contract, "unreachable");
}

HeadOutputs apply_heads(Tape* tape, const MspModel& model, const Tensor& feats) {
  const auto& cfg = model.cfg;
  HeadOutputs out;
  if (cfg.target_sc || cfg.target_dsf) {
    Tensor shape = ops::matmul(tape, feats, model.params.at("head.shape.w"));
    shape = ops::add(tape, shape, model.params.at("head.shape.b"));
    const int64_t bits = cfg.target_sc ? model.sc_bits : 0;
    if (cfg.target_sc) out.sc_logits = ops::slice_cols(tape, shape, 0, bits);
    if (cfg.target_dsf)
      out.dsf = ops::slice_cols(tape, shape, bits, bits + cfg.model_width);
  }
  if (cfg.target_color) {
    Tensor c = ops::matmul(tape, feats, model.params.at("head.color.w"));
    out.color = ops::add(tape, c, model.params.at("head.color.b"));
  }
  if (cfg.target_pointset) {
    Tensor p = ops::matmul(tape, feats, model.params.at("head.pointset.w"));
    p = ops::add(tape, p, model.params.at("head.pointset.b"));
    // Offsets bounded to the prediction ball.
    out.pointset = ops::scale(tape, ops::tanh(tape, p), cfg.pointset_radius);
  }
  return out;
}

}  // namespace msp
