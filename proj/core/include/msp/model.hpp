#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msp/cloud.hpp"
#include "msp/config.hpp"
#include "msp/layers.hpp"
#include "msp/masking.hpp"
#include "msp/optim.hpp"
#include "msp/params.hpp"

namespace msp {

enum class DecoderArch { ca, ca_pp, sa };
DecoderArch parse_arch(const std::string& name);

struct MspModel {
  RunConfig cfg;
  ParamStore params;
  EmaTracker ema;   // populated when the deep-feature target is enabled
  int sc_bits = 0;  // descriptor width implied by cfg
};

// Parameter names:
//   encoder.input_token, encoder.geom_embed, encoder.block{i}.*
//   decoder.mask_token, decoder.coord_embed, decoder.block{i}.*,
//   decoder.refine{i}.* (ca_pp only)
//   head.shape.{w,b} (shape context bits and/or deep feature, concatenated)
//   head.color.{w,b}, head.pointset.{w,b} (per enabled target)
// Heads for disabled targets are not created at all.
MspModel build_model(const RunConfig& cfg, uint64_t seed);

// Width of the per-point neighborhood summary fed to the encoder input
// embedding: normalized mean offset (3), normalized offset second moments
// (6), neighborhood radius (1).
inline constexpr int64_t geometry_feature_width = 10;

// Translation-invariant description of each point's k-neighborhood:
// offsets to the table's neighbors, reduced to first and second moments
// and normalized by their rms length. Rows with a degenerate neighborhood
// (all neighbors coincident with the point) are zero.
Tensor local_geometry_features(const std::vector<Vec3>& pos, const KnnTable& table, Dtype dt);

// Per attention application: which global point each query row corresponds
// to and which global points were available as keys (nq * k flattened).
// Structure tests assert masked/remaining separation on these.
struct AttentionTraceEntry {
  std::string label;
  std::vector<int> query_ids;
  std::vector<int> key_ids;
};
using AttentionTrace = std::vector<AttentionTraceEntry>;

struct EncodeResult {
  Tensor feats;          // [n, width], rows aligned with ids
  std::vector<int> ids;  // global cloud indices
  AttentionTrace trace;
};

// Feature extractor over the given subset of the cloud. Each point enters
// as a shared learned token plus an embedding of its local neighborhood
// geometry; absolute coordinates and colors never reach the encoder, so
// the features describe local shape and transfer across scenes.
EncodeResult encode_points(Tape* tape, const MspModel& model, const ParamStore& weights,
                           const PointCloud& cloud, const std::vector<int>& ids);

inline EncodeResult encode_remaining(Tape* tape, const MspModel& model,
                                     const PointCloud& cloud, const MaskResult& mask) {
  return encode_points(tape, model, model.params, cloud, mask.remaining_idx);
}

// Masked-point queries: learned token plus a linear embedding of the
// absolute coordinate. [n_masked, width], rows in masked_ids order.
Tensor build_mask_queries(Tape* tape, const MspModel& model, const PointCloud& cloud,
                          const std::vector<int>& masked_ids);

struct DecodeResult {
  Tensor feats;          // [s, width], rows aligned with ids
  std::vector<int> ids;  // supervised masked points, ascending global ids
  AttentionTrace trace;
  std::vector<int> sa_keypoints;  // sa only: the sampled union, ascending
};

// Runs the configured decoder.
//   ca:    every block cross-attends the masked queries onto the fixed
//          encoder output; masked points never key for each other.
//   ca_pp: each block first self-refines the remaining features, then
//          cross-attends onto the refined set.
//   sa:    a uniform keypoint subsample of the whole cloud (step_seed
//          decides) runs through self-attention; only sampled masked
//          points are supervised.
DecodeResult decode_features(Tape* tape, const MspModel& model, const PointCloud& cloud,
                             const MaskResult& mask, const EncodeResult& encoded,
                             uint64_t step_seed);

struct HeadOutputs {
  Tensor sc_logits;  // [s, sc_bits]
  Tensor dsf;        // [s, width]
  Tensor color;      // [s, 3]
  Tensor pointset;   // [s, 3*K], tanh-bounded offsets scaled by the ball radius
};

HeadOutputs apply_heads(Tape* tape, const MspModel& model, const Tensor& feats);

}  // namespace msp
