#pragma once

#include <vector>

#include "msp/cloud.hpp"
#include "msp/model.hpp"

namespace msp {

// Regression targets for the supervised points, all built without grad from
// the complete (unmasked) cloud:
//   sc_bits:  multi-scale binary shape context over the full geometry
//   dsf:      momentum-encoder features, unit-normalized rows; zero-norm
//             rows are excluded (counted in dsf_excluded)
//   color:    ground-truth colors
//   pointset: offsets of every in-ball neighbor (center excluded); points
//             with an empty neighborhood are excluded, not errors
struct TargetBundle {
  Tensor sc_bits;
  Tensor dsf_unit;
  std::vector<uint8_t> dsf_include;
  int dsf_excluded = 0;
  Tensor color;
  std::vector<std::vector<Vec3>> pointset_offsets;
  std::vector<uint8_t> pointset_include;
  int pointset_empty = 0;
};

TargetBundle compute_targets(const MspModel& model, const PointCloud& cloud,
                             const std::vector<int>& supervised, int threads = 1);

}  // namespace msp
