#pragma once

#include <cstdint>
#include <optional>

#include "msp/cloud.hpp"

namespace msp {

// Deterministic cloud augmentation. Transforms apply in the order
// rotation, flips, jitter; colors and labels pass through untouched.
// flip_x mirrors x (x -> -x), flip_y mirrors y. rotation_z is radians about
// +z; when unset and random_rotation is true, an angle is drawn uniformly
// from [0, 2*pi) using the embedded seed. jitter_sigma adds isotropic
// per-point gaussian noise.
struct AugmentSpec {
  double jitter_sigma = 0.0;
  bool flip_x = false;
  bool flip_y = false;
  std::optional<double> rotation_z;
  bool random_rotation = false;
  uint64_t seed = 0;
};

PointCloud augment(const PointCloud& cloud, const AugmentSpec& spec);

}  // namespace msp
