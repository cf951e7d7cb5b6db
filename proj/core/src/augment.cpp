#include "msp/augment.hpp"

#include <cmath>

#include "msp/error.hpp"
#include "msp/rng.hpp"

namespace msp {

PointCloud augment(const PointCloud& cloud, const AugmentSpec& spec) {
  cloud.check_consistent();
  require(spec.jitter_sigma >= 0.0, ErrorKind::invalid_spec, "jitter_sigma must be >= 0");

  double angle = 0.0;
  if (spec.rotation_z) {
    angle = *spec.rotation_z;
  } else if (spec.random_rotation) {
    angle = derived_rng(spec.seed, "augment-rotation").uniform(0.0, 2.0 * M_PI);
  }
  const double c = std::cos(angle), s = std::sin(angle);
  const double sx = spec.flip_x ? -1.0 : 1.0;
  const double sy = spec.flip_y ? -1.0 : 1.0;

  Rng jitter = derived_rng(spec.seed, "augment-jitter");

  PointCloud out = cloud;
  for (auto& p : out.positions) {
    const Vec3 r{c * p.x - s * p.y, s * p.x + c * p.y, p.z};
    p = {sx * r.x, sy * r.y, r.z};
    if (spec.jitter_sigma > 0.0) {
      p.x += jitter.normal(0.0, spec.jitter_sigma);
      p.y += jitter.normal(0.0, spec.jitter_sigma);
      p.z += jitter.normal(0.0, spec.jitter_sigma);
    }
  }
  return out;
}

}  // namespace msp
