#pragma once

#include <cstdint>

#include "msp/cloud.hpp"

namespace msp {

// Class ids used for labels and for the linear probe.
enum SceneClass : int {
  class_plane = 0,
  class_box = 1,
  class_sphere = 2,
  class_cylinder = 3,
};
inline constexpr int scene_class_count = 4;

// Layout of one synthetic tabletop scene: primitive surfaces scattered in an
// extent x extent footprint, each sampled with exactly points_per_primitive
// points, surface noise applied along the local normal and clamped to
// 4 * noise_sigma. Same spec + same seed => identical cloud.
struct SyntheticSceneSpec {
  int planes = 1;
  int boxes = 1;
  int spheres = 1;
  int cylinders = 1;
  int points_per_primitive = 200;
  double extent = 4.0;        // metres
  double noise_sigma = 0.005; // metres; 0 disables noise
  uint64_t seed = 0;
};

// Generated clouds always carry labels and colors. Colors follow a per-class
// palette with instance and point jitter, which gives the color objective a
// learnable signal on synthetic data.
PointCloud generate_scene(const SyntheticSceneSpec& spec);

}  // namespace msp
