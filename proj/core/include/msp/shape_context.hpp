#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msp/vec3.hpp"

namespace msp {

// One angular/radial partition of the ball of radius `radius` around a
// center. Bins: polar angle from +z into n_theta, azimuth into n_phi,
// log-scaled distance into n_rad with offset xi. The default pair
// (2x4x3, 4x8x5) gives 24 + 160 = 184 bits.
struct ScPartition {
  int n_theta = 2;
  int n_phi = 4;
  int n_rad = 3;
  double radius = 0.15;
  double xi = 0.3;

  int bins() const { return n_theta * n_phi * n_rad; }
};

// Bin of a neighbor at offset = neighbor - center, or nullopt when the
// neighbor does not participate: zero offset (the center itself) or
// |offset| >= radius (open ball).
//   b_theta = floor(theta / pi * n_theta)
//   b_phi   = floor(phi / (2 pi) * n_phi),  phi = atan2(y, x) wrapped to [0, 2 pi)
//   b_rad   = floor((log(d + xi) - log xi) / (log(radius + xi) - log xi) * n_rad)
// each clamped to its last bin. Points on the +z axis get phi = 0.
std::optional<std::array<int, 3>> sc_bin(const Vec3& offset, const ScPartition& part);

// Row-major flattening: (b_theta * n_phi + b_phi) * n_rad + b_rad.
int sc_bin_flat(const std::array<int, 3>& bin, const ScPartition& part);

// Binary occupancy of one partition: bit b is 1 iff at least one point in
// `positions` falls into bin b relative to `center`.
std::vector<uint8_t> shape_context(const Vec3& center, const std::vector<Vec3>& positions,
                                   const ScPartition& part);

inline int total_bins(const std::vector<ScPartition>& parts) {
  int n = 0;
  for (const auto& p : parts) n += p.bins();
  return n;
}

// Descriptors for many centers against one support set, partitions
// concatenated in order. Row i covers centers[i]; rows are total_bins wide.
struct ScMatrix {
  int row_bits = 0;
  size_t rows = 0;
  std::vector<uint8_t> bits;  // rows * row_bits, row-major

  const uint8_t* row(size_t i) const { return bits.data() + i * static_cast<size_t>(row_bits); }
};

ScMatrix multiscale_shape_context(const std::vector<Vec3>& centers,
                                  const std::vector<Vec3>& positions,
                                  const std::vector<ScPartition>& parts,
                                  int threads = 1);

// "2x4x3,4x8x5" -> partition list with shared radius/xi.
std::vector<ScPartition> parse_partitions(const std::string& text, double radius, double xi);

}  // namespace msp
