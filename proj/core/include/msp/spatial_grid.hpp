#pragma once

#include <array>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "msp/vec3.hpp"

namespace msp {

// Uniform hash grid over a fixed point set, for open-ball radius queries.
// Query results are sorted by point index, so callers see a deterministic
// order regardless of hashing internals.
class SpatialGrid {
public:
  SpatialGrid(const std::vector<Vec3>& points, double cell);

  // Indices i with |points[i] - center| < radius, ascending. radius must not
  // exceed the cell size the grid was built with times the supported reach;
  // any radius works, the cell size only affects speed.
  void query_ball(const Vec3& center, double radius, std::vector<int>& out) const;

  std::vector<int> query_ball(const Vec3& center, double radius) const {
    std::vector<int> out;
    query_ball(center, radius, out);
    return out;
  }

  double cell() const { return cell_; }

private:
  struct KeyHash {
    size_t operator()(const std::array<int64_t, 3>& k) const {
      uint64_t h = 0xcbf29ce484222325ull;
      for (int64_t v : k) {
        h ^= static_cast<uint64_t>(v);
        h *= 0x100000001b3ull;
      }
      return static_cast<size_t>(h);
    }
  };

  std::array<int64_t, 3> cell_of(const Vec3& p) const;

  const std::vector<Vec3>& points_;
  double cell_;
  std::unordered_map<std::array<int64_t, 3>, std::vector<int>, KeyHash> cells_;
};

}  // namespace msp
