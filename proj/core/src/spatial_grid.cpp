#include "msp/spatial_grid.hpp"

#include <algorithm>
#include <cmath>

#include "msp/error.hpp"

namespace msp {

SpatialGrid::SpatialGrid(const std::vector<Vec3>& points, double cell)
    : points_(points), cell_(cell) {
  require(cell > 0.0, ErrorKind::contract, "grid cell size must be positive");
  for (size_t i = 0; i < points.size(); ++i) {
    cells_[cell_of(points[i])].push_back(static_cast<int>(i));
  }
}

std::array<int64_t, 3> SpatialGrid::cell_of(const Vec3& p) const {
  return {static_cast<int64_t>(std::floor(p.x / cell_)),
          static_cast<int64_t>(std::floor(p.y / cell_)),
          static_cast<int64_t>(std::floor(p.z / cell_))};
}

void SpatialGrid::query_ball(const Vec3& center, double radius, std::vector<int>& out) const {
  out.clear();
  require(radius >= 0.0, ErrorKind::contract, "query radius must be >= 0");
  if (radius == 0.0 || cells_.empty()) return;
  const double r2 = radius * radius;
  const auto lo = cell_of({center.x - radius, center.y - radius, center.z - radius});
  const auto hi = cell_of({center.x + radius, center.y + radius, center.z + radius});
  std::array<int64_t, 3> key;
  for (key[0] = lo[0]; key[0] <= hi[0]; ++key[0]) {
    for (key[1] = lo[1]; key[1] <= hi[1]; ++key[1]) {
      for (key[2] = lo[2]; key[2] <= hi[2]; ++key[2]) {
        auto it = cells_.find(key);
        if (it == cells_.end()) continue;
        for (int idx : it->second) {
          if ((points_[static_cast<size_t>(idx)] - center).norm2() < r2) out.push_back(idx);
        }
      }
    }
  }
  std::sort(out.begin(), out.end());
}

}  // namespace msp
