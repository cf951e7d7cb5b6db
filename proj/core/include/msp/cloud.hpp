#pragma once

#include <filesystem>
#include <vector>

#include "msp/vec3.hpp"

namespace msp {

struct Aabb {
  Vec3 min, max;

  Vec3 extent() const { return max - min; }
  bool contains(const Vec3& p) const {
    return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y &&
           p.z >= min.z && p.z <= max.z;
  }
};

// Point cloud with optional per-point colors in [0,1] and integer labels.
// colors/labels are either empty or exactly positions.size() long; every
// mutation path in this library preserves that.
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;
  std::vector<int> labels;

  size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
  bool has_colors() const { return !colors.empty(); }
  bool has_labels() const { return !labels.empty(); }

  // Throws a contract error if the optional channels disagree in length.
  void check_consistent() const;
};

// Tight axis-aligned bounds. Empty input is a contract error: there is no
// meaningful box and downstream grids would divide by zero extents.
Aabb bounding_box(const std::vector<Vec3>& positions);
inline Aabb bounding_box(const PointCloud& cloud) { return bounding_box(cloud.positions); }

// xyz: one point per line, "x y z" or "x y z r g b", '#' starts a comment.
// Column count must be consistent across the file. Color components are
// taken as already normalized unless any exceeds 1, in which case the whole
// file is treated as 8-bit and divided by 255.
PointCloud load_xyz(const std::filesystem::path& path);
void save_xyz(const PointCloud& cloud, const std::filesystem::path& path);

// ply: ascii 1.0 only, vertex element with float x/y/z and optionally
// uchar red/green/blue (stored as value/255).
PointCloud load_ply(const std::filesystem::path& path);
void save_ply(const PointCloud& cloud, const std::filesystem::path& path);

// Dispatch on extension (.xyz / .ply).
PointCloud load_cloud(const std::filesystem::path& path);
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path);

// Labels live in a sidecar csv ("index,label") so the cloud formats stay
// interchangeable with other tools.
void save_labels(const PointCloud& cloud, const std::filesystem::path& path);
void load_labels(PointCloud& cloud, const std::filesystem::path& path);

}  // namespace msp
