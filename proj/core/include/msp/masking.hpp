#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "msp/cloud.hpp"

namespace msp {

using BlockIndex = std::array<int, 3>;

// Partition of a cloud's bounding box into cubic blocks of side w. Only
// blocks that actually contain points are stored. Indexing is
// floor((p - origin) / w) per axis, with one adjustment: a point lying
// exactly on the box's upper face along an axis is clamped down into the
// last block there, so floor never fabricates an extra boundary block.
struct BlockGrid {
  Vec3 origin;
  double w = 0.0;
  std::map<BlockIndex, std::vector<int>> occupancy;  // block -> point indices, ascending

  size_t block_count() const { return occupancy.size(); }
};

BlockIndex block_of(const Vec3& p, const Vec3& origin, const Vec3& aabb_max, double w);

BlockGrid build_block_grid(const PointCloud& cloud, double w);

struct MaskSpec {
  double ratio = 0.6;  // fraction of non-empty blocks to mask
  double block = 0.3;  // block side length, metres
  uint64_t seed = 0;
};

struct MaskResult {
  std::vector<int> masked_idx;     // ascending
  std::vector<int> remaining_idx;  // ascending; complement of masked_idx
  std::set<BlockIndex> masked_blocks;
  size_t total_blocks = 0;
};

// Number of blocks to mask: round(ratio * blocks), half away from zero.
size_t masked_block_count(double ratio, size_t blocks);

// Draws round(ratio * B) of the B non-empty blocks without replacement and
// masks every point inside them. The draw is a seeded shuffle prefix over
// the lexicographically sorted block list, so it depends only on (cloud
// geometry, spec). With allow_degenerate false an empty remaining set is a
// degenerate-mask error; probes that only inspect masked points pass true.
MaskResult apply_mask(const PointCloud& cloud, const MaskSpec& spec,
                      bool allow_degenerate = false);

}  // namespace msp
