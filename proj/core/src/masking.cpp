#include "msp/masking.hpp"

#include <algorithm>
#include <cmath>

#include "msp/error.hpp"
#include "msp/rng.hpp"

namespace msp {

BlockIndex block_of(const Vec3& p, const Vec3& origin, const Vec3& aabb_max, double w) {
  BlockIndex b;
  for (int a = 0; a < 3; ++a) {
    const double off = p[a] - origin[a];
    int idx = static_cast<int>(std::floor(off / w));
    // Upper-face clamp: the aabb max plane belongs to the last block.
    if (idx > 0 && p[a] == aabb_max[a] && off == idx * w) --idx;
    b[a] = idx;
  }
  return b;
}

BlockGrid build_block_grid(const PointCloud& cloud, double w) {
  require(w > 0.0, ErrorKind::invalid_spec, "block size must be positive");
  require(!cloud.empty(), ErrorKind::contract, "cannot build block grid over empty cloud");
  const Aabb box = bounding_box(cloud);
  BlockGrid grid;
  grid.origin = box.min;
  grid.w = w;
  for (size_t i = 0; i < cloud.size(); ++i) {
    grid.occupancy[block_of(cloud.positions[i], grid.origin, box.max, w)]
        .push_back(static_cast<int>(i));
  }
  return grid;
}

size_t masked_block_count(double ratio, size_t blocks) {
  return static_cast<size_t>(std::floor(ratio * static_cast<double>(blocks) + 0.5));
}

MaskResult apply_mask(const PointCloud& cloud, const MaskSpec& spec, bool allow_degenerate) {
  require(spec.ratio >= 0.0 && spec.ratio <= 1.0, ErrorKind::invalid_spec,
          "mask ratio must be in [0, 1]");
  const BlockGrid grid = build_block_grid(cloud, spec.block);

  std::vector<BlockIndex> blocks;
  blocks.reserve(grid.occupancy.size());
  for (const auto& [key, pts] : grid.occupancy) blocks.push_back(key);
  // std::map iteration is already sorted; the draw below depends only on
  // this order and the seed.

  const size_t m = masked_block_count(spec.ratio, blocks.size());
  Rng rng = derived_rng(spec.seed, "mask-blocks");
  for (size_t i = 0; i < m; ++i) {
    const size_t j = i + static_cast<size_t>(rng.uniform_int(blocks.size() - i));
    std::swap(blocks[i], blocks[j]);
  }

  MaskResult result;
  result.total_blocks = grid.occupancy.size();
  result.masked_blocks.insert(blocks.begin(), blocks.begin() + static_cast<ptrdiff_t>(m));

  for (const auto& [key, pts] : grid.occupancy) {
    auto& dst = result.masked_blocks.count(key) ? result.masked_idx : result.remaining_idx;
    dst.insert(dst.end(), pts.begin(), pts.end());
  }
  std::sort(result.masked_idx.begin(), result.masked_idx.end());
  std::sort(result.remaining_idx.begin(), result.remaining_idx.end());

  if (!allow_degenerate) {
    require(!result.remaining_idx.empty(), ErrorKind::degenerate_mask,
            "mask left no remaining points");
  }
  return result;
}

}  // namespace msp
