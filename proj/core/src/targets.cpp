#include "msp/targets.hpp"

#include <cmath>

#include "msp/error.hpp"
#include "msp/shape_context.hpp"
#include "msp/spatial_grid.hpp"

namespace msp {

TargetBundle compute_targets(const MspModel& model, const PointCloud& cloud,
                             const std::vector<int>& supervised, int threads) {
  require(!supervised.empty(), ErrorKind::contract, "no supervised points");
  const auto& cfg = model.cfg;
  TargetBundle bundle;
  const size_t s = supervised.size();

  std::vector<Vec3> centers;
  centers.reserve(s);
  for (int id : supervised) {
    require(id >= 0 && static_cast<size_t>(id) < cloud.size(), ErrorKind::contract,
            "supervised id out of range");
    centers.push_back(cloud.positions[static_cast<size_t>(id)]);
  }

  if (cfg.target_sc) {
    const auto parts = cfg.partitions();
    const ScMatrix m = multiscale_shape_context(centers, cloud.positions, parts, threads);
    std::vector<double> vals(m.bits.begin(), m.bits.end());
    bundle.sc_bits = Tensor::constant(
        std::move(vals), {static_cast<int64_t>(s), static_cast<int64_t>(m.row_bits)});
  }

  if (cfg.target_dsf) {
    require(!model.ema.shadow.entries.empty(), ErrorKind::contract,
            "deep feature target needs the ema tracker");
    // Teacher runs the full cloud, untracked; student rows are selected out.
    std::vector<int> all(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) all[i] = static_cast<int>(i);
    const EncodeResult teacher =
        encode_points(nullptr, model, model.ema.shadow, cloud, all);

    const int64_t w = cfg.model_width;
    std::vector<double> rows(s * static_cast<size_t>(w));
    bundle.dsf_include.assign(s, 1);
    for (size_t r = 0; r < s; ++r) {
      const double* src =
          teacher.feats.values().data() + static_cast<int64_t>(supervised[r]) * w;
      double norm2 = 0.0;
      for (int64_t c = 0; c < w; ++c) norm2 += src[c] * src[c];
      if (norm2 <= 0.0) {
        bundle.dsf_include[r] = 0;
        ++bundle.dsf_excluded;
        continue;
      }
      const double inv = 1.0 / std::sqrt(norm2);
      for (int64_t c = 0; c < w; ++c) rows[r * static_cast<size_t>(w) + c] = src[c] * inv;
    }
    bundle.dsf_unit =
        Tensor::constant(std::move(rows), {static_cast<int64_t>(s), w});
  }

  if (cfg.target_color) {
    require(cloud.has_colors(), ErrorKind::degenerate_target,
            "color target enabled but the cloud has no colors");
    std::vector<double> rows;
    rows.reserve(s * 3);
    for (int id : supervised) {
      const Vec3& c = cloud.colors[static_cast<size_t>(id)];
      rows.push_back(c.x);
      rows.push_back(c.y);
      rows.push_back(c.z);
    }
    bundle.color = Tensor::constant(std::move(rows), {static_cast<int64_t>(s), 3});
  }

  if (cfg.target_pointset) {
    SpatialGrid grid(cloud.positions, cfg.pointset_radius);
    bundle.pointset_offsets.resize(s);
    bundle.pointset_include.assign(s, 1);
    std::vector<int> neigh;
    for (size_t r = 0; r < s; ++r) {
      const Vec3& c = centers[r];
      grid.query_ball(c, cfg.pointset_radius, neigh);
      auto& dst = bundle.pointset_offsets[r];
      for (int j : neigh) {
        if (j == supervised[r]) continue;  // the center itself
        const Vec3 off = cloud.positions[static_cast<size_t>(j)] - c;
        if (off.norm2() == 0.0) continue;  // coincident duplicates
        dst.push_back(off);
      }
      if (dst.empty()) {
        bundle.pointset_include[r] = 0;
        ++bundle.pointset_empty;
      }
    }
  }

  return bundle;
}

}  // namespace msp
