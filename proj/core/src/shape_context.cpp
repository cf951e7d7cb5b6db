#include "msp/shape_context.hpp"

#include <algorithm>
#include <cmath>

#include "msp/error.hpp"
#include "msp/parallel.hpp"
#include "msp/spatial_grid.hpp"
#include "msp/text.hpp"

namespace msp {

namespace {

void check_partition(const ScPartition& part) {
  require(part.n_theta >= 1 && part.n_phi >= 1 && part.n_rad >= 1,
          ErrorKind::invalid_spec, "partition bin counts must be >= 1");
  require(part.radius > 0.0, ErrorKind::invalid_spec, "partition radius must be positive");
  require(part.xi > 0.0, ErrorKind::invalid_spec, "partition xi must be positive");
}

}  // namespace

std::optional<std::array<int, 3>> sc_bin(const Vec3& offset, const ScPartition& part) {
  check_partition(part);
  const double d = offset.norm();
  if (d == 0.0 || d >= part.radius) return std::nullopt;

  const double theta = std::acos(std::clamp(offset.z / d, -1.0, 1.0));
  double phi = (offset.x == 0.0 && offset.y == 0.0) ? 0.0 : std::atan2(offset.y, offset.x);
  if (phi < 0.0) phi += 2.0 * M_PI;

  const double r_num = std::log(d + part.xi) - std::log(part.xi);
  const double r_den = std::log(part.radius + part.xi) - std::log(part.xi);

  std::array<int, 3> bin;
  bin[0] = std::min(static_cast<int>(std::floor(theta / M_PI * part.n_theta)), part.n_theta - 1);
  bin[1] = std::min(static_cast<int>(std::floor(phi / (2.0 * M_PI) * part.n_phi)), part.n_phi - 1);
  bin[2] = std::min(static_cast<int>(std::floor(r_num / r_den * part.n_rad)), part.n_rad - 1);
  return bin;
}

int sc_bin_flat(const std::array<int, 3>& bin, const ScPartition& part) {
  return (bin[0] * part.n_phi + bin[1]) * part.n_rad + bin[2];
}

std::vector<uint8_t> shape_context(const Vec3& center, const std::vector<Vec3>& positions,
                                   const ScPartition& part) {
  check_partition(part);
  std::vector<uint8_t> bits(static_cast<size_t>(part.bins()), 0);
  for (const auto& p : positions) {
    if (auto bin = sc_bin(p - center, part)) {
      bits[static_cast<size_t>(sc_bin_flat(*bin, part))] = 1;
    }
  }
  return bits;
}

ScMatrix multiscale_shape_context(const std::vector<Vec3>& centers,
                                  const std::vector<Vec3>& positions,
                                  const std::vector<ScPartition>& parts,
                                  int threads) {
  require(!parts.empty(), ErrorKind::invalid_spec, "need at least one partition");
  double max_radius = 0.0;
  for (const auto& part : parts) {
    check_partition(part);
    max_radius = std::max(max_radius, part.radius);
  }

  ScMatrix m;
  m.row_bits = total_bins(parts);
  m.rows = centers.size();
  m.bits.assign(m.rows * static_cast<size_t>(m.row_bits), 0);
  if (centers.empty()) return m;

  // One shared grid at the largest radius; per-partition membership is
  // re-tested against each partition's own radius.
  SpatialGrid grid(positions, max_radius);

  parallel_for(static_cast<int64_t>(centers.size()), threads, [&](int64_t ci) {
    std::vector<int> neighbors;
    grid.query_ball(centers[static_cast<size_t>(ci)], max_radius, neighbors);
    uint8_t* row = m.bits.data() + static_cast<size_t>(ci) * static_cast<size_t>(m.row_bits);
    int base = 0;
    for (const auto& part : parts) {
      for (int idx : neighbors) {
        const Vec3 off = positions[static_cast<size_t>(idx)] - centers[static_cast<size_t>(ci)];
        if (auto bin = sc_bin(off, part)) {
          row[base + sc_bin_flat(*bin, part)] = 1;
        }
      }
      base += part.bins();
    }
  });
  return m;
}

std::vector<ScPartition> parse_partitions(const std::string& text, double radius, double xi) {
  std::vector<ScPartition> parts;
  size_t start = 0;
  while (start <= text.size()) {
    size_t end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const std::string_view item = trim(std::string_view(text).substr(start, end - start));
    if (!item.empty()) {
      const size_t a = item.find('x');
      const size_t b = a == std::string_view::npos ? std::string_view::npos : item.find('x', a + 1);
      require(a != std::string_view::npos && b != std::string_view::npos,
              ErrorKind::parse, "partition must look like 2x4x3, got '" + std::string(item) + "'");
      ScPartition part;
      part.n_theta = static_cast<int>(parse_int(item.substr(0, a), "partition list"));
      part.n_phi = static_cast<int>(parse_int(item.substr(a + 1, b - a - 1), "partition list"));
      part.n_rad = static_cast<int>(parse_int(item.substr(b + 1), "partition list"));
      part.radius = radius;
      part.xi = xi;
      check_partition(part);
      parts.push_back(part);
    }
    if (end == text.size()) break;
    start = end + 1;
  }
  require(!parts.empty(), ErrorKind::parse, "empty partition list");
  return parts;
}

}  // namespace msp
