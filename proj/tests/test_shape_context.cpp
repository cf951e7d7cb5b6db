#include <cmath>
#include <cstring>
#include <numbers>

#include "doctest.h"
#include "msp/shape_context.hpp"
#include "test_util.hpp"

using namespace msp;

namespace {

// Naive per-point recomputation, no spatial index, no shared work.
std::vector<uint8_t> oracle_descriptor(const Vec3& center, const std::vector<Vec3>& positions,
                                       const std::vector<ScPartition>& parts) {
  std::vector<uint8_t> bits(static_cast<size_t>(total_bins(parts)), 0);
  size_t base = 0;
  for (const auto& part : parts) {
    for (const Vec3& p : positions) {
      const auto bin = sc_bin(p - center, part);
      if (bin) bits[base + static_cast<size_t>(sc_bin_flat(*bin, part))] = 1;
    }
    base += static_cast<size_t>(part.bins());
  }
  return bits;
}

std::vector<ScPartition> default_parts() { return parse_partitions("2x4x3,4x8x5", 0.15, 0.3); }

// Places one point in the middle of every bin of the partition.
std::vector<Vec3> bin_center_points(const Vec3& center, const ScPartition& part) {
  std::vector<Vec3> pts;
  const double pi = std::numbers::pi;
  const double denom = std::log((part.radius + part.xi) / part.xi);
  for (int bt = 0; bt < part.n_theta; ++bt)
    for (int bp = 0; bp < part.n_phi; ++bp)
      for (int br = 0; br < part.n_rad; ++br) {
        const double theta = (bt + 0.5) / part.n_theta * pi;
        const double phi = (bp + 0.5) / part.n_phi * 2 * pi;
        // Invert the log warp at the radial bin midpoint.
        const double u = (br + 0.5) / part.n_rad;
        const double d = part.xi * std::exp(u * denom) - part.xi;
        pts.push_back(center + Vec3{d * std::sin(theta) * std::cos(phi),
                                    d * std::sin(theta) * std::sin(phi),
                                    d * std::cos(theta)});
      }
  return pts;
}

}  // namespace

TEST_CASE("bin index on worked scalar cases") {
  ScPartition part;  // 2x4x3, R=0.15, xi=0.3
  // Offset straight up at half radius: theta=0, phi treated as 0,
  // radial floor((ln 1.25 / ln 1.5) * 3) = 1.
  auto bin = sc_bin({0, 0, 0.075}, part);
  REQUIRE(bin.has_value());
  CHECK(*bin == std::array<int, 3>{0, 0, 1});

  // Straight down: theta = pi clamps into the last polar sector.
  auto down = sc_bin({0, 0, -0.05}, part);
  REQUIRE(down.has_value());
  CHECK((*down)[0] == part.n_theta - 1);

  // Open ball: exactly R is out, and the center itself is out.
  CHECK(!sc_bin({0, 0, 0.15}, part).has_value());
  CHECK(!sc_bin({0, 0, 0}, part).has_value());
  CHECK(sc_bin({0, 0, 0.149999}, part).has_value());
}

TEST_CASE("azimuth convention covers all quadrants") {
  ScPartition part;
  part.n_theta = 1;
  part.n_phi = 4;
  part.n_rad = 1;
  const double d = 0.1;
  CHECK((*sc_bin({d, 0.001, 0}, part))[1] == 0);
  CHECK((*sc_bin({-0.001, d, 0}, part))[1] == 1);
  CHECK((*sc_bin({-d, -0.001, 0}, part))[1] == 2);
  CHECK((*sc_bin({0.001, -d, 0}, part))[1] == 3);
}

TEST_CASE("empty neighborhood gives a zero descriptor") {
  ScPartition part;
  std::vector<Vec3> far = {{10, 10, 10}};
  auto bits = shape_context({0, 0, 0}, far, part);
  for (uint8_t b : bits) CHECK(b == 0);
}

TEST_CASE("a point in every bin saturates the descriptor") {
  ScPartition part;
  const Vec3 center{1, 2, 3};
  auto bits = shape_context(center, bin_center_points(center, part), part);
  REQUIRE(bits.size() == static_cast<size_t>(part.bins()));
  for (uint8_t b : bits) CHECK(b == 1);
}

TEST_CASE("single partition matches the naive oracle on random neighbors") {
  ScPartition part;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    PointCloud cloud = msp::test::random_cloud(50, 0.25, seed * 13 + 1);
    const Vec3 center{0.12, 0.12, 0.12};
    auto got = shape_context(center, cloud.positions, part);
    auto want = oracle_descriptor(center, cloud.positions, {part});
    CHECK(got == want);
  }
}

TEST_CASE("default partitions produce 184-bit rows") {
  auto parts = default_parts();
  CHECK(total_bins(parts) == 184);
  PointCloud cloud = msp::test::random_cloud(100, 0.5, 4);
  ScMatrix m = multiscale_shape_context({cloud.positions[0]}, cloud.positions, parts);
  CHECK(m.row_bits == 184);
  CHECK(m.rows == 1);
}

TEST_CASE("1x1x1 partition is an any-neighbor-within-R test") {
  auto parts = parse_partitions("1x1x1", 0.15, 0.3);
  std::vector<Vec3> pts = {{0, 0, 0}, {0.1, 0, 0}, {5, 5, 5}};
  ScMatrix m = multiscale_shape_context({{0, 0, 0}, {5, 5, 5.2}, {9, 9, 9}}, pts, parts);
  REQUIRE(m.row_bits == 1);
  CHECK(m.row(0)[0] == 1);  // sees the 0.1 neighbor
  CHECK(m.row(1)[0] == 0);  // nearest neighbor at 0.2 > R
  CHECK(m.row(2)[0] == 0);  // nothing anywhere near
}

TEST_CASE("indexed search equals exhaustive search on a large cloud") {
  auto parts = default_parts();
  PointCloud cloud = msp::test::random_cloud(10000, 2.0, 99);
  std::vector<Vec3> centers(cloud.positions.begin(), cloud.positions.begin() + 200);
  ScMatrix m = multiscale_shape_context(centers, cloud.positions, parts);
  for (size_t i = 0; i < centers.size(); ++i) {
    auto want = oracle_descriptor(centers[i], cloud.positions, parts);
    CHECK(std::memcmp(m.row(i), want.data(), want.size()) == 0);
  }
}

TEST_CASE("threaded computation matches single-thread bit for bit") {
  auto parts = default_parts();
  PointCloud cloud = msp::test::random_cloud(2000, 1.0, 41);
  std::vector<Vec3> centers(cloud.positions.begin(), cloud.positions.begin() + 300);
  ScMatrix one = multiscale_shape_context(centers, cloud.positions, parts, 1);
  ScMatrix four = multiscale_shape_context(centers, cloud.positions, parts, 4);
  CHECK(one.bits == four.bits);
}

TEST_CASE("descriptor sees occupancy, not density") {
  auto parts = default_parts();
  PointCloud cloud = msp::test::random_cloud(80, 0.4, 8);
  const Vec3 center{0.2, 0.2, 0.2};
  auto base = oracle_descriptor(center, cloud.positions, parts);

  std::vector<Vec3> doubled = cloud.positions;
  doubled.insert(doubled.end(), cloud.positions.begin(), cloud.positions.end());
  ScMatrix m = multiscale_shape_context({center}, doubled, parts);
  CHECK(std::memcmp(m.row(0), base.data(), base.size()) == 0);
}

TEST_CASE("rotation by one azimuth sector permutes azimuth bins cyclically") {
  ScPartition part;  // n_phi = 4 -> rotate by pi/2
  const double step = 2 * std::numbers::pi / part.n_phi;
  PointCloud cloud = msp::test::random_cloud(60, 0.2, 15);
  const Vec3 center{0.1, 0.1, 0.1};

  auto base = shape_context(center, cloud.positions, part);
  std::vector<Vec3> rotated;
  for (const Vec3& p : cloud.positions) {
    const Vec3 off = p - center;
    rotated.push_back(center + Vec3{off.x * std::cos(step) - off.y * std::sin(step),
                                    off.x * std::sin(step) + off.y * std::cos(step), off.z});
  }
  auto rot = shape_context(center, rotated, part);
  for (int bt = 0; bt < part.n_theta; ++bt)
    for (int bp = 0; bp < part.n_phi; ++bp)
      for (int br = 0; br < part.n_rad; ++br) {
        const int from = sc_bin_flat({bt, bp, br}, part);
        const int to = sc_bin_flat({bt, (bp + 1) % part.n_phi, br}, part);
        CHECK(rot[static_cast<size_t>(to)] == base[static_cast<size_t>(from)]);
      }
}

TEST_CASE("adding points never clears occupancy bits") {
  auto parts = default_parts();
  for (uint64_t seed = 0; seed < 10; ++seed) {
    PointCloud small = msp::test::random_cloud(40, 0.3, seed + 70);
    PointCloud extra = msp::test::random_cloud(40, 0.3, seed + 170);
    const Vec3 center{0.15, 0.15, 0.15};
    auto base = oracle_descriptor(center, small.positions, parts);
    std::vector<Vec3> merged = small.positions;
    merged.insert(merged.end(), extra.positions.begin(), extra.positions.end());
    auto grown = oracle_descriptor(center, merged, parts);
    for (size_t b = 0; b < base.size(); ++b)
      if (base[b] == 1) CHECK(grown[b] == 1);
  }
}

TEST_CASE("oracle equivalence over a thousand random centers") {
  auto parts = default_parts();
  size_t checked = 0;
  for (uint64_t scene = 0; scene < 25; ++scene) {
    PointCloud cloud = msp::test::random_cloud(150, 0.8, scene * 7 + 3);
    std::vector<Vec3> centers(cloud.positions.begin(), cloud.positions.begin() + 45);
    ScMatrix m = multiscale_shape_context(centers, cloud.positions, parts);
    for (size_t i = 0; i < centers.size(); ++i) {
      auto want = oracle_descriptor(centers[i], cloud.positions, parts);
      REQUIRE(std::memcmp(m.row(i), want.data(), want.size()) == 0);
      ++checked;
    }
  }
  CHECK(checked >= 1000);
}
