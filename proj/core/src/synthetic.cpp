#include "msp/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "msp/error.hpp"
#include "msp/rng.hpp"

namespace msp {

namespace {

struct Surface {
  int cls;
  Vec3 base_color;
  // Returns a point on the surface plus its outward unit normal.
  virtual void sample(Rng& rng, Vec3& p, Vec3& n) const = 0;
  virtual ~Surface() = default;
  Surface(int c, Vec3 col) : cls(c), base_color(col) {}
};

Vec3 rotate_z(const Vec3& v, double c, double s) {
  return {c * v.x - s * v.y, s * v.x + c * v.y, v.z};
}

struct PlaneSurface : Surface {
  Vec3 center;
  double half_a, half_b, cos_yaw, sin_yaw;
  PlaneSurface(Vec3 col, Vec3 c, double a, double b, double yaw)
      : Surface(class_plane, col), center(c), half_a(a), half_b(b),
        cos_yaw(std::cos(yaw)), sin_yaw(std::sin(yaw)) {}
  void sample(Rng& rng, Vec3& p, Vec3& n) const override {
    Vec3 local{rng.uniform(-half_a, half_a), rng.uniform(-half_b, half_b), 0.0};
    p = center + rotate_z(local, cos_yaw, sin_yaw);
    n = {0.0, 0.0, 1.0};
  }
};

struct BoxSurface : Surface {
  Vec3 center, half;
  double cos_yaw, sin_yaw;
  double face_cdf[6];
  BoxSurface(Vec3 col, Vec3 c, Vec3 h, double yaw)
      : Surface(class_box, col), center(c), half(h),
        cos_yaw(std::cos(yaw)), sin_yaw(std::sin(yaw)) {
    // Opposite faces share an area; sampling is area-weighted.
    const double ax = half.y * half.z, ay = half.x * half.z, az = half.x * half.y;
    const double areas[6] = {ax, ax, ay, ay, az, az};
    double acc = 0.0;
    for (int i = 0; i < 6; ++i) { acc += areas[i]; face_cdf[i] = acc; }
    for (int i = 0; i < 6; ++i) face_cdf[i] /= acc;
  }
  void sample(Rng& rng, Vec3& p, Vec3& n) const override {
    const double u = rng.uniform();
    int face = 0;
    while (face < 5 && u >= face_cdf[face]) ++face;
    const int axis = face / 2;
    const double sign = (face % 2 == 0) ? 1.0 : -1.0;
    Vec3 local{rng.uniform(-half.x, half.x), rng.uniform(-half.y, half.y),
               rng.uniform(-half.z, half.z)};
    Vec3 normal{0.0, 0.0, 0.0};
    local[axis] = sign * half[axis];
    normal[axis] = sign;
    p = center + rotate_z(local, cos_yaw, sin_yaw);
    n = rotate_z(normal, cos_yaw, sin_yaw);
  }
};

struct SphereSurface : Surface {
  Vec3 center;
  double radius;
  SphereSurface(Vec3 col, Vec3 c, double r)
      : Surface(class_sphere, col), center(c), radius(r) {}
  void sample(Rng& rng, Vec3& p, Vec3& n) const override {
    // Normalized gaussian triple is uniform on the sphere.
    Vec3 d{rng.normal(), rng.normal(), rng.normal()};
    double len = d.norm();
    while (len < 1e-12) {
      d = {rng.normal(), rng.normal(), rng.normal()};
      len = d.norm();
    }
    n = d * (1.0 / len);
    p = center + n * radius;
  }
};

struct CylinderSurface : Surface {
  Vec3 base;  // center of the bottom rim
  double radius, height;
  CylinderSurface(Vec3 col, Vec3 b, double r, double h)
      : Surface(class_cylinder, col), base(b), radius(r), height(h) {}
  void sample(Rng& rng, Vec3& p, Vec3& n) const override {
    const double a = rng.uniform(0.0, 2.0 * M_PI);
    n = {std::cos(a), std::sin(a), 0.0};
    p = base + n * radius;
    p.z += rng.uniform(0.0, height);
  }
};

Vec3 jitter_color(Rng& rng, const Vec3& c, double amount) {
  Vec3 out{c.x + rng.uniform(-amount, amount), c.y + rng.uniform(-amount, amount),
           c.z + rng.uniform(-amount, amount)};
  out.x = std::clamp(out.x, 0.0, 1.0);
  out.y = std::clamp(out.y, 0.0, 1.0);
  out.z = std::clamp(out.z, 0.0, 1.0);
  return out;
}

constexpr Vec3 kPalette[scene_class_count] = {
    {0.75, 0.25, 0.25},  // plane
    {0.25, 0.70, 0.30},  // box
    {0.25, 0.35, 0.80},  // sphere
    {0.80, 0.75, 0.25},  // cylinder
};

}  // namespace

PointCloud generate_scene(const SyntheticSceneSpec& spec) {
  require(spec.planes >= 0 && spec.boxes >= 0 && spec.spheres >= 0 && spec.cylinders >= 0,
          ErrorKind::invalid_spec, "negative primitive count");
  const int total = spec.planes + spec.boxes + spec.spheres + spec.cylinders;
  require(total >= 1, ErrorKind::invalid_spec, "scene needs at least one primitive");
  require(spec.points_per_primitive >= 1, ErrorKind::invalid_spec,
          "points_per_primitive must be >= 1");
  require(spec.extent > 0.0, ErrorKind::invalid_spec, "extent must be positive");
  require(spec.noise_sigma >= 0.0, ErrorKind::invalid_spec, "noise_sigma must be >= 0");

  Rng layout = derived_rng(spec.seed, "scene-layout");
  const double e = spec.extent;

  auto place = [&](double margin, double zmax) {
    return Vec3{layout.uniform(margin, e - margin), layout.uniform(margin, e - margin),
                layout.uniform(0.0, zmax)};
  };

  std::vector<std::unique_ptr<Surface>> surfaces;
  for (int i = 0; i < spec.planes; ++i) {
    const Vec3 col = jitter_color(layout, kPalette[class_plane], 0.08);
    Vec3 c = place(0.6, 0.5 * e);
    surfaces.push_back(std::make_unique<PlaneSurface>(
        col, c, layout.uniform(0.3, 0.6), layout.uniform(0.3, 0.6),
        layout.uniform(0.0, 2.0 * M_PI)));
  }
  for (int i = 0; i < spec.boxes; ++i) {
    const Vec3 col = jitter_color(layout, kPalette[class_box], 0.08);
    Vec3 half{layout.uniform(0.15, 0.4), layout.uniform(0.15, 0.4), layout.uniform(0.15, 0.4)};
    Vec3 c = place(0.5, 0.4 * e);
    c.z += half.z;
    surfaces.push_back(std::make_unique<BoxSurface>(col, c, half,
                                                    layout.uniform(0.0, 2.0 * M_PI)));
  }
  for (int i = 0; i < spec.spheres; ++i) {
    const Vec3 col = jitter_color(layout, kPalette[class_sphere], 0.08);
    const double r = layout.uniform(0.15, 0.35);
    Vec3 c = place(0.45, 0.4 * e);
    c.z += r;
    surfaces.push_back(std::make_unique<SphereSurface>(col, c, r));
  }
  for (int i = 0; i < spec.cylinders; ++i) {
    const Vec3 col = jitter_color(layout, kPalette[class_cylinder], 0.08);
    Vec3 b = place(0.4, 0.3 * e);
    surfaces.push_back(std::make_unique<CylinderSurface>(
        col, b, layout.uniform(0.1, 0.3), layout.uniform(0.4, 1.0)));
  }

  PointCloud cloud;
  const size_t n = static_cast<size_t>(total) * static_cast<size_t>(spec.points_per_primitive);
  cloud.positions.reserve(n);
  cloud.colors.reserve(n);
  cloud.labels.reserve(n);

  const double clamp = 4.0 * spec.noise_sigma;
  for (size_t s = 0; s < surfaces.size(); ++s) {
    Rng rng = derived_rng(spec.seed, "scene-points", s);
    const Surface& surf = *surfaces[s];
    for (int i = 0; i < spec.points_per_primitive; ++i) {
      Vec3 p, normal;
      surf.sample(rng, p, normal);
      if (spec.noise_sigma > 0.0) {
        const double off = std::clamp(rng.normal(0.0, spec.noise_sigma), -clamp, clamp);
        p += normal * off;
      }
      cloud.positions.push_back(p);
      cloud.colors.push_back(jitter_color(rng, surf.base_color, 0.02));
      cloud.labels.push_back(surf.cls);
    }
  }
  return cloud;
}

}  // namespace msp
