#include "msp/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "msp/error.hpp"
#include "msp/text.hpp"

namespace msp {

void PointCloud::check_consistent() const {
  require(colors.empty() || colors.size() == positions.size(), ErrorKind::contract,
          "color channel length mismatch");
  require(labels.empty() || labels.size() == positions.size(), ErrorKind::contract,
          "label channel length mismatch");
}

Aabb bounding_box(const std::vector<Vec3>& positions) {
  require(!positions.empty(), ErrorKind::contract, "bounding_box of empty cloud");
  Aabb box{positions[0], positions[0]};
  for (const auto& p : positions) {
    box.min = cwise_min(box.min, p);
    box.max = cwise_max(box.max, p);
  }
  return box;
}

namespace {

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot write " + path.string());
  return out;
}

}  // namespace

PointCloud load_xyz(const std::filesystem::path& path) {
  auto in = open_in(path);
  PointCloud cloud;
  std::string line;
  int columns = 0;
  size_t line_no = 0;
  double max_color = 0.0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv(line);
    if (auto hash = sv.find('#'); hash != std::string_view::npos) sv = sv.substr(0, hash);
    auto tokens = split_whitespace(sv);
    if (tokens.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    require(tokens.size() == 3 || tokens.size() == 6, ErrorKind::parse,
            "expected 3 or 6 columns, got " + std::to_string(tokens.size()) + " at " + where);
    if (columns == 0) columns = static_cast<int>(tokens.size());
    require(static_cast<int>(tokens.size()) == columns, ErrorKind::parse,
            "inconsistent column count at " + where);
    Vec3 p{parse_double(tokens[0], where), parse_double(tokens[1], where),
           parse_double(tokens[2], where)};
    cloud.positions.push_back(p);
    if (columns == 6) {
      Vec3 c{parse_double(tokens[3], where), parse_double(tokens[4], where),
             parse_double(tokens[5], where)};
      max_color = std::max({max_color, c.x, c.y, c.z});
      cloud.colors.push_back(c);
    }
  }
  if (max_color > 1.0) {
    // 8-bit convention detected; normalize the whole channel.
    for (auto& c : cloud.colors) c = c * (1.0 / 255.0);
  }
  return cloud;
}

void save_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  cloud.check_consistent();
  auto out = open_out(path);
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.positions[i];
    out << format_double(p.x) << ' ' << format_double(p.y) << ' ' << format_double(p.z);
    if (cloud.has_colors()) {
      const Vec3& c = cloud.colors[i];
      out << ' ' << format_double(c.x) << ' ' << format_double(c.y) << ' ' << format_double(c.z);
    }
    out << '\n';
  }
  require(out.good(), ErrorKind::io, "failed writing " + path.string());
}

namespace {

int color_byte(double v) {
  return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

PointCloud load_ply(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  const std::string where = path.string();

  auto next_line = [&](std::string& dst) {
    require(static_cast<bool>(std::getline(in, dst)), ErrorKind::parse,
            "unexpected end of header in " + where);
    if (!dst.empty() && dst.back() == '\r') dst.pop_back();
  };

  next_line(line);
  require(line == "ply", ErrorKind::parse, "missing ply magic in " + where);
  next_line(line);
  require(line == "format ascii 1.0", ErrorKind::parse,
          "only ascii 1.0 is supported, got '" + line + "' in " + where);

  size_t count = 0;
  bool in_vertex = false;
  std::vector<std::string> props;
  for (;;) {
    next_line(line);
    auto tokens = split_whitespace(line);
    if (tokens.empty()) continue;
    if (tokens[0] == "comment") continue;
    if (tokens[0] == "end_header") break;
    if (tokens[0] == "element") {
      require(tokens.size() == 3, ErrorKind::parse, "bad element line in " + where);
      if (tokens[1] == "vertex") {
        count = static_cast<size_t>(parse_int(tokens[2], where));
        in_vertex = true;
      } else {
        fail(ErrorKind::parse, "unsupported element '" + std::string(tokens[1]) + "' in " + where);
      }
      continue;
    }
    if (tokens[0] == "property") {
      require(in_vertex && tokens.size() == 3, ErrorKind::parse, "bad property line in " + where);
      props.emplace_back(tokens[2]);
      continue;
    }
    fail(ErrorKind::parse, "unexpected header line '" + line + "' in " + where);
  }

  const std::vector<std::string> plain = {"x", "y", "z"};
  const std::vector<std::string> colored = {"x", "y", "z", "red", "green", "blue"};
  bool has_colors;
  if (props == plain) has_colors = false;
  else if (props == colored) has_colors = true;
  else fail(ErrorKind::parse, "unsupported vertex property layout in " + where);

  PointCloud cloud;
  cloud.positions.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    next_line(line);
    auto tokens = split_whitespace(line);
    require(tokens.size() == props.size(), ErrorKind::parse,
            "bad vertex line " + std::to_string(i) + " in " + where);
    cloud.positions.push_back({parse_double(tokens[0], where), parse_double(tokens[1], where),
                               parse_double(tokens[2], where)});
    if (has_colors) {
      cloud.colors.push_back({parse_double(tokens[3], where) / 255.0,
                              parse_double(tokens[4], where) / 255.0,
                              parse_double(tokens[5], where) / 255.0});
    }
  }
  return cloud;
}

void save_ply(const PointCloud& cloud, const std::filesystem::path& path) {
  cloud.check_consistent();
  auto out = open_out(path);
  out << "ply\n";
  out << "format ascii 1.0\n";
  out << "element vertex " << cloud.size() << "\n";
  out << "property float x\n";
  out << "property float y\n";
  out << "property float z\n";
  if (cloud.has_colors()) {
    out << "property uchar red\n";
    out << "property uchar green\n";
    out << "property uchar blue\n";
  }
  out << "end_header\n";
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.positions[i];
    out << format_double(p.x) << ' ' << format_double(p.y) << ' ' << format_double(p.z);
    if (cloud.has_colors()) {
      const Vec3& c = cloud.colors[i];
      out << ' ' << color_byte(c.x) << ' ' << color_byte(c.y) << ' ' << color_byte(c.z);
    }
    out << '\n';
  }
  require(out.good(), ErrorKind::io, "failed writing " + path.string());
}

PointCloud load_cloud(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".xyz") return load_xyz(path);
  if (ext == ".ply") return load_ply(path);
  fail(ErrorKind::parse, "unknown cloud extension '" + ext + "' (want .xyz or .ply)");
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".xyz") return save_xyz(cloud, path);
  if (ext == ".ply") return save_ply(cloud, path);
  fail(ErrorKind::parse, "unknown cloud extension '" + ext + "' (want .xyz or .ply)");
}

void save_labels(const PointCloud& cloud, const std::filesystem::path& path) {
  require(cloud.has_labels(), ErrorKind::contract, "cloud has no labels to save");
  auto out = open_out(path);
  out << "index,label\n";
  for (size_t i = 0; i < cloud.labels.size(); ++i) {
    out << i << ',' << cloud.labels[i] << '\n';
  }
  require(out.good(), ErrorKind::io, "failed writing " + path.string());
}

void load_labels(PointCloud& cloud, const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::parse,
          "empty label file " + path.string());
  std::vector<int> labels(cloud.size(), -1);
  size_t seen = 0;
  while (std::getline(in, line)) {
    auto sv = trim(line);
    if (sv.empty()) continue;
    const auto comma = sv.find(',');
    require(comma != std::string_view::npos, ErrorKind::parse,
            "bad label row in " + path.string());
    const auto idx = parse_int(sv.substr(0, comma), path.string());
    const auto lab = parse_int(sv.substr(comma + 1), path.string());
    require(idx >= 0 && static_cast<size_t>(idx) < labels.size(), ErrorKind::parse,
            "label index out of range in " + path.string());
    labels[static_cast<size_t>(idx)] = static_cast<int>(lab);
    ++seen;
  }
  require(seen == cloud.size(), ErrorKind::parse,
          "label count does not match cloud size in " + path.string());
  cloud.labels = std::move(labels);
}

}  // namespace msp
