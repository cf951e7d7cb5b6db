#include "msp/manifest.hpp"

#include <algorithm>
#include <fstream>

#include "msp/error.hpp"

namespace msp {

uint64_t fnv1a64(const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    const auto got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

void write_manifest(const std::filesystem::path& root, const std::string& manifest_name) {
  namespace fs = std::filesystem;
  require(fs::is_directory(root), ErrorKind::io, "manifest root is not a directory: " + root.string());

  std::vector<std::string> rels;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::string rel = fs::relative(entry.path(), root).generic_string();
    if (rel == manifest_name) continue;
    rels.push_back(std::move(rel));
  }
  std::sort(rels.begin(), rels.end());

  std::ofstream out(root / manifest_name, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot write manifest in " + root.string());
  char hex[17];
  for (const auto& rel : rels) {
    const fs::path p = root / rel;
    const auto size = fs::file_size(p);
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(fnv1a64_file(p)));
    out << rel << ' ' << size << ' ' << hex << '\n';
  }
  require(out.good(), ErrorKind::io, "failed writing manifest in " + root.string());
}

}  // namespace msp
