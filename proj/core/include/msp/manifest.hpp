#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace msp {

// fnv1a-64 over a byte range. Used for output manifests; not cryptographic.
uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64_file(const std::filesystem::path& path);

// Writes "<relative-path> <size-bytes> <fnv1a64-hex>" per line, sorted by
// path, for every regular file under root except the manifest itself.
void write_manifest(const std::filesystem::path& root, const std::string& manifest_name = "manifest.txt");

}  // namespace msp
