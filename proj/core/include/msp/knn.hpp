#pragma once

#include <vector>

#include "msp/vec3.hpp"

namespace msp {

// Flat [nq x k] neighbor table: row i holds the key indices attended by
// query i, nearest first.
struct KnnTable {
  int nq = 0;
  int k = 0;
  std::vector<int> idx;

  const int* row(int i) const { return idx.data() + static_cast<size_t>(i) * k; }
};

// Exact k nearest keys per query by squared euclidean distance; k is
// clamped to the key count. Ties break toward the lower key index, which
// pins the result order (and therefore every downstream gradient) for
// symmetric point layouts. Empty key set is a contract error.
KnnTable knn_search(const std::vector<Vec3>& queries, const std::vector<Vec3>& keys, int k);

}  // namespace msp
