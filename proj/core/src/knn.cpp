#include "msp/knn.hpp"

#include <algorithm>

#include "msp/error.hpp"

namespace msp {

KnnTable knn_search(const std::vector<Vec3>& queries, const std::vector<Vec3>& keys, int k) {
  require(k >= 1, ErrorKind::contract, "knn_search needs k >= 1");
  require(!keys.empty(), ErrorKind::contract, "knn_search with empty key set");

  const int n_keys = static_cast<int>(keys.size());
  const int kk = std::min(k, n_keys);

  KnnTable table;
  table.nq = static_cast<int>(queries.size());
  table.k = kk;
  table.idx.resize(static_cast<size_t>(table.nq) * kk);

  std::vector<std::pair<double, int>> dist(static_cast<size_t>(n_keys));
  for (int qi = 0; qi < table.nq; ++qi) {
    const Vec3& q = queries[static_cast<size_t>(qi)];
    for (int j = 0; j < n_keys; ++j) {
      dist[static_cast<size_t>(j)] = {(keys[static_cast<size_t>(j)] - q).norm2(), j};
    }
    std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
    int* row = table.idx.data() + static_cast<size_t>(qi) * kk;
    for (int j = 0; j < kk; ++j) row[j] = dist[static_cast<size_t>(j)].second;
  }
  return table;
}

}  // namespace msp
