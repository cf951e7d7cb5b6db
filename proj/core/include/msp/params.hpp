#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msp/tensor.hpp"

namespace msp {

// Named parameter set. std::map keeps iteration lexicographic, which fixes
// the order of optimizer updates and checkpoint serialization.
struct ParamStore {
  std::map<std::string, Tensor> entries;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  void add(const std::string& name, Tensor t);
  bool contains(const std::string& name) const { return entries.count(name) != 0; }
  size_t size() const { return entries.size(); }

  std::vector<std::string> names() const;
  void zero_grads();
  int64_t total_elements() const;

  // Entries whose name starts with prefix, as a new store sharing tensors.
  ParamStore subset(const std::string& prefix) const;
};

// Gaussian init; the stream is derived from (seed, name), so parameter
// values do not depend on creation order.
Tensor init_normal(const std::vector<int64_t>& shape, double sigma, uint64_t seed,
                   const std::string& name, Dtype dt);

}  // namespace msp
