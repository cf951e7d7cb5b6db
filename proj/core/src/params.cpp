#include "msp/params.hpp"

#include "msp/error.hpp"
#include "msp/rng.hpp"

namespace msp {

Tensor& ParamStore::at(const std::string& name) {
  auto it = entries.find(name);
  require(it != entries.end(), ErrorKind::contract, "no parameter named '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = entries.find(name);
  require(it != entries.end(), ErrorKind::contract, "no parameter named '" + name + "'");
  return it->second;
}

void ParamStore::add(const std::string& name, Tensor t) {
  require(!contains(name), ErrorKind::contract, "duplicate parameter '" + name + "'");
  entries.emplace(name, std::move(t));
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& [name, t] : entries) out.push_back(name);
  return out;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : entries) t.zero_grad();
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& [name, t] : entries) n += t.numel();
  return n;
}

ParamStore ParamStore::subset(const std::string& prefix) const {
  ParamStore out;
  for (const auto& [name, t] : entries) {
    if (name.rfind(prefix, 0) == 0) out.entries.emplace(name, t);
  }
  return out;
}

Tensor init_normal(const std::vector<int64_t>& shape, double sigma, uint64_t seed,
                   const std::string& name, Dtype dt) {
  Tensor t = Tensor::zeros(shape, dt);
  Rng rng = derived_rng(seed, name);
  for (auto& v : t.values()) v = rng.normal(0.0, sigma);
  if (dt == Dtype::f32) {
    for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(v));
  }
  t.set_requires_grad(true);
  return t;
}

}  // namespace msp
