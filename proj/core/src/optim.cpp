#include "msp/optim.hpp"

#include <cmath>

#include "msp/error.hpp"

namespace msp {

void AdamW::step(ParamStore& params) {
  require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0, ErrorKind::invalid_spec, "beta1 out of range");
  require(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, ErrorKind::invalid_spec, "beta2 out of range");
  require(cfg.eps > 0.0, ErrorKind::invalid_spec, "adamw eps must be positive");

  ++step_count;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));

  for (auto& [name, p] : params.entries) {
    require(p.requires_grad(), ErrorKind::contract,
            "optimizer stepped over '" + name + "', which cannot carry a gradient");
    auto& vals = p.values();
    const size_t n = vals.size();
    auto& mm = m[name];
    auto& vv = v[name];
    if (mm.empty()) mm.assign(n, 0.0);
    if (vv.empty()) vv.assign(n, 0.0);
    require(mm.size() == n && vv.size() == n, ErrorKind::contract,
            "optimizer state size mismatch for '" + name + "'");

    const bool has_grad = p.grad_allocated();
    const std::vector<double>* gp = has_grad ? &p.data()->grad : nullptr;
    const bool f32 = p.dtype() == Dtype::f32;
    for (size_t i = 0; i < n; ++i) {
      const double g = has_grad ? (*gp)[i] : 0.0;
      mm[i] = cfg.beta1 * mm[i] + (1.0 - cfg.beta1) * g;
      vv[i] = cfg.beta2 * vv[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = mm[i] / bc1;
      const double vhat = vv[i] / bc2;
      const double old = vals[i];
      double next = old - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps)
                        - cfg.lr * cfg.weight_decay * old;
      if (f32) next = static_cast<double>(static_cast<float>(next));
      vals[i] = next;
    }
  }
}

void EmaTracker::init(const ParamStore& online, const std::string& prefix) {
  shadow.entries.clear();
  for (const auto& [name, p] : online.entries) {
    if (name.rfind(prefix, 0) != 0) continue;
    Tensor copy = Tensor::constant(p.values(), p.shape(), p.dtype());
    shadow.entries.emplace(name, std::move(copy));
  }
  require(!shadow.entries.empty(), ErrorKind::contract,
          "ema tracker found no parameters under '" + prefix + "'");
}

void ema_update(EmaTracker& tracker, const ParamStore& online) {
  const double d = tracker.decay;
  require(d >= 0.0 && d <= 1.0, ErrorKind::invalid_spec, "ema decay out of range");
  for (auto& [name, s] : tracker.shadow.entries) {
    const Tensor& p = online.at(name);
    auto& sv = s.values();
    const auto& pv = p.values();
    require(sv.size() == pv.size(), ErrorKind::contract, "ema shape mismatch for '" + name + "'");
    const bool f32 = s.dtype() == Dtype::f32;
    for (size_t i = 0; i < sv.size(); ++i) {
      double next = d * sv[i] + (1.0 - d) * pv[i];
      if (f32) next = static_cast<double>(static_cast<float>(next));
      sv[i] = next;
    }
  }
}

}  // namespace msp
