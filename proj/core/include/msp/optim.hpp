#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msp/params.hpp"

namespace msp {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

// Decoupled weight decay: the decay term uses the pre-update parameter and
// is not part of the moment estimates. Moments are always kept in f64;
// f32 parameters are re-rounded after the update.
struct AdamW {
  AdamWConfig cfg;
  int64_t step_count = 0;
  std::map<std::string, std::vector<double>> m, v;

  // One update over every parameter in the store, in name order. Unallocated
  // gradients count as zero (the decay still applies). Does not clear grads.
  void step(ParamStore& params);
};

// Exponential moving average of a parameter subset (the momentum target
// branch). Shadow tensors never require grad.
struct EmaTracker {
  double decay = 0.999;
  ParamStore shadow;

  void init(const ParamStore& online, const std::string& prefix);
};

// shadow <- decay * shadow + (1 - decay) * online, over the shadow's keys.
void ema_update(EmaTracker& tracker, const ParamStore& online);

}  // namespace msp
