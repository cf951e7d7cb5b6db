#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "msp/tensor.hpp"

namespace msp {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;  // "name[i]" of the worst coordinate
  size_t checked = 0;
  bool pass = false;
};

// Central-difference verification of reverse-mode gradients.
// f must rebuild its forward pass on every call (deterministically!) and
// return a scalar loss; with a null tape it runs untracked, which is how
// the perturbed evaluations are done. Error metric per coordinate:
// |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckReport grad_check(const std::function<Tensor(Tape*)>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double h = 1e-6, double tol = 1e-5);

}  // namespace msp
