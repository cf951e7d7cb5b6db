#pragma once

#include <optional>

#include "msp/model.hpp"
#include "msp/targets.hpp"

namespace msp {

struct LossParts {
  double total = 0.0;
  std::optional<double> sc, dsf, color, pointset;
  int dsf_excluded = 0;
  int pointset_empty = 0;
};

struct LossResult {
  Tensor total;  // scalar, on the tape
  LossParts parts;
};

// Weighted sum of the enabled objectives:
//   sc:       mean binary cross entropy on descriptor logits
//   dsf:      mean (1 - cosine) against unit teacher rows
//   color:    mean squared error
//   pointset: symmetric chamfer means
// Rows excluded by the target bundle are skipped; a target whose rows are
// all excluded is a degenerate-target error.
LossResult compute_loss(Tape* tape, const MspModel& model, const HeadOutputs& heads,
                        const TargetBundle& targets);

}  // namespace msp
