#include "msp/losses.hpp"

#include "msp/error.hpp"
#include "msp/log.hpp"

namespace msp {

LossResult compute_loss(Tape* tape, const MspModel& model, const HeadOutputs& heads,
                        const TargetBundle& targets) {
  const auto& cfg = model.cfg;
  LossResult result;
  Tensor total;

  auto accumulate = [&](const Tensor& term, double weight) {
    const Tensor scaled = ops::scale(tape, term, weight);
    total = total.defined() ? ops::add(tape, total, scaled) : scaled;
  };

  if (cfg.target_sc) {
    require(heads.sc_logits.defined(), ErrorKind::contract, "missing shape context head");
    const Tensor term = ops::bce_with_logits_mean(tape, heads.sc_logits, targets.sc_bits);
    result.parts.sc = term.value();
    accumulate(term, cfg.target_sc_weight);
  }

  if (cfg.target_dsf) {
    require(heads.dsf.defined(), ErrorKind::contract, "missing deep feature head");
    if (targets.dsf_excluded > 0) {
      log_debug("deep feature target: ", targets.dsf_excluded, " zero-norm rows excluded");
    }
    // Rows where the student prediction itself has zero norm cannot be
    // normalized either; they are excluded the same way.
    std::vector<uint8_t> include = targets.dsf_include;
    const auto& pv = heads.dsf.values();
    const int64_t w = heads.dsf.dim(1);
    for (int64_t r = 0; r < heads.dsf.dim(0); ++r) {
      if (!include[static_cast<size_t>(r)]) continue;
      double norm2 = 0.0;
      for (int64_t c = 0; c < w; ++c) {
        const double v = pv[r * w + c];
        norm2 += v * v;
      }
      if (norm2 <= 0.0) include[static_cast<size_t>(r)] = 0;
    }
    const Tensor term = ops::cosine_row_loss(tape, heads.dsf, targets.dsf_unit, include);
    result.parts.dsf = term.value();
    result.parts.dsf_excluded = targets.dsf_excluded;
    accumulate(term, cfg.target_dsf_weight);
  }

  if (cfg.target_color) {
    require(heads.color.defined(), ErrorKind::contract, "missing color head");
    const Tensor term = ops::mse_mean(tape, heads.color, targets.color);
    result.parts.color = term.value();
    accumulate(term, cfg.target_color_weight);
  }

  if (cfg.target_pointset) {
    require(heads.pointset.defined(), ErrorKind::contract, "missing point set head");
    if (targets.pointset_empty > 0) {
      log_debug("point set target: ", targets.pointset_empty, " empty neighborhoods excluded");
    }
    const Tensor term = ops::chamfer_row_loss(tape, heads.pointset, targets.pointset_offsets,
                                              targets.pointset_include);
    result.parts.pointset = term.value();
    result.parts.pointset_empty = targets.pointset_empty;
    accumulate(term, cfg.target_pointset_weight);
  }

  require(total.defined(), ErrorKind::contract, "no targets enabled");
  result.total = total;
  result.parts.total = total.value();
  return result;
}

}  // namespace msp
