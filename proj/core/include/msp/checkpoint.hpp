#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "msp/config.hpp"
#include "msp/params.hpp"

namespace msp {

// Serialized training state. On disk: the "MSPCKPT1" magic line, step
// counters, the canonical config text, a textual tensor table
// (name dtype rank dims... offset length) and one raw little-endian data
// blob. Buffer names: param/<p>, ema/<p>, opt_m/<p>, opt_v/<p>.
// Saving the same state twice produces identical bytes.
struct Checkpoint {
  RunConfig config;
  int64_t step = 0;      // completed training steps
  int64_t opt_step = 0;  // optimizer update counter
  ParamStore params;
  ParamStore ema;  // empty when the deep-feature target is disabled
  std::map<std::string, std::vector<double>> opt_m, opt_v;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// The online encoder subset (names keep their encoder. prefix).
ParamStore extract_encoder(const Checkpoint& ckpt);

}  // namespace msp
