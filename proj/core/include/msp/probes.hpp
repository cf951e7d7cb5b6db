#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msp/cloud.hpp"
#include "msp/masking.hpp"
#include "msp/model.hpp"
#include "msp/shape_context.hpp"
#include "msp/synthetic.hpp"

namespace msp {

struct LeakageRow {
  double keep_fraction = 0.0;
  double mean_recall = 0.0;  // over counted centers, then over seeds
  int64_t n_centers = 0;     // centers whose ground truth has occupied bits
  std::vector<uint64_t> seeds;
};

struct LeakageReport {
  std::vector<LeakageRow> rows;  // one per keep fraction, input order
};

// How much of the masked region's descriptor target an adversary can
// rebuild from masked-point coordinates alone. Ground truth for each masked
// center comes from the full cloud; the adversary sees only the masked
// points that survive a Bernoulli keep at rate f. The survival draw is
// shared across fractions (one uniform per point per seed), so each
// center's recall is monotone in f by construction, not just on average.
// Recall = recovered occupied bits / ground-truth occupied bits. Centers
// with an empty ground-truth descriptor are skipped; every center empty is
// a degenerate-probe error.
LeakageReport leakage_probe(const PointCloud& cloud, const MaskResult& mask,
                            const std::vector<ScPartition>& parts,
                            const std::vector<double>& keep_fractions,
                            const std::vector<uint64_t>& seeds, int threads = 1);

// Center-weighted average of per-scene reports. Fraction sequences and seed
// lists must agree.
LeakageReport merge_leakage(const std::vector<LeakageReport>& reports);

// "keep_fraction,mean_recall,n_centers,n_seeds"
std::string leakage_csv(const LeakageReport& report);

// Inverse of leakage_csv for the compare command. Seed values are not in
// the CSV, so rows come back with placeholder seed lists of the right size.
LeakageReport parse_leakage_csv(const std::string& text);

struct ProbeResult {
  std::string arm;  // "pretrained" | "scratch"
  double overall_acc = 0.0;
  std::array<double, scene_class_count> class_acc{};
  std::array<int64_t, scene_class_count> class_total{};  // held-out points per class
  int64_t train_points = 0;
  int64_t eval_points = 0;
};

struct ProbeFeatures {
  Tensor feats;  // [n, width], plain values
  std::vector<int> labels;
};

// Per-point features of the complete cloud (nothing masked) under the given
// encoder weights, paired with the cloud's class labels.
ProbeFeatures probe_features(const MspModel& model, const ParamStore& encoder_weights,
                             const PointCloud& cloud);

struct ProbeClassifier {
  Tensor w;     // [width, classes]
  Tensor b;     // [classes]
  Tensor mean;  // [width] training-feature means
  Tensor sd;    // [width] training-feature sds; no-information dims get 1
};

// Zero-initialized linear softmax classifier, trained full batch for
// cfg.probe_steps AdamW steps at cfg.probe_lr with no weight decay.
// Features are standardized per dimension by training-set statistics first;
// the statistics ride along in the classifier and evaluation applies them
// to its own input. Standardization is affine, so the hypothesis class is
// exactly "linear classifier on raw features"; it only stops the fixed step
// budget from being spent fighting badly scaled dimensions, and it is the
// same transform for every encoder arm being compared.
// Single-class labels are a degenerate-probe error: a constant predictor
// would be trivially perfect, so there is nothing to measure.
ProbeClassifier train_probe_classifier(const Tensor& feats, const std::vector<int>& labels,
                                       const RunConfig& cfg);

// Overall accuracy; optionally fills per-class accuracy and counts.
// Argmax ties resolve to the lowest class id.
double eval_probe_classifier(const ProbeClassifier& clf, const Tensor& feats,
                             const std::vector<int>& labels,
                             std::array<double, scene_class_count>* class_acc = nullptr,
                             std::array<int64_t, scene_class_count>* class_total = nullptr);

// Frozen-encoder probe. split_seed shuffles the scene list; the first
// cfg.probe_train_scenes scenes train the classifier and the rest are held
// out. Scenes must carry labels.
ProbeResult linear_probe(const MspModel& model, const ParamStore& encoder_weights,
                         const std::vector<PointCloud>& scenes, uint64_t split_seed,
                         const std::string& arm);

// "arm,overall_acc,acc_class0,acc_class1,acc_class2,acc_class3"
std::string probe_csv(const std::vector<ProbeResult>& results);

// Inverse of probe_csv. Point counts are not in the CSV and come back zero;
// comparisons fall back to unweighted class means for such rows.
std::vector<ProbeResult> parse_probe_csv(const std::string& text);

struct ComparisonReport {
  std::string text;  // aligned tables plus one verdict line per check
  std::string csv;   // "check,value,threshold,pass"
  bool pass = true;
  std::optional<double> probe_margin_points;  // mean(pretrained) - mean(scratch)
  std::vector<double> leakage_drops;          // adjacent mean-recall decreases
};

// Directional checks over collected reports. When both arms appear, the
// pretrained mean must beat scratch by cfg.probe_margin accuracy points
// (repeated arms average). When leakage rows appear, every adjacent
// keep-fraction step must drop mean recall by at least cfg.leakage_margin.
// With nothing to check the comparison passes vacuously.
ComparisonReport compare_runs(const std::vector<ProbeResult>& probes,
                              const std::vector<LeakageReport>& leakages,
                              const RunConfig& cfg);

}  // namespace msp
