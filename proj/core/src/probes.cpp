#include "msp/probes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "msp/error.hpp"
#include "msp/log.hpp"
#include "msp/optim.hpp"
#include "msp/rng.hpp"
#include "msp/text.hpp"

namespace msp {

LeakageReport leakage_probe(const PointCloud& cloud, const MaskResult& mask,
                            const std::vector<ScPartition>& parts,
                            const std::vector<double>& keep_fractions,
                            const std::vector<uint64_t>& seeds, int threads) {
  require(!parts.empty(), ErrorKind::contract, "leakage probe needs at least one partition");
  require(!keep_fractions.empty(), ErrorKind::contract, "leakage probe needs keep fractions");
  for (double f : keep_fractions)
    require(f > 0.0 && f <= 1.0, ErrorKind::contract, "keep fraction outside (0,1]");
  require(!mask.masked_idx.empty(), ErrorKind::contract, "leakage probe needs masked points");
  require(!seeds.empty(), ErrorKind::contract, "leakage probe needs seeds");

  const size_t n_masked = mask.masked_idx.size();
  std::vector<Vec3> centers(n_masked);
  for (size_t i = 0; i < n_masked; ++i)
    centers[i] = cloud.positions[static_cast<size_t>(mask.masked_idx[i])];

  const ScMatrix gt = multiscale_shape_context(centers, cloud.positions, parts, threads);
  const int row_bits = gt.row_bits;

  std::vector<int> gt_count(n_masked, 0);
  std::vector<size_t> counted;
  for (size_t i = 0; i < n_masked; ++i) {
    int c = 0;
    const uint8_t* row = gt.row(i);
    for (int b = 0; b < row_bits; ++b) c += row[b];
    gt_count[i] = c;
    if (c > 0) counted.push_back(i);
  }
  require(!counted.empty(), ErrorKind::degenerate_probe,
          "every masked center has an empty ground-truth descriptor");

  std::vector<double> recall_sum(keep_fractions.size(), 0.0);
  for (uint64_t seed : seeds) {
    // One survival draw per masked point, shared across fractions: the kept
    // sets nest as f grows, which makes per-center recall monotone in f.
    Rng rng(mix_seed(seed, "leakage-keep"));
    std::vector<double> u(n_masked);
    for (size_t i = 0; i < n_masked; ++i) u[i] = rng.uniform();

    for (size_t fi = 0; fi < keep_fractions.size(); ++fi) {
      const double f = keep_fractions[fi];
      std::vector<Vec3> kept;
      kept.reserve(n_masked);
      for (size_t i = 0; i < n_masked; ++i)
        if (u[i] < f) kept.push_back(centers[i]);

      const ScMatrix adv = multiscale_shape_context(centers, kept, parts, threads);
      double sum = 0.0;
      for (size_t i : counted) {
        const uint8_t* g = gt.row(i);
        const uint8_t* a = adv.row(i);
        int inter = 0;
        for (int b = 0; b < row_bits; ++b) inter += g[b] & a[b];
        sum += static_cast<double>(inter) / static_cast<double>(gt_count[i]);
      }
      recall_sum[fi] += sum / static_cast<double>(counted.size());
    }
  }

  LeakageReport report;
  report.rows.resize(keep_fractions.size());
  for (size_t fi = 0; fi < keep_fractions.size(); ++fi) {
    LeakageRow& row = report.rows[fi];
    row.keep_fraction = keep_fractions[fi];
    row.mean_recall = recall_sum[fi] / static_cast<double>(seeds.size());
    row.n_centers = static_cast<int64_t>(counted.size());
    row.seeds = seeds;
  }
  return report;
}

LeakageReport merge_leakage(const std::vector<LeakageReport>& reports) {
  require(!reports.empty(), ErrorKind::contract, "nothing to merge");
  const LeakageReport& first = reports.front();
  LeakageReport merged;
  merged.rows.resize(first.rows.size());
  for (size_t fi = 0; fi < first.rows.size(); ++fi) {
    double weighted = 0.0;
    int64_t centers = 0;
    for (const LeakageReport& r : reports) {
      require(r.rows.size() == first.rows.size(), ErrorKind::contract,
              "leakage reports have different fraction counts");
      const LeakageRow& row = r.rows[fi];
      require(row.keep_fraction == first.rows[fi].keep_fraction, ErrorKind::contract,
              "leakage reports have different keep fractions");
      require(row.seeds == first.rows[fi].seeds, ErrorKind::contract,
              "leakage reports have different seed lists");
      weighted += row.mean_recall * static_cast<double>(row.n_centers);
      centers += row.n_centers;
    }
    LeakageRow& out = merged.rows[fi];
    out.keep_fraction = first.rows[fi].keep_fraction;
    out.n_centers = centers;
    out.mean_recall = centers > 0 ? weighted / static_cast<double>(centers) : 0.0;
    out.seeds = first.rows[fi].seeds;
  }
  return merged;
}

namespace {

std::vector<std::string> csv_lines(const std::string& text, const std::string& header,
                                   const char* what) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string t(trim(line));
    if (!t.empty()) lines.push_back(t);
  }
  require(!lines.empty() && lines.front() == header, ErrorKind::parse,
          std::string(what) + " csv: missing or wrong header");
  lines.erase(lines.begin());
  return lines;
}

std::vector<std::string> csv_fields(const std::string& line, size_t expect, const char* what) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  require(fields.size() == expect, ErrorKind::parse,
          std::string(what) + " csv: wrong field count in '" + line + "'");
  return fields;
}

}  // namespace

std::string leakage_csv(const LeakageReport& report) {
  std::string out = "keep_fraction,mean_recall,n_centers,n_seeds\n";
  for (const LeakageRow& row : report.rows) {
    out += format_double(row.keep_fraction);
    out += ',';
    out += format_double(row.mean_recall);
    out += ',';
    out += format_int(row.n_centers);
    out += ',';
    out += format_int(static_cast<int64_t>(row.seeds.size()));
    out += '\n';
  }
  return out;
}

LeakageReport parse_leakage_csv(const std::string& text) {
  LeakageReport report;
  for (const std::string& line :
       csv_lines(text, "keep_fraction,mean_recall,n_centers,n_seeds", "leakage")) {
    const std::vector<std::string> f = csv_fields(line, 4, "leakage");
    LeakageRow row;
    row.keep_fraction = parse_double(f[0], "leakage csv");
    row.mean_recall = parse_double(f[1], "leakage csv");
    row.n_centers = parse_int(f[2], "leakage csv");
    const int64_t n_seeds = parse_int(f[3], "leakage csv");
    require(n_seeds > 0, ErrorKind::parse, "leakage csv: n_seeds must be positive");
    row.seeds.resize(static_cast<size_t>(n_seeds));
    for (size_t i = 0; i < row.seeds.size(); ++i) row.seeds[i] = i;
    report.rows.push_back(std::move(row));
  }
  require(!report.rows.empty(), ErrorKind::parse, "leakage csv: no rows");
  return report;
}

ProbeFeatures probe_features(const MspModel& model, const ParamStore& encoder_weights,
                             const PointCloud& cloud) {
  require(cloud.has_labels(), ErrorKind::contract, "probe scenes must carry labels");
  std::vector<int> all(cloud.size());
  std::iota(all.begin(), all.end(), 0);
  EncodeResult enc = encode_points(nullptr, model, encoder_weights, cloud, all);
  ProbeFeatures out;
  out.feats = enc.feats;
  out.labels = cloud.labels;
  return out;
}

namespace {

Tensor standardized_rows(const Tensor& feats, const Tensor& mean, const Tensor& sd) {
  const int64_t n = feats.dim(0), width = feats.dim(1);
  std::vector<double> out(feats.values());
  const auto& mv = mean.values();
  const auto& sv = sd.values();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < width; ++c) {
      auto& v = out[static_cast<size_t>(i * width + c)];
      v = (v - mv[static_cast<size_t>(c)]) / sv[static_cast<size_t>(c)];
    }
  return Tensor::constant(std::move(out), {n, width});
}

}  // namespace

ProbeClassifier train_probe_classifier(const Tensor& feats, const std::vector<int>& labels,
                                       const RunConfig& cfg) {
  require(feats.rank() == 2, ErrorKind::shape, "probe features must be [n, width]");
  const int64_t n = feats.dim(0);
  const int64_t width = feats.dim(1);
  require(static_cast<int64_t>(labels.size()) == n, ErrorKind::shape,
          "label count does not match feature rows");
  require(n > 0, ErrorKind::contract, "no probe training points");
  for (int l : labels)
    require(l >= 0 && l < scene_class_count, ErrorKind::contract, "label outside class range");
  const bool single_class = std::all_of(labels.begin(), labels.end(),
                                        [&](int l) { return l == labels.front(); });
  require(!single_class, ErrorKind::degenerate_probe,
          "single-class probe data: a constant predictor is trivially perfect");

  ProbeClassifier clf;
  {
    std::vector<double> mean(static_cast<size_t>(width), 0.0);
    std::vector<double> sd(static_cast<size_t>(width), 0.0);
    const auto& fv = feats.values();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t c = 0; c < width; ++c)
        mean[static_cast<size_t>(c)] += fv[static_cast<size_t>(i * width + c)];
    for (auto& m : mean) m /= static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t c = 0; c < width; ++c) {
        const double d = fv[static_cast<size_t>(i * width + c)] - mean[static_cast<size_t>(c)];
        sd[static_cast<size_t>(c)] += d * d;
      }
    for (auto& s : sd) {
      s = std::sqrt(s / static_cast<double>(n));
      if (!(s > 1e-12)) s = 1.0;  // constant dim: centering is all there is
    }
    clf.mean = Tensor::constant(std::move(mean), {width});
    clf.sd = Tensor::constant(std::move(sd), {width});
  }
  const Tensor train_feats = standardized_rows(feats, clf.mean, clf.sd);

  clf.w = Tensor::zeros({width, scene_class_count}).set_requires_grad(true);
  clf.b = Tensor::zeros({scene_class_count}).set_requires_grad(true);
  ParamStore store;
  store.add("w", clf.w);
  store.add("b", clf.b);

  AdamW opt;
  opt.cfg = AdamWConfig{cfg.probe_lr, cfg.train_beta1, cfg.train_beta2, cfg.train_eps, 0.0};
  for (int step = 0; step < cfg.probe_steps; ++step) {
    Tape tape;
    Tensor logits = ops::add(&tape, ops::matmul(&tape, train_feats, clf.w), clf.b);
    Tensor loss = ops::softmax_xent_mean(&tape, logits, labels);
    tape.backward(loss);
    opt.step(store);
    store.zero_grads();
  }
  return clf;
}

double eval_probe_classifier(const ProbeClassifier& clf, const Tensor& raw_feats,
                             const std::vector<int>& labels,
                             std::array<double, scene_class_count>* class_acc,
                             std::array<int64_t, scene_class_count>* class_total) {
  require(raw_feats.rank() == 2 && raw_feats.dim(1) == clf.w.dim(0), ErrorKind::shape,
          "feature width does not match classifier");
  const int64_t n = raw_feats.dim(0);
  require(static_cast<int64_t>(labels.size()) == n, ErrorKind::shape,
          "label count does not match feature rows");
  require(n > 0, ErrorKind::contract, "no probe evaluation points");

  const Tensor feats = standardized_rows(raw_feats, clf.mean, clf.sd);
  Tensor logits = ops::add(nullptr, ops::matmul(nullptr, feats, clf.w), clf.b);
  const std::vector<double>& lv = logits.values();

  std::array<int64_t, scene_class_count> correct{}, total{};
  for (int64_t i = 0; i < n; ++i) {
    const double* row = lv.data() + i * scene_class_count;
    int best = 0;
    for (int c = 1; c < scene_class_count; ++c)
      if (row[c] > row[best]) best = c;
    const int truth = labels[static_cast<size_t>(i)];
    total[static_cast<size_t>(truth)] += 1;
    if (best == truth) correct[static_cast<size_t>(truth)] += 1;
  }

  int64_t hits = 0;
  for (int c = 0; c < scene_class_count; ++c) {
    hits += correct[static_cast<size_t>(c)];
    if (class_acc)
      (*class_acc)[static_cast<size_t>(c)] =
          total[static_cast<size_t>(c)] > 0
              ? static_cast<double>(correct[static_cast<size_t>(c)]) /
                    static_cast<double>(total[static_cast<size_t>(c)])
              : 0.0;
  }
  if (class_total) *class_total = total;
  return static_cast<double>(hits) / static_cast<double>(n);
}

namespace {

// Rows from several scenes stacked into one feature matrix.
void append_features(const ProbeFeatures& part, std::vector<double>& values,
                     std::vector<int>& labels, int64_t& width) {
  if (width == 0) width = part.feats.dim(1);
  require(part.feats.dim(1) == width, ErrorKind::shape, "feature widths differ across scenes");
  const std::vector<double>& v = part.feats.values();
  values.insert(values.end(), v.begin(), v.end());
  labels.insert(labels.end(), part.labels.begin(), part.labels.end());
}

}  // namespace

ProbeResult linear_probe(const MspModel& model, const ParamStore& encoder_weights,
                         const std::vector<PointCloud>& scenes, uint64_t split_seed,
                         const std::string& arm) {
  const RunConfig& cfg = model.cfg;
  const int n_train = cfg.probe_train_scenes;
  require(n_train >= 1 && static_cast<size_t>(n_train) < scenes.size(), ErrorKind::contract,
          "probe needs at least one training and one held-out scene");

  std::vector<int> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  derived_rng(split_seed, "probe-split").shuffle(order);

  std::vector<double> train_vals, eval_vals;
  std::vector<int> train_labels, eval_labels;
  int64_t width = 0;
  for (size_t i = 0; i < order.size(); ++i) {
    const ProbeFeatures part =
        probe_features(model, encoder_weights, scenes[static_cast<size_t>(order[i])]);
    if (i < static_cast<size_t>(n_train))
      append_features(part, train_vals, train_labels, width);
    else
      append_features(part, eval_vals, eval_labels, width);
  }

  const int64_t n_tr = static_cast<int64_t>(train_labels.size());
  const int64_t n_ev = static_cast<int64_t>(eval_labels.size());
  Tensor train_feats = Tensor::constant(std::move(train_vals), {n_tr, width});
  Tensor eval_feats = Tensor::constant(std::move(eval_vals), {n_ev, width});

  const ProbeClassifier clf = train_probe_classifier(train_feats, train_labels, cfg);

  ProbeResult result;
  result.arm = arm;
  result.overall_acc = eval_probe_classifier(clf, eval_feats, eval_labels,
                                             &result.class_acc, &result.class_total);
  result.train_points = n_tr;
  result.eval_points = n_ev;
  return result;
}

std::string probe_csv(const std::vector<ProbeResult>& results) {
  std::string out = "arm,overall_acc,acc_class0,acc_class1,acc_class2,acc_class3";
  out += '\n';
  for (const ProbeResult& r : results) {
    out += r.arm;
    out += ',';
    out += format_double(r.overall_acc);
    for (int c = 0; c < scene_class_count; ++c) {
      out += ',';
      out += format_double(r.class_acc[static_cast<size_t>(c)]);
    }
    out += '\n';
  }
  return out;
}

std::vector<ProbeResult> parse_probe_csv(const std::string& text) {
  std::vector<ProbeResult> results;
  for (const std::string& line : csv_lines(
           text, "arm,overall_acc,acc_class0,acc_class1,acc_class2,acc_class3", "probe")) {
    const std::vector<std::string> f =
        csv_fields(line, 2 + static_cast<size_t>(scene_class_count), "probe");
    ProbeResult r;
    r.arm = f[0];
    r.overall_acc = parse_double(f[1], "probe csv");
    for (int c = 0; c < scene_class_count; ++c)
      r.class_acc[static_cast<size_t>(c)] = parse_double(f[2 + static_cast<size_t>(c)], "probe csv");
    results.push_back(std::move(r));
  }
  require(!results.empty(), ErrorKind::parse, "probe csv: no rows");
  return results;
}

namespace {

std::string pad(const std::string& s, size_t w) {
  return s + std::string(s.size() < w ? w - s.size() : 0, ' ');
}

std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<size_t> widths;
  for (const auto& row : rows) {
    if (widths.size() < row.size()) widths.resize(row.size(), 0);
    for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  std::string out;
  for (const auto& row : rows) {
    out += "  ";
    for (size_t c = 0; c < row.size(); ++c) {
      out += c + 1 < row.size() ? pad(row[c], widths[c] + 2) : row[c];
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
  }
  return out;
}

struct ArmAggregate {
  std::string arm;
  int runs = 0;
  double mean_overall = 0.0;
  std::array<double, scene_class_count> correct{};  // pooled over runs
  std::array<double, scene_class_count> total{};
  std::array<double, scene_class_count> acc_sum{};  // fallback when counts are absent

  double class_mean(int c) const {
    const auto uc = static_cast<size_t>(c);
    if (total[uc] > 0) return correct[uc] / total[uc];
    return acc_sum[uc] / static_cast<double>(runs);
  }
};

}  // namespace

ComparisonReport compare_runs(const std::vector<ProbeResult>& probes,
                              const std::vector<LeakageReport>& leakages,
                              const RunConfig& cfg) {
  ComparisonReport report;
  std::string text;
  std::string csv = "check,value,threshold,pass\n";

  std::vector<ArmAggregate> arms;
  for (const ProbeResult& p : probes) {
    auto it = std::find_if(arms.begin(), arms.end(),
                           [&](const ArmAggregate& a) { return a.arm == p.arm; });
    if (it == arms.end()) {
      arms.push_back(ArmAggregate{p.arm, 0, 0.0, {}, {}});
      it = arms.end() - 1;
    }
    it->runs += 1;
    it->mean_overall += p.overall_acc;
    for (int c = 0; c < scene_class_count; ++c) {
      const auto uc = static_cast<size_t>(c);
      it->correct[uc] += p.class_acc[uc] * static_cast<double>(p.class_total[uc]);
      it->total[uc] += static_cast<double>(p.class_total[uc]);
      it->acc_sum[uc] += p.class_acc[uc];
    }
  }
  for (ArmAggregate& a : arms) a.mean_overall /= static_cast<double>(a.runs);

  if (!arms.empty()) {
    text += "probe arms\n";
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"arm", "runs", "overall", "class0", "class1", "class2", "class3"});
    for (const ArmAggregate& a : arms) {
      std::vector<std::string> row{a.arm, format_int(a.runs), format_double(a.mean_overall)};
      for (int c = 0; c < scene_class_count; ++c) row.push_back(format_double(a.class_mean(c)));
      rows.push_back(std::move(row));
    }
    text += render_table(rows);
  }

  std::optional<LeakageReport> merged;
  if (!leakages.empty()) {
    merged = merge_leakage(leakages);
    text += "leakage\n";
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"keep_fraction", "mean_recall", "n_centers", "n_seeds"});
    for (const LeakageRow& row : merged->rows) {
      rows.push_back({format_double(row.keep_fraction), format_double(row.mean_recall),
                      format_int(row.n_centers),
                      format_int(static_cast<int64_t>(row.seeds.size()))});
    }
    text += render_table(rows);
  }

  text += "checks\n";
  bool any_check = false;

  auto find_arm = [&](const char* name) -> const ArmAggregate* {
    auto it = std::find_if(arms.begin(), arms.end(),
                           [&](const ArmAggregate& a) { return a.arm == name; });
    return it == arms.end() ? nullptr : &*it;
  };
  const ArmAggregate* pre = find_arm("pretrained");
  const ArmAggregate* scratch = find_arm("scratch");
  if (pre && scratch) {
    any_check = true;
    const double margin = (pre->mean_overall - scratch->mean_overall) * 100.0;
    report.probe_margin_points = margin;
    const bool ok = margin >= cfg.probe_margin;
    report.pass = report.pass && ok;
    text += "  probe margin: " + format_double(margin) + " points >= " +
            format_double(cfg.probe_margin) + " -> " + (ok ? "pass" : "FAIL") + "\n";
    csv += "probe_margin_points," + format_double(margin) + "," +
           format_double(cfg.probe_margin) + "," + (ok ? "1" : "0") + "\n";
  }

  if (merged && merged->rows.size() >= 2) {
    for (size_t i = 0; i + 1 < merged->rows.size(); ++i) {
      any_check = true;
      const LeakageRow& hi = merged->rows[i];
      const LeakageRow& lo = merged->rows[i + 1];
      const double drop = hi.mean_recall - lo.mean_recall;
      report.leakage_drops.push_back(drop);
      const bool ok = drop >= cfg.leakage_margin;
      report.pass = report.pass && ok;
      const std::string label = format_double(hi.keep_fraction) + " -> " +
                                format_double(lo.keep_fraction);
      text += "  leakage drop " + label + ": " + format_double(drop) + " >= " +
              format_double(cfg.leakage_margin) + " -> " + (ok ? "pass" : "FAIL") + "\n";
      csv += "leakage_drop_" + format_double(hi.keep_fraction) + "_to_" +
             format_double(lo.keep_fraction) + "," + format_double(drop) + "," +
             format_double(cfg.leakage_margin) + "," + (ok ? "1" : "0") + "\n";
    }
  }

  if (!any_check) text += "  none configured\n";
  text += std::string("verdict: ") + (report.pass ? "pass" : "FAIL") + "\n";

  report.text = std::move(text);
  report.csv = std::move(csv);
  return report;
}

}  // namespace msp
