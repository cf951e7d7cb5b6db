#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msp/checkpoint.hpp"
#include "msp/cloud.hpp"
#include "msp/config.hpp"
#include "msp/error.hpp"
#include "msp/log.hpp"
#include "msp/manifest.hpp"
#include "msp/masking.hpp"
#include "msp/probes.hpp"
#include "msp/rng.hpp"
#include "msp/shape_context.hpp"
#include "msp/synthetic.hpp"
#include "msp/text.hpp"
#include "msp/train.hpp"
#include "selfcheck.hpp"

namespace fs = std::filesystem;

namespace msp {
namespace {

struct GlobalOpts {
  std::string config_path;
  std::string out_dir;
  std::string profile;
  uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  bool threads_set = false;
  bool dry_run = false;
};

// Precedence: profile (command line wins over a profile key in the file),
// then config file keys in order, then --seed/--threads.
RunConfig resolve_config(const GlobalOpts& g) {
  RunConfig cfg;
  if (!g.profile.empty()) apply_profile(cfg, g.profile);
  if (!g.config_path.empty()) cfg = load_config_file(g.config_path, cfg, !g.profile.empty());
  if (g.seed_set) cfg.seed = g.seed;
  if (g.threads_set) cfg.threads = g.threads;
  cfg.validate();
  return cfg;
}

fs::path require_out(const GlobalOpts& g, const char* cmd) {
  require(!g.out_dir.empty(), ErrorKind::contract, std::string(cmd) + " needs --out");
  fs::path out(g.out_dir);
  fs::create_directories(out);
  return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::io, "cannot write " + path.string());
  f << text;
  f.flush();
  require(f.good(), ErrorKind::io, "write failed for " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

bool dry_run_done(const GlobalOpts& g, const RunConfig& cfg) {
  if (!g.dry_run) return false;
  std::cout << dump_config(cfg);
  return true;
}

int cmd_gen_data(const GlobalOpts& g, RunConfig cfg, int scenes_override) {
  if (scenes_override > 0) cfg.data_scenes = scenes_override;
  cfg.validate();
  if (dry_run_done(g, cfg)) return 0;
  const fs::path out = require_out(g, "gen-data");
  const std::vector<PointCloud> scenes = generate_training_scenes(cfg);
  for (size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%03zu", i);
    save_cloud(scenes[i], out / (std::string(name) + ".xyz"));
    save_labels(scenes[i], out / (std::string(name) + ".labels.csv"));
  }
  write_text_file(out / "config.cfg", dump_config(cfg));
  write_manifest(out);
  log_info("wrote ", scenes.size(), " scenes to ", out.string());
  return 0;
}

int cmd_shape_context(const GlobalOpts& g, const RunConfig& cfg, const std::string& input) {
  if (dry_run_done(g, cfg)) return 0;
  require(!input.empty(), ErrorKind::contract, "shape-context needs --input");
  const fs::path out = require_out(g, "shape-context");
  const PointCloud cloud = load_cloud(input);
  const std::vector<ScPartition> parts = cfg.partitions();
  const ScMatrix m =
      multiscale_shape_context(cloud.positions, cloud.positions, parts, cfg.threads);

  std::string text;
  text.reserve(cloud.size() * (static_cast<size_t>(m.row_bits) * 2 + 48));
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.positions[i];
    text += format_double(p.x);
    text += ' ';
    text += format_double(p.y);
    text += ' ';
    text += format_double(p.z);
    const uint8_t* row = m.row(i);
    for (int b = 0; b < m.row_bits; ++b) {
      text += ' ';
      text += row[b] ? '1' : '0';
    }
    text += '\n';
  }
  write_text_file(out / "descriptors.txt", text);
  write_manifest(out);
  log_info("wrote ", cloud.size(), " descriptors (", m.row_bits, " bits) to ", out.string());
  return 0;
}

int cmd_pretrain(const GlobalOpts& g, const RunConfig& cfg, const std::string& resume) {
  if (dry_run_done(g, cfg)) return 0;
  const fs::path out = require_out(g, "pretrain");
  std::optional<fs::path> resume_path;
  if (!resume.empty()) resume_path = fs::path(resume);
  const PretrainOutcome outcome = pretrain(cfg, out, resume_path);
  write_text_file(out / "config.cfg", dump_config(cfg));
  write_manifest(out);
  log_info("final checkpoint: ", outcome.checkpoint_path.string());
  return 0;
}

int cmd_probe_leakage(const GlobalOpts& g, const RunConfig& cfg) {
  if (dry_run_done(g, cfg)) return 0;
  const fs::path out = require_out(g, "probe-leakage");
  const std::vector<ScPartition> parts = cfg.partitions();
  const std::vector<double> fractions = cfg.leakage_fraction_list();
  std::vector<uint64_t> seeds;
  for (int j = 0; j < cfg.leakage_seeds; ++j)
    seeds.push_back(mix_seed(cfg.seed, "leakage-subsample", static_cast<uint64_t>(j)));

  std::vector<LeakageReport> reports;
  for (int i = 0; i < cfg.leakage_scenes; ++i) {
    const uint64_t ui = static_cast<uint64_t>(i);
    const PointCloud cloud =
        generate_scene(scene_spec(cfg, mix_seed(cfg.seed, "leakage-scene", ui)));
    const MaskResult mask =
        apply_mask(cloud,
                   MaskSpec{cfg.mask_ratio, cfg.mask_block, mix_seed(cfg.seed, "leakage-mask", ui)},
                   /*allow_degenerate=*/true);
    reports.push_back(leakage_probe(cloud, mask, parts, fractions, seeds, cfg.threads));
  }
  const LeakageReport merged = merge_leakage(reports);
  write_text_file(out / "leakage.csv", leakage_csv(merged));

  const ComparisonReport cr = compare_runs({}, {merged}, cfg);
  write_text_file(out / "summary.txt", cr.text);
  write_manifest(out);
  std::cout << cr.text;
  return cr.pass ? 0 : 1;
}

int cmd_probe_linear(const GlobalOpts& g, const RunConfig& cfg, const std::string& ckpt_path) {
  if (dry_run_done(g, cfg)) return 0;
  require(!ckpt_path.empty(), ErrorKind::contract, "probe-linear needs --ckpt");
  const fs::path out = require_out(g, "probe-linear");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);

  // Architecture and data recipe travel with the checkpoint; the probe
  // protocol and seed come from the command line.
  RunConfig run = ckpt.config;
  run.seed = cfg.seed;
  run.threads = cfg.threads;
  run.probe_scenes = cfg.probe_scenes;
  run.probe_train_scenes = cfg.probe_train_scenes;
  run.probe_steps = cfg.probe_steps;
  run.probe_lr = cfg.probe_lr;
  run.probe_seeds = cfg.probe_seeds;
  run.probe_margin = cfg.probe_margin;
  run.validate();

  std::vector<PointCloud> scenes;
  for (int i = 0; i < run.probe_scenes; ++i)
    scenes.push_back(
        generate_scene(scene_spec(run, mix_seed(run.seed, "probe-scene", static_cast<uint64_t>(i)))));

  const MspModel model = build_model(run, run.seed);
  const ParamStore pretrained = extract_encoder(ckpt);
  const ParamStore scratch = model.params.subset("encoder.");

  std::vector<ProbeResult> results;
  for (int j = 0; j < run.probe_seeds; ++j) {
    const uint64_t split = mix_seed(run.seed, "probe-split-seed", static_cast<uint64_t>(j));
    results.push_back(linear_probe(model, pretrained, scenes, split, "pretrained"));
    results.push_back(linear_probe(model, scratch, scenes, split, "scratch"));
    log_info("split seed ", j, ": pretrained ", results[results.size() - 2].overall_acc,
             ", scratch ", results.back().overall_acc);
  }
  write_text_file(out / "probe.csv", probe_csv(results));

  const ComparisonReport cr = compare_runs(results, {}, run);
  write_text_file(out / "summary.txt", cr.text);
  write_manifest(out);
  std::cout << cr.text;
  return cr.pass ? 0 : 1;
}

int cmd_compare(const GlobalOpts& g, const RunConfig& cfg,
                const std::vector<std::string>& probe_files,
                const std::vector<std::string>& leakage_files) {
  if (dry_run_done(g, cfg)) return 0;
  require(!probe_files.empty() || !leakage_files.empty(), ErrorKind::contract,
          "compare needs at least one --probe or --leakage csv");
  std::vector<ProbeResult> probes;
  for (const std::string& f : probe_files) {
    const std::vector<ProbeResult> rows = parse_probe_csv(read_text_file(f));
    probes.insert(probes.end(), rows.begin(), rows.end());
  }
  std::vector<LeakageReport> leakages;
  for (const std::string& f : leakage_files)
    leakages.push_back(parse_leakage_csv(read_text_file(f)));

  const ComparisonReport cr = compare_runs(probes, leakages, cfg);
  std::cout << cr.text;
  if (!g.out_dir.empty()) {
    const fs::path out = require_out(g, "compare");
    write_text_file(out / "compare.txt", cr.text);
    write_text_file(out / "compare.csv", cr.csv);
    write_manifest(out);
  }
  return cr.pass ? 0 : 1;
}

int cmd_selfcheck(const GlobalOpts& g, const RunConfig& cfg) {
  if (dry_run_done(g, cfg)) return 0;
  return run_selfcheck(cfg, g.out_dir);
}

}  // namespace
}  // namespace msp

int main(int argc, char** argv) {
  using namespace msp;
  CLI::App app{"msp: masked shape prediction on point clouds"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "Config file, 'key = value' lines")
      ->check(CLI::ExistingFile);
  app.add_option("--out", g.out_dir, "Output directory");
  auto* seed_opt = app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--profile", g.profile, "Baseline profile")
      ->check(CLI::IsMember({"desk", "paper"}));
  auto* threads_opt = app.add_option("--threads", g.threads, "Worker threads (1 = bit-exact)");
  app.add_flag("--dry-run", g.dry_run, "Print the fully resolved config and exit");

  auto* gen = app.add_subcommand("gen-data", "Generate labeled synthetic scenes");
  int scenes_override = 0;
  gen->add_option("--scenes", scenes_override, "Scene count (default: data.scenes)");

  auto* sc = app.add_subcommand("shape-context", "Dump per-point descriptors for a cloud");
  std::string input;
  sc->add_option("--input", input, "Cloud file (.xyz or .ply)")->check(CLI::ExistingFile);

  auto* pre = app.add_subcommand("pretrain", "Run masked-shape pre-training");
  std::string resume;
  pre->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  auto* leak = app.add_subcommand("probe-leakage", "Masked-shape leakage probe");

  auto* lin = app.add_subcommand("probe-linear", "Frozen-encoder linear probe, both arms");
  std::string ckpt;
  lin->add_option("--ckpt", ckpt, "Pre-trained checkpoint")->check(CLI::ExistingFile);

  auto* cmp = app.add_subcommand("compare", "Summarize report CSVs and evaluate checks");
  std::vector<std::string> probe_files, leakage_files;
  cmp->add_option("--probe", probe_files, "probe.csv file(s)")->check(CLI::ExistingFile);
  cmp->add_option("--leakage", leakage_files, "leakage.csv file(s)")->check(CLI::ExistingFile);

  auto* self = app.add_subcommand("selfcheck", "Gradient checks and oracle suites");

  for (CLI::App* s : {gen, sc, pre, leak, lin, cmp, self}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }
  g.seed_set = seed_opt->count() > 0;
  g.threads_set = threads_opt->count() > 0;

  try {
    const RunConfig cfg = resolve_config(g);
    if (gen->parsed()) return cmd_gen_data(g, cfg, scenes_override);
    if (sc->parsed()) return cmd_shape_context(g, cfg, input);
    if (pre->parsed()) return cmd_pretrain(g, cfg, resume);
    if (leak->parsed()) return cmd_probe_leakage(g, cfg);
    if (lin->parsed()) return cmd_probe_linear(g, cfg, ckpt);
    if (cmp->parsed()) return cmd_compare(g, cfg, probe_files, leakage_files);
    if (self->parsed()) return cmd_selfcheck(g, cfg);
    std::cerr << "no command\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "[" << error_kind_name(e.kind()) << "] " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "[error] " << e.what() << "\n";
    return 1;
  }
}
