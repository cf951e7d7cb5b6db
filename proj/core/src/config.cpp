#include "msp/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "msp/error.hpp"
#include "msp/text.hpp"

namespace msp {

namespace {

struct KeyDef {
  std::string key;
  std::string desc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

std::string format_bool(bool b) { return b ? "true" : "false"; }

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorKind::parse, "bad boolean '" + v + "' in " + where);
}

const std::vector<KeyDef>& registry() {
  static const std::vector<KeyDef> defs = [] {
    std::vector<KeyDef> r;
    auto add_str = [&r](const char* key, std::string RunConfig::* field, const char* desc) {
      r.push_back({key, desc, [field](const RunConfig& c) { return c.*field; },
                   [field](RunConfig& c, const std::string& v, const std::string&) {
                     c.*field = v;
                   }});
    };
    auto add_int = [&r](const char* key, int RunConfig::* field, const char* desc) {
      r.push_back({key, desc,
                   [field](const RunConfig& c) { return format_int(c.*field); },
                   [field](RunConfig& c, const std::string& v, const std::string& w) {
                     c.*field = static_cast<int>(parse_int(v, w));
                   }});
    };
    auto add_i64 = [&r](const char* key, int64_t RunConfig::* field, const char* desc) {
      r.push_back({key, desc,
                   [field](const RunConfig& c) { return format_int(c.*field); },
                   [field](RunConfig& c, const std::string& v, const std::string& w) {
                     c.*field = parse_int(v, w);
                   }});
    };
    auto add_u64 = [&r](const char* key, uint64_t RunConfig::* field, const char* desc) {
      r.push_back({key, desc,
                   [field](const RunConfig& c) { return std::to_string(c.*field); },
                   [field](RunConfig& c, const std::string& v, const std::string& w) {
                     try {
                       c.*field = std::stoull(v);
                     } catch (...) {
                       fail(ErrorKind::parse, "bad integer '" + v + "' in " + w);
                     }
                   }});
    };
    auto add_dbl = [&r](const char* key, double RunConfig::* field, const char* desc) {
      r.push_back({key, desc,
                   [field](const RunConfig& c) { return format_double(c.*field); },
                   [field](RunConfig& c, const std::string& v, const std::string& w) {
                     c.*field = parse_double(v, w);
                   }});
    };
    auto add_bool = [&r](const char* key, bool RunConfig::* field, const char* desc) {
      r.push_back({key, desc,
                   [field](const RunConfig& c) { return format_bool(c.*field); },
                   [field](RunConfig& c, const std::string& v, const std::string& w) {
                     c.*field = parse_bool(v, w);
                   }});
    };

    add_str("profile", &RunConfig::profile, "desk | paper");
    add_u64("seed", &RunConfig::seed, "root seed for every derived stream");
    add_int("threads", &RunConfig::threads, "worker threads for data-parallel stages");
    add_str("precision", &RunConfig::precision, "f64 | f32 (storage precision)");

    add_int("data.scenes", &RunConfig::data_scenes, "number of synthetic training scenes");

    add_int("scene.planes", &RunConfig::scene_planes, "plane primitives per scene");
    add_int("scene.boxes", &RunConfig::scene_boxes, "box primitives per scene");
    add_int("scene.spheres", &RunConfig::scene_spheres, "sphere primitives per scene");
    add_int("scene.cylinders", &RunConfig::scene_cylinders, "cylinder primitives per scene");
    add_int("scene.points_per_primitive", &RunConfig::scene_points_per_primitive,
            "points sampled on each primitive");
    add_dbl("scene.extent", &RunConfig::scene_extent, "scene footprint side length, metres");
    add_dbl("scene.noise_sigma", &RunConfig::scene_noise_sigma,
            "surface noise sigma, metres (clamped at 4 sigma)");

    add_dbl("augment.jitter_sigma", &RunConfig::augment_jitter_sigma,
            "training-time per-point jitter sigma");
    add_bool("augment.flip", &RunConfig::augment_flip, "random x/y mirror during training");
    add_bool("augment.rotate", &RunConfig::augment_rotate, "random z rotation during training");

    add_dbl("mask.ratio", &RunConfig::mask_ratio, "fraction of non-empty blocks masked");
    add_dbl("mask.block", &RunConfig::mask_block, "mask block side length, metres");

    add_dbl("sc.radius", &RunConfig::sc_radius, "shape context ball radius, metres");
    add_dbl("sc.xi", &RunConfig::sc_xi, "shape context log-distance offset");
    add_str("sc.partitions", &RunConfig::sc_partitions,
            "comma list of theta x phi x rad partitions");

    add_str("model.arch", &RunConfig::model_arch, "decoder: ca | ca_pp | sa");
    add_int("model.width", &RunConfig::model_width, "feature channels");
    add_int("model.heads", &RunConfig::model_heads, "attention heads");
    add_int("model.blocks", &RunConfig::model_blocks, "decoder attention blocks");
    add_int("model.encoder_blocks", &RunConfig::model_encoder_blocks, "encoder attention blocks");
    add_int("model.k", &RunConfig::model_k, "local attention neighborhood size");
    add_int("model.keypoints", &RunConfig::model_keypoints,
            "keypoints sampled by the sa decoder");
    add_dbl("model.ln_eps", &RunConfig::model_ln_eps, "layer norm epsilon");

    add_bool("targets.sc", &RunConfig::target_sc, "train on binary shape context bits");
    add_bool("targets.dsf", &RunConfig::target_dsf, "train on deep shape features (ema branch)");
    add_bool("targets.color", &RunConfig::target_color, "train on masked colors");
    add_bool("targets.pointset", &RunConfig::target_pointset, "train on local point sets");
    add_dbl("targets.sc_weight", &RunConfig::target_sc_weight, "shape context loss weight");
    add_dbl("targets.dsf_weight", &RunConfig::target_dsf_weight, "deep feature loss weight");
    add_dbl("targets.color_weight", &RunConfig::target_color_weight, "color loss weight");
    add_dbl("targets.pointset_weight", &RunConfig::target_pointset_weight,
            "point set loss weight");

    add_dbl("pointset.radius", &RunConfig::pointset_radius, "local point set ball radius");
    add_int("pointset.k", &RunConfig::pointset_k, "points predicted per local set");

    add_dbl("ema.decay", &RunConfig::ema_decay, "target branch ema decay");

    add_dbl("train.lr", &RunConfig::train_lr, "peak learning rate (cosine to zero)");
    add_dbl("train.weight_decay", &RunConfig::train_weight_decay, "adamw decoupled decay");
    add_dbl("train.beta1", &RunConfig::train_beta1, "adamw beta1");
    add_dbl("train.beta2", &RunConfig::train_beta2, "adamw beta2");
    add_dbl("train.eps", &RunConfig::train_eps, "adamw epsilon");
    add_int("train.epochs", &RunConfig::train_epochs, "passes over the scene set");
    add_int("train.batch", &RunConfig::train_batch, "scenes per optimizer step");
    add_i64("train.max_steps", &RunConfig::train_max_steps, "hard step cap, 0 = none");
    add_int("train.checkpoint_every", &RunConfig::train_checkpoint_every,
            "steps between periodic checkpoints");

    add_int("probe.scenes", &RunConfig::probe_scenes, "scenes for the linear probe");
    add_int("probe.train_scenes", &RunConfig::probe_train_scenes,
            "probe scenes used for classifier training");
    add_int("probe.steps", &RunConfig::probe_steps, "classifier training steps");
    add_dbl("probe.lr", &RunConfig::probe_lr, "classifier learning rate");
    add_int("probe.seeds", &RunConfig::probe_seeds, "probe repetitions (split seeds)");
    add_dbl("probe.margin", &RunConfig::probe_margin,
            "required pretrained-minus-scratch accuracy margin, points");

    add_str("leakage.fractions", &RunConfig::leakage_fractions,
            "descending keep fractions for the recall sweep");
    add_int("leakage.seeds", &RunConfig::leakage_seeds, "subsample seeds per fraction");
    add_int("leakage.scenes", &RunConfig::leakage_scenes, "scenes aggregated by the sweep");
    add_dbl("leakage.margin", &RunConfig::leakage_margin,
            "required mean recall drop per fraction step");
    return r;
  }();
  return defs;
}

const KeyDef* find_key(const std::string& key) {
  for (const auto& def : registry()) {
    if (def.key == key) return &def;
  }
  return nullptr;
}

}  // namespace

Dtype RunConfig::dtype() const {
  if (precision == "f64") return Dtype::f64;
  if (precision == "f32") return Dtype::f32;
  fail(ErrorKind::parse, "precision must be f64 or f32, got '" + precision + "'");
}

std::vector<ScPartition> RunConfig::partitions() const {
  return parse_partitions(sc_partitions, sc_radius, sc_xi);
}

std::vector<double> RunConfig::leakage_fraction_list() const {
  std::vector<double> out;
  std::stringstream ss(leakage_fractions);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = trim(item);
    if (!t.empty()) out.push_back(parse_double(t, "leakage.fractions"));
  }
  require(!out.empty(), ErrorKind::parse, "leakage.fractions is empty");
  for (double f : out)
    require(f > 0.0 && f <= 1.0, ErrorKind::invalid_spec,
            "leakage fraction must be in (0, 1], got " + format_double(f));
  for (size_t i = 1; i < out.size(); ++i)
    require(out[i] < out[i - 1], ErrorKind::invalid_spec,
            "leakage fractions must strictly decrease");
  return out;
}

void RunConfig::validate() const {
  dtype();
  partitions();
  leakage_fraction_list();
  require(model_arch == "ca" || model_arch == "ca_pp" || model_arch == "sa",
          ErrorKind::invalid_spec, "model.arch must be ca, ca_pp or sa");
  require(model_width >= 1 && model_heads >= 1 && model_width % model_heads == 0,
          ErrorKind::invalid_spec, "model.width must be divisible by model.heads");
  require(model_blocks >= 1 && model_encoder_blocks >= 1, ErrorKind::invalid_spec,
          "block counts must be >= 1");
  require(model_k >= 1, ErrorKind::invalid_spec, "model.k must be >= 1");
  require(model_keypoints >= 1, ErrorKind::invalid_spec, "model.keypoints must be >= 1");
  require(mask_ratio >= 0.0 && mask_ratio <= 1.0, ErrorKind::invalid_spec,
          "mask.ratio must be in [0, 1]");
  require(mask_block > 0.0, ErrorKind::invalid_spec, "mask.block must be positive");
  require(ema_decay >= 0.0 && ema_decay <= 1.0, ErrorKind::invalid_spec,
          "ema.decay must be in [0, 1]");
  require(train_batch >= 1, ErrorKind::invalid_spec, "train.batch must be >= 1");
  require(train_epochs >= 0, ErrorKind::invalid_spec, "train.epochs must be >= 0");
  require(data_scenes >= 1, ErrorKind::invalid_spec, "data.scenes must be >= 1");
  require(pointset_k >= 1, ErrorKind::invalid_spec, "pointset.k must be >= 1");
  require(pointset_radius > 0.0, ErrorKind::invalid_spec, "pointset.radius must be positive");
  require(probe_scenes >= 2 && probe_train_scenes >= 1 &&
              probe_train_scenes < probe_scenes,
          ErrorKind::invalid_spec, "probe needs train scenes < total scenes");
  require(probe_seeds >= 1, ErrorKind::invalid_spec, "probe.seeds must be >= 1");
  require(leakage_seeds >= 1 && leakage_scenes >= 1, ErrorKind::invalid_spec,
          "leakage needs >= 1 seed and scene");
  require(target_sc || target_dsf || target_color || target_pointset,
          ErrorKind::invalid_spec, "at least one training target must be enabled");
}

void apply_profile(RunConfig& cfg, const std::string& name) {
  if (name == "desk") {
    // Desk is the default-constructed state.
    cfg = RunConfig{};
    cfg.profile = "desk";
    return;
  }
  if (name == "paper") {
    RunConfig fresh;
    fresh.profile = "paper";
    fresh.model_width = 576;
    fresh.model_heads = 12;
    fresh.model_blocks = 6;
    fresh.model_encoder_blocks = 6;
    fresh.model_keypoints = 10000;
    fresh.scene_points_per_primitive = 1250;
    fresh.train_epochs = 600;
    fresh.train_batch = 8;
    cfg = fresh;
    return;
  }
  fail(ErrorKind::parse, "unknown profile '" + name + "' (want desk or paper)");
}

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value,
                    const std::string& origin) {
  const KeyDef* def = find_key(key);
  require(def != nullptr, ErrorKind::parse, "unknown config key '" + key + "' in " + origin);
  def->set(cfg, value, origin + " (" + key + ")");
}

RunConfig parse_config_text(const std::string& text, const RunConfig& base,
                            const std::string& origin, bool ignore_profile) {
  // Pass 1: locate a profile key; it decides the baseline everything else
  // lands on. Pass 2: apply the remaining keys in file order.
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv(line);
    if (auto hash = sv.find('#'); hash != std::string_view::npos) sv = sv.substr(0, hash);
    sv = trim(sv);
    if (sv.empty()) continue;
    const auto eq = sv.find('=');
    require(eq != std::string_view::npos, ErrorKind::parse,
            "expected 'key = value' at " + origin + ":" + std::to_string(line_no));
    pairs.emplace_back(std::string(trim(sv.substr(0, eq))),
                       std::string(trim(sv.substr(eq + 1))));
  }

  RunConfig cfg = base;
  if (!ignore_profile) {
    for (const auto& [k, v] : pairs) {
      if (k == "profile") apply_profile(cfg, v);
    }
  }
  for (const auto& [k, v] : pairs) {
    if (k == "profile") continue;
    set_config_key(cfg, k, v, origin);
  }
  return cfg;
}

RunConfig load_config_file(const std::filesystem::path& path, const RunConfig& base,
                           bool ignore_profile) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), base, path.string(), ignore_profile);
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& def : registry()) {
    out += def.key;
    out += " = ";
    out += def.get(cfg);
    out += '\n';
  }
  return out;
}

std::string describe_config_keys() {
  RunConfig defaults;
  std::string out;
  for (const auto& def : registry()) {
    out += def.key;
    out += '\t';
    out += def.get(defaults);
    out += '\t';
    out += def.desc;
    out += '\n';
  }
  return out;
}

}  // namespace msp
