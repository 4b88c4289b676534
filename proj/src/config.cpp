#include "fovdet/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fovdet/errors.hpp"

namespace fovdet {

const std::vector<ConfigKey>& config_registry() {
  static const std::vector<ConfigKey> kKeys = {
      {"seed", "0", "global RNG seed; all randomness derives from it"},
      {"workers", "0", "max threads for parallel kernels (0 = auto)"},

      {"image.width", "256", "rendered image width (multiple of 32)"},
      {"image.height", "128", "rendered image height (multiple of 32)"},
      {"image.pad_value", "0", "fill value for out-of-frame resampling"},

      {"sim.focal_min", "700", "admissible focal range, lower bound (px)"},
      {"sim.focal_max", "1300", "admissible focal range, upper bound (px)"},

      {"scene.canonical_focal", "1000", "focal used for the canonical render"},
      {"scene.min_boxes", "1", "min objects per scene"},
      {"scene.max_boxes", "12", "max objects per scene (cap 12)"},
      {"scene.z_min", "8", "nearest object center depth (m)"},
      {"scene.z_max", "55", "farthest object center depth (m)"},
      {"scene.x_limit", "25", "hard cap on |x| of object centers (m)"},
      {"scene.frustum_margin", "0.8",
       "fraction of the canonical-focal frustum usable for object centers"},
      {"scene.ground_min", "0.8", "ground plane height range, lower (m)"},
      {"scene.ground_max", "1.6", "ground plane height range, upper (m)"},
      {"scene.object_scale", "1.0", "global scale on per-category base dims"},
      {"scene.dim_jitter", "0.03", "relative jitter on object dims"},
      {"scene.yaw_range", "0.6", "max |yaw| when sampling (radians)"},
      {"scene.bg_amplitude", "0.25", "background texture contrast"},

      {"dataset.categories", "3", "number of object categories"},
      {"dataset.fidelity_mad",
       "0.10", "max mean-abs pixel gap, simulated vs re-rendered (z>=10m)"},

      {"encoder.dim", "64", "text embedding dimensionality"},
      {"encoder.numeric_gain", "16",
       "scale of the numeric channel relative to sqrt(dim)"},

      {"connector.hidden", "0", "connector hidden width (0 = bank dim)"},
      {"connector.gelu", "erf", "gelu flavor: erf | tanh"},

      {"detector.d_model", "256", "shared feature width d'"},
      {"detector.n_queries", "50", "object queries"},
      {"detector.n_decoder_layers", "3", "decoder layers"},
      {"detector.n_heads", "8", "attention heads"},
      {"detector.ffn_dim", "256", "decoder feed-forward width"},
      {"detector.base_channels", "16", "backbone stem channels"},
      {"detector.max_channels", "64", "backbone channel cap"},

      {"loss.class", "2", "class loss weight"},
      {"loss.bbox", "5", "2D box L1 weight"},
      {"loss.giou", "2", "GIoU loss weight"},
      {"loss.center3d", "10", "projected 3D center L1 weight"},
      {"loss.dim", "1", "dimension L1 weight"},
      {"loss.depth", "1", "depth L1 weight"},
      {"loss.dmap", "1", "depth map loss weight"},
      {"loss.yaw", "1", "heading (sin,cos) L1 weight"},
      {"loss.focal_alpha", "0.25", "alpha in the class focal loss"},
      {"loss.focal_gamma", "2", "gamma in the class focal loss"},

      {"match.class", "2", "class cost weight"},
      {"match.bbox", "5", "2D box cost weight"},
      {"match.giou", "2", "GIoU cost weight"},
      {"match.center3d", "10", "3D center cost weight"},

      {"train.lr", "2e-4", "learning rate"},
      {"train.weight_decay", "1e-4", "decoupled weight decay"},
      {"train.epochs", "30", "training epochs"},
      {"train.decay_rate", "0.5", "step-decay multiplier"},
      {"train.decay_list", "85,125,165,205",
       "decay epochs on the reference schedule"},
      {"train.decay_ref", "250", "epoch count the decay list refers to"},
      {"train.log_every", "100", "metrics log cadence (steps)"},
      {"train.manifest", "", "dataset manifest to train on"},
      {"train.bank", "", "embedding bank file"},
      {"train.ablation", "full",
       "full | no-encoder | no-connector | no-featfuse | no-queryfuse | "
       "baseline"},
      {"train.out", "run", "output directory (checkpoint + metrics)"},

      {"infer.threshold_px", "32", "nearest-reuse gap threshold (px)"},
      {"infer.space", "bank", "interpolation space: bank | post"},
      {"infer.extrapolation", "linear", "outside seen range: linear | clamp"},
      {"infer.score_threshold", "0.35", "detection score cutoff"},

      {"eval.iou_threshold", "0.7", "IoU threshold for AP3D / APBEV"},
      {"eval.easy_height", "40", "min projected height for easy (px)"},
      {"eval.mod_height", "25", "min projected height for moderate (px)"},
      {"eval.easy_vis", "0.95", "min visibility for easy"},
      {"eval.mod_vis", "0.5", "min visibility for moderate"},
      {"eval.ckpt", "", "checkpoint path"},
      {"eval.bank", "", "embedding bank file"},
      {"eval.manifest", "", "dataset manifest to evaluate"},
      {"eval.focals", "", "focal grid (comma list; empty = manifest focals)"},
      {"eval.mismatch", "", "perturbation deltas in px (comma list)"},
      {"eval.out", "eval", "output directory for CSV tables"},

      {"synth.scenes", "50", "number of scenes to generate"},
      {"synth.focals", "700,900,1100,1300", "focal set for dataset records"},
      {"synth.splits", "1,0,0", "train,val,test scene ratios (sum 1)"},
      {"synth.oracle", "true", "also write exact re-renders per record"},
      {"synth.out", "dataset", "output directory"},

      {"bank.desc_dir", "data/descriptions", "description file directory"},
      {"bank.encoder", "reference",
       "text encoder: reference | external:<command>"},
      {"bank.dim", "64", "embedding width for the bank build"},
      {"bank.out", "bank.txt", "bank output file"},
  };
  return kKeys;
}

bool is_known_key(const std::string& name) {
  for (const auto& k : config_registry())
    if (k.name == name) return true;
  return false;
}

RunConfig RunConfig::defaults() {
  RunConfig c;
  for (const auto& k : config_registry()) c.values_[k.name] = k.def;
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!is_known_key(key)) throw ConfigError("unknown config key: " + key);
  values_[key] = value;
}

static std::string env_name_for(const std::string& key) {
  std::string out = "FOVDET_";
  for (char c : key)
    out += (c == '.') ? '_' : static_cast<char>(std::toupper(c));
  return out;
}

RunConfig RunConfig::resolve(
    const std::map<std::string, std::string>& overrides,
    const std::string& config_file_path) {
  RunConfig c = defaults();
  for (const auto& k : config_registry()) {
    if (const char* v = std::getenv(env_name_for(k.name).c_str()))
      c.values_[k.name] = v;
  }
  if (!config_file_path.empty()) {
    for (const auto& [k, v] : parse_config_file(config_file_path)) c.set(k, v);
  }
  for (const auto& [k, v] : overrides) c.set(k, v);
  return c;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

long long RunConfig::get_int(const std::string& key) const {
  const std::string& s = get(key);
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": expected integer, got '" + s + "'");
  }
  if (pos != s.size())
    throw ConfigError("key " + key + ": expected integer, got '" + s + "'");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& s = get(key);
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": expected number, got '" + s + "'");
  }
  if (pos != s.size())
    throw ConfigError("key " + key + ": expected number, got '" + s + "'");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("key " + key + ": expected boolean, got '" + s + "'");
}

std::vector<double> RunConfig::get_list(const std::string& key) const {
  return parse_double_list(get(key));
}

std::string RunConfig::to_string() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) {
    // trim
    auto b = cur.find_first_not_of(" \t");
    auto e = cur.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    cur = cur.substr(b, e - b + 1);
    std::size_t pos = 0;
    double v;
    try {
      v = std::stod(cur, &pos);
    } catch (const std::exception&) {
      throw ConfigError("bad number in list: '" + cur + "'");
    }
    if (pos != cur.size())
      throw ConfigError("bad number in list: '" + cur + "'");
    out.push_back(v);
  }
  return out;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    auto trim = [](std::string s) {
      auto x = s.find_first_not_of(" \t\r");
      auto y = s.find_last_not_of(" \t\r");
      return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
    };
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

}  // namespace fovdet
