#include "fadpnet/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace fadp {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::parse(const std::string& text) {
  KvConfig kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected `key = value`");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv.values[key] = value;
  }
  return kv;
}

KvConfig KvConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse(os.str());
}

void KvConfig::apply_override(const std::string& kev) {
  const auto eq = kev.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must be key=value, got: " + kev);
  values[trim(kev.substr(0, eq))] = trim(kev.substr(eq + 1));
}

std::string KvConfig::get_str(const std::string& key, const std::string& def) const {
  auto it = values.find(key);
  return it == values.end() ? def : it->second;
}

int64_t KvConfig::get_int(const std::string& key, int64_t def) const {
  auto it = values.find(key);
  if (it == values.end()) return def;
  try {
    size_t used = 0;
    int64_t v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key " + key + ": expected integer, got `" + it->second + "`");
  }
}

double KvConfig::get_double(const std::string& key, double def) const {
  auto it = values.find(key);
  if (it == values.end()) return def;
  try {
    size_t used = 0;
    double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key " + key + ": expected number, got `" + it->second + "`");
  }
}

bool KvConfig::get_bool(const std::string& key, bool def) const {
  auto it = values.find(key);
  if (it == values.end()) return def;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + ": expected boolean, got `" + it->second + "`");
}

std::vector<int> KvConfig::get_ints(const std::string& key, const std::vector<int>& def) const {
  auto it = values.find(key);
  if (it == values.end()) return def;
  std::vector<int> out;
  std::istringstream is(it->second);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    try {
      out.push_back(std::stoi(trim(tok)));
    } catch (...) {
      throw ConfigError("config key " + key + ": expected comma-separated integers");
    }
  }
  if (out.empty()) throw ConfigError("config key " + key + ": empty list");
  return out;
}

std::string KvConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values) os << k << " = " << v << "\n";
  return os.str();
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("train.lr must be > 0");
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (epochs < 0 || (epochs == 0 && max_steps == 0))
    throw ConfigError("train: either epochs or max_steps must be positive");
  if (lr_schedule != "constant" && lr_schedule != "cosine")
    throw ConfigError("train.lr_schedule must be constant or cosine");
}

namespace {

OffsetMode parse_offset_mode(const std::string& s) {
  if (s == "learned") return OffsetMode::Learned;
  if (s == "none") return OffsetMode::None;
  if (s == "zero_warp") return OffsetMode::ZeroWarp;
  if (s == "fixed_warp") return OffsetMode::FixedWarp;
  if (s == "conv_align") return OffsetMode::ConvAlign;
  throw ConfigError("unknown model.offset_mode: " + s);
}

std::string offset_mode_name(OffsetMode m) {
  switch (m) {
    case OffsetMode::Learned: return "learned";
    case OffsetMode::None: return "none";
    case OffsetMode::ZeroWarp: return "zero_warp";
    case OffsetMode::FixedWarp: return "fixed_warp";
    default: return "conv_align";
  }
}

AssbVariant parse_assb_variant(const std::string& s) {
  if (s == "full") return AssbVariant::Full;
  if (s == "no_routing") return AssbVariant::NoRouting;
  if (s == "no_reorder") return AssbVariant::NoReorder;
  if (s == "no_prompt_pool") return AssbVariant::NoPromptPool;
  if (s == "no_lowrank") return AssbVariant::NoLowRank;
  throw ConfigError("unknown model.assb_variant: " + s);
}

std::string assb_variant_name(AssbVariant v) {
  switch (v) {
    case AssbVariant::Full: return "full";
    case AssbVariant::NoRouting: return "no_routing";
    case AssbVariant::NoReorder: return "no_reorder";
    case AssbVariant::NoPromptPool: return "no_prompt_pool";
    default: return "no_lowrank";
  }
}

}  // namespace

ModelConfig model_config_from(const KvConfig& kv) {
  ModelConfig cfg;
  cfg.base_channels = static_cast<int>(kv.get_int("model.base_channels", cfg.base_channels));
  cfg.levels = static_cast<int>(kv.get_int("model.levels", cfg.levels));
  cfg.lfeb_per_level = kv.get_ints("model.lfeb_per_level", cfg.lfeb_per_level);
  cfg.hfeb_per_level = kv.get_ints("model.hfeb_per_level", cfg.hfeb_per_level);
  cfg.prompt.pool_size = static_cast<int>(kv.get_int("model.prompt.pool_size", cfg.prompt.pool_size));
  cfg.prompt.rank = static_cast<int>(kv.get_int("model.prompt.rank", cfg.prompt.rank));
  cfg.prompt.state_dim = static_cast<int>(kv.get_int("model.prompt.state_dim", cfg.prompt.state_dim));
  cfg.prompt.tau = kv.get_double("model.prompt.tau", cfg.prompt.tau);
  cfg.seb_reduction = static_cast<int>(kv.get_int("model.seb_reduction", cfg.seb_reduction));
  cfg.hfr.cycles = static_cast<int>(kv.get_int("model.hfr.cycles", cfg.hfr.cycles));
  cfg.hfr.shuffle_groups = static_cast<int>(kv.get_int("model.hfr.shuffle_groups", cfg.hfr.shuffle_groups));
  cfg.hfr_kernel1 = static_cast<int>(kv.get_int("model.hfr.kernel1", cfg.hfr_kernel1));
  cfg.hfr_kernel2 = static_cast<int>(kv.get_int("model.hfr.kernel2", cfg.hfr_kernel2));
  cfg.hfr_shuffle = kv.get_bool("model.hfr.use_shuffle", cfg.hfr_shuffle);
  cfg.dpa.heads = static_cast<int>(kv.get_int("model.dpa.heads", cfg.dpa.heads));
  cfg.dpa.temp_hidden = static_cast<int>(kv.get_int("model.dpa.temp_hidden", cfg.dpa.temp_hidden));
  cfg.dpa.fixed_temp = kv.get_bool("model.dpa.fixed_temp", cfg.dpa.fixed_temp);
  cfg.dpa.use_pos = kv.get_bool("model.dpa.use_pos", cfg.dpa.use_pos);
  const std::string lp = kv.get_str("model.lowpass.kind", "box");
  if (lp == "box")
    cfg.lowpass.kind = LowPassSpec::Kind::BoxBlur;
  else if (lp == "gaussian")
    cfg.lowpass.kind = LowPassSpec::Kind::GaussianBlur;
  else
    throw ConfigError("model.lowpass.kind must be box or gaussian");
  cfg.lowpass.kernel_size = static_cast<int>(kv.get_int(
      "model.lowpass.kernel", cfg.lowpass.kind == LowPassSpec::Kind::GaussianBlur ? 5 : 3));
  cfg.lowpass.sigma = kv.get_double("model.lowpass.sigma", cfg.lowpass.sigma);
  cfg.no_hfr = kv.get_bool("model.ablation.no_hfr", false);
  cfg.no_dpa = kv.get_bool("model.ablation.no_dpa", false);
  cfg.no_seb = kv.get_bool("model.ablation.no_seb", false);
  cfg.swap_branches = kv.get_bool("model.ablation.swap_branches", false);
  cfg.offset_mode = parse_offset_mode(kv.get_str("model.offset_mode", "learned"));
  cfg.assb_variant = parse_assb_variant(kv.get_str("model.assb_variant", "full"));
  cfg.validate();
  return cfg;
}

void model_config_to_kv(const ModelConfig& cfg, KvConfig& kv) {
  auto join = [](const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(v[i]);
    }
    return s;
  };
  kv.set("model.base_channels", std::to_string(cfg.base_channels));
  kv.set("model.levels", std::to_string(cfg.levels));
  kv.set("model.lfeb_per_level", join(cfg.lfeb_per_level));
  kv.set("model.hfeb_per_level", join(cfg.hfeb_per_level));
  kv.set("model.prompt.pool_size", std::to_string(cfg.prompt.pool_size));
  kv.set("model.prompt.rank", std::to_string(cfg.prompt.rank));
  kv.set("model.prompt.state_dim", std::to_string(cfg.prompt.state_dim));
  kv.set("model.prompt.tau", std::to_string(cfg.prompt.tau));
  kv.set("model.seb_reduction", std::to_string(cfg.seb_reduction));
  kv.set("model.hfr.cycles", std::to_string(cfg.hfr.cycles));
  kv.set("model.hfr.shuffle_groups", std::to_string(cfg.hfr.shuffle_groups));
  kv.set("model.hfr.kernel1", std::to_string(cfg.hfr_kernel1));
  kv.set("model.hfr.kernel2", std::to_string(cfg.hfr_kernel2));
  kv.set("model.hfr.use_shuffle", cfg.hfr_shuffle ? "true" : "false");
  kv.set("model.dpa.heads", std::to_string(cfg.dpa.heads));
  kv.set("model.dpa.temp_hidden", std::to_string(cfg.dpa.temp_hidden));
  kv.set("model.dpa.fixed_temp", cfg.dpa.fixed_temp ? "true" : "false");
  kv.set("model.dpa.use_pos", cfg.dpa.use_pos ? "true" : "false");
  kv.set("model.lowpass.kind", cfg.lowpass.kind == LowPassSpec::Kind::BoxBlur ? "box" : "gaussian");
  kv.set("model.lowpass.kernel", std::to_string(cfg.lowpass.kernel_size));
  kv.set("model.lowpass.sigma", std::to_string(cfg.lowpass.sigma));
  kv.set("model.ablation.no_hfr", cfg.no_hfr ? "true" : "false");
  kv.set("model.ablation.no_dpa", cfg.no_dpa ? "true" : "false");
  kv.set("model.ablation.no_seb", cfg.no_seb ? "true" : "false");
  kv.set("model.ablation.swap_branches", cfg.swap_branches ? "true" : "false");
  kv.set("model.offset_mode", offset_mode_name(cfg.offset_mode));
  kv.set("model.assb_variant", assb_variant_name(cfg.assb_variant));
}

TrainConfig train_config_from(const KvConfig& kv) {
  TrainConfig cfg;
  cfg.lr = kv.get_double("train.lr", cfg.lr);
  cfg.beta1 = kv.get_double("train.beta1", cfg.beta1);
  cfg.beta2 = kv.get_double("train.beta2", cfg.beta2);
  cfg.eps = kv.get_double("train.eps", cfg.eps);
  cfg.batch = static_cast<int>(kv.get_int("train.batch", cfg.batch));
  cfg.epochs = static_cast<int>(kv.get_int("train.epochs", cfg.epochs));
  cfg.max_steps = kv.get_int("train.max_steps", cfg.max_steps);
  cfg.seed = static_cast<uint64_t>(kv.get_int("train.seed", 0));
  cfg.device = kv.get_str("train.device", cfg.device);
  cfg.checkpoint_every = kv.get_int("train.checkpoint_every", cfg.checkpoint_every);
  cfg.eval_every = kv.get_int("train.eval_every", cfg.eval_every);
  cfg.lr_schedule = kv.get_str("train.lr_schedule", cfg.lr_schedule);
  cfg.out_dir = kv.get_str("train.out_dir", cfg.out_dir);
  cfg.augment = kv.get_bool("train.augment", cfg.augment);
  cfg.route_noise = kv.get_bool("train.route_noise", cfg.route_noise);
  cfg.validate();
  return cfg;
}

void train_config_to_kv(const TrainConfig& cfg, KvConfig& kv) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", cfg.lr);
  kv.set("train.lr", buf);
  std::snprintf(buf, sizeof(buf), "%.10g", cfg.beta1);
  kv.set("train.beta1", buf);
  std::snprintf(buf, sizeof(buf), "%.10g", cfg.beta2);
  kv.set("train.beta2", buf);
  std::snprintf(buf, sizeof(buf), "%.10g", cfg.eps);
  kv.set("train.eps", buf);
  kv.set("train.batch", std::to_string(cfg.batch));
  kv.set("train.epochs", std::to_string(cfg.epochs));
  kv.set("train.max_steps", std::to_string(cfg.max_steps));
  kv.set("train.seed", std::to_string(cfg.seed));
  kv.set("train.device", cfg.device);
  kv.set("train.checkpoint_every", std::to_string(cfg.checkpoint_every));
  kv.set("train.eval_every", std::to_string(cfg.eval_every));
  kv.set("train.lr_schedule", cfg.lr_schedule);
  kv.set("train.out_dir", cfg.out_dir);
  kv.set("train.augment", cfg.augment ? "true" : "false");
  kv.set("train.route_noise", cfg.route_noise ? "true" : "false");
}

DataConfig data_config_from(const KvConfig& kv) {
  DataConfig cfg;
  cfg.root = kv.get_str("data.root", "");
  if (const char* env = std::getenv("FADP_DATA_ROOT"); env && *env) cfg.root = env;
  cfg.manifest = kv.get_str("data.manifest", "");
  cfg.hr_size = static_cast<int>(kv.get_int("data.hr_size", cfg.hr_size));
  cfg.scale = static_cast<int>(kv.get_int("data.scale", cfg.scale));
  cfg.synthetic_count = static_cast<int>(kv.get_int("data.synthetic_count", 0));
  if (cfg.hr_size < 8 || cfg.hr_size % 4 != 0)
    throw ConfigError("data.hr_size must be a multiple of 4 and >= 8");
  if (cfg.scale < 2 || cfg.hr_size % cfg.scale != 0)
    throw ConfigError("data.scale must be >= 2 and divide hr_size");
  return cfg;
}

void data_config_to_kv(const DataConfig& cfg, KvConfig& kv) {
  kv.set("data.root", cfg.root);
  kv.set("data.manifest", cfg.manifest);
  kv.set("data.hr_size", std::to_string(cfg.hr_size));
  kv.set("data.scale", std::to_string(cfg.scale));
  kv.set("data.synthetic_count", std::to_string(cfg.synthetic_count));
}

}  // namespace fadp
