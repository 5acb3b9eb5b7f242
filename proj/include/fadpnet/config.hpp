#pragma once

#include <map>
#include <string>
#include <vector>

#include "fadpnet/net.hpp"

namespace fadp {

// Flat dotted-key configuration: lines of `key = value`, '#' comments.
// CLI --set overrides replace individual keys.
struct KvConfig {
  std::map<std::string, std::string> values;

  static KvConfig load(const std::string& path);
  static KvConfig parse(const std::string& text);
  void set(const std::string& key, const std::string& value) { values[key] = value; }
  void apply_override(const std::string& key_eq_value);  // "a.b=c"
  bool has(const std::string& key) const { return values.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& def) const;
  int64_t get_int(const std::string& key, int64_t def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& def) const;

  std::string to_text() const;
};

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  int batch = 16;
  int epochs = 150;
  int64_t max_steps = 0;  // 0: run epochs * ceil(n/batch) steps
  uint64_t seed = 0;
  std::string device = "cpu";
  int64_t checkpoint_every = 1000;
  int64_t eval_every = 500;
  std::string lr_schedule = "constant";  // constant | cosine
  std::string out_dir = "runs/default";
  bool augment = true;
  bool route_noise = true;  // gumbel noise during training

  void validate() const;
};

struct DataConfig {
  std::string root;      // FADP_DATA_ROOT overrides when set
  std::string manifest;  // path to CSV, relative to root when not absolute
  int hr_size = 128;
  int scale = 8;
  int synthetic_count = 0;  // when > 0, use procedural samples instead of files
};

ModelConfig model_config_from(const KvConfig& kv);
TrainConfig train_config_from(const KvConfig& kv);
DataConfig data_config_from(const KvConfig& kv);

// Round-trip serialization used by checkpoints.
void model_config_to_kv(const ModelConfig& cfg, KvConfig& kv);
void train_config_to_kv(const TrainConfig& cfg, KvConfig& kv);
void data_config_to_kv(const DataConfig& cfg, KvConfig& kv);

}  // namespace fadp
