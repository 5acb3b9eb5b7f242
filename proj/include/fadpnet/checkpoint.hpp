#pragma once

#include <map>
#include <string>

#include "fadpnet/config.hpp"
#include "fadpnet/tensor.hpp"

namespace fadp {

// Versioned container: JSON header (configs, counters, array directory)
// followed by raw little-endian float32 data. No executable content.
// Raw bytes round-trip bit-exactly.
struct Checkpoint {
  KvConfig model_kv;
  KvConfig train_kv;
  KvConfig data_kv;
  int64_t step = 0;
  int64_t epoch = 0;
  uint64_t seed = 0;  // base seed; all noise streams derive from (seed, step)
  int64_t adam_t = 0;
  std::map<std::string, Tensor<float>> arrays;  // "param:NAME", "adam_m:NAME", "adam_v:NAME"
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fadp
