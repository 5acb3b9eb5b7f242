#include "fadpnet/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace fadp {

namespace {
constexpr char kMagic[8] = {'F', 'A', 'D', 'P', 'C', 'K', 'P', '1'};
using json = nlohmann::json;

json kv_to_json(const KvConfig& kv) {
  json j = json::object();
  for (const auto& [k, v] : kv.values) j[k] = v;
  return j;
}

KvConfig kv_from_json(const json& j) {
  KvConfig kv;
  for (auto it = j.begin(); it != j.end(); ++it) kv.values[it.key()] = it.value().get<std::string>();
  return kv;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  json header;
  header["format_version"] = 1;
  header["dtype"] = "f32";
  header["step"] = ck.step;
  header["epoch"] = ck.epoch;
  header["seed"] = ck.seed;
  header["adam_t"] = ck.adam_t;
  header["model_config"] = kv_to_json(ck.model_kv);
  header["train_config"] = kv_to_json(ck.train_kv);
  header["data_config"] = kv_to_json(ck.data_kv);
  json dir = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : ck.arrays) {
    json e;
    e["name"] = name;
    e["shape"] = t.shape;
    e["offset"] = offset;
    e["count"] = t.numel();
    dir.push_back(e);
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
  }
  header["arrays"] = dir;
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  const uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : ck.arrays)
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!f) throw DataError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("not a checkpoint file (bad magic): " + path);
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw DataError("truncated checkpoint header: " + path);
  json header = json::parse(hs, nullptr, false);
  if (header.is_discarded()) throw DataError("corrupt checkpoint header: " + path);
  if (header.value("format_version", 0) != 1)
    throw DataError("unsupported checkpoint version: " + path);
  if (header.value("dtype", "") != "f32")
    throw DataError("unsupported checkpoint dtype: " + path);

  Checkpoint ck;
  ck.step = header.value("step", int64_t(0));
  ck.epoch = header.value("epoch", int64_t(0));
  ck.seed = header.value("seed", uint64_t(0));
  ck.adam_t = header.value("adam_t", int64_t(0));
  ck.model_kv = kv_from_json(header["model_config"]);
  ck.train_kv = kv_from_json(header["train_config"]);
  ck.data_kv = kv_from_json(header["data_config"]);

  for (const auto& e : header["arrays"]) {
    const std::string name = e["name"].get<std::string>();
    Shape shape = e["shape"].get<Shape>();
    Tensor<float> t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!f) throw DataError("truncated checkpoint data: " + path);
    ck.arrays.emplace(name, std::move(t));
  }
  return ck;
}

}  // namespace fadp
