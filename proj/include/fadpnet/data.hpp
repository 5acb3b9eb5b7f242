#pragma once

#include <string>
#include <vector>

#include "fadpnet/random.hpp"
#include "fadpnet/tensor.hpp"

namespace fadp {

enum class Split { Train, Val, Test };

std::string split_name(Split s);
Split parse_split(const std::string& s);

// Paired training sample: HR ground truth and the degraded-then-upsampled
// network input, same spatial size, values in [0,1].
struct SRSample {
  Tensor<float> hr;
  Tensor<float> lr_up;
  std::string source_id;
  Split split = Split::Train;
};

struct ManifestRecord {
  std::string path;
  Split split = Split::Train;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::string root;
  int64_t count(Split s) const;
  std::vector<int64_t> indices(Split s) const;
};

// CSV `path,split` with '#' comments. Paths resolve against `root`; load
// fails fast listing every missing file.
DatasetManifest load_manifest(const std::string& path, const std::string& root);

// Separable Catmull-Rom (a = -0.5) resize with half-pixel centers and
// replicated borders; computed in double, output is not clamped.
Tensor<float> bicubic_resize(const Tensor<float>& src, int64_t out_h, int64_t out_w);

Tensor<float> center_crop_square(const Tensor<float>& src);

Tensor<float> clamp01(Tensor<float> img);

// Center crop -> bicubic to hr_size -> bicubic down by `scale` -> bicubic back
// up; both members clamped to [0,1]. Rejects images smaller than hr_size.
SRSample prepare_pair(const Tensor<float>& image, const std::string& source_id, Split split,
                      int hr_size = 128, int scale = 8);

// p=0.5 horizontal flip and a scale factor from [1.0, 1.3] applied identically
// to hr and lr_up (upscale then center crop back); shapes unchanged.
SRSample augment(const SRSample& sample, RandomEngine& rng);

// Deterministic core of `augment` with explicit parameters.
SRSample apply_augment(const SRSample& sample, bool flip, double scale_factor);

// Deterministic epoch shuffle: a pure function of (seed, epoch).
std::vector<int64_t> epoch_order(int64_t n, uint64_t seed, int64_t epoch);

// Deterministic procedural face-like test image (3,size,size) in [0,1]:
// smooth background, skin oval, eyes/brows/mouth edges.
Tensor<float> make_synthetic_face(RandomEngine& rng, int size);

}  // namespace fadp
