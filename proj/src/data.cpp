#include "fadpnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fadpnet/errors.hpp"
#include "fadpnet/image_io.hpp"

namespace fadp {

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
  }
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val" || s == "validation") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split: " + s);
}

int64_t DatasetManifest::count(Split s) const {
  int64_t n = 0;
  for (const auto& r : records)
    if (r.split == s) ++n;
  return n;
}

std::vector<int64_t> DatasetManifest::indices(Split s) const {
  std::vector<int64_t> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].split == s) out.push_back(static_cast<int64_t>(i));
  return out;
}

DatasetManifest load_manifest(const std::string& path, const std::string& root) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest: " + path);
  DatasetManifest m;
  m.root = root;
  std::string line;
  std::vector<std::string> seen_paths;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos)
      throw DataError("manifest line " + std::to_string(lineno) + ": expected `path,split`");
    ManifestRecord r;
    r.path = line.substr(0, comma);
    std::string sp = line.substr(comma + 1);
    while (!sp.empty() && (sp.back() == '\r' || sp.back() == ' ')) sp.pop_back();
    r.split = parse_split(sp);
    m.records.push_back(r);
    seen_paths.push_back(r.path);
  }
  std::sort(seen_paths.begin(), seen_paths.end());
  const auto dup = std::adjacent_find(seen_paths.begin(), seen_paths.end());
  if (dup != seen_paths.end())
    throw DataError("manifest: path appears in more than one row (splits must be disjoint): " + *dup);

  std::string missing;
  for (const auto& r : m.records) {
    const std::string full = root.empty() ? r.path : root + "/" + r.path;
    if (!file_exists(full)) missing += "\n  " + full;
  }
  if (!missing.empty()) throw DataError("manifest references missing files:" + missing);
  return m;
}

namespace {

// Catmull-Rom cubic kernel, a = -0.5.
double cubic_weight(double x) {
  const double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

// One separable pass along the last dimension of (rows, n_in) -> (rows, n_out).
// When downscaling, the kernel is dilated by the scale factor (antialiasing,
// the imresize convention); weights are normalized to sum to 1.
void resize_line(const double* src, double* dst, int64_t rows, int64_t n_in, int64_t n_out) {
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  const double fscale = std::max(1.0, scale);
  const double support = 2.0 * fscale;
  const int64_t max_taps = static_cast<int64_t>(std::ceil(2.0 * support)) + 2;
  std::vector<int64_t> base(static_cast<size_t>(n_out));
  std::vector<int> ntaps(static_cast<size_t>(n_out));
  std::vector<double> wts(static_cast<size_t>(n_out * max_taps));
  for (int64_t o = 0; o < n_out; ++o) {
    const double sx = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const int64_t lo = static_cast<int64_t>(std::ceil(sx - support));
    const int64_t hi = static_cast<int64_t>(std::floor(sx + support));
    base[static_cast<size_t>(o)] = lo;
    const int n = static_cast<int>(hi - lo + 1);
    ntaps[static_cast<size_t>(o)] = n;
    double total = 0;
    for (int t = 0; t < n; ++t) {
      const double w = cubic_weight((sx - static_cast<double>(lo + t)) / fscale);
      wts[static_cast<size_t>(o * max_taps + t)] = w;
      total += w;
    }
    for (int t = 0; t < n; ++t) wts[static_cast<size_t>(o * max_taps + t)] /= total;
  }
  for (int64_t r = 0; r < rows; ++r) {
    const double* s = src + r * n_in;
    double* d = dst + r * n_out;
    for (int64_t o = 0; o < n_out; ++o) {
      const int64_t b = base[static_cast<size_t>(o)];
      const double* w = &wts[static_cast<size_t>(o * max_taps)];
      double acc = 0;
      for (int t = 0; t < ntaps[static_cast<size_t>(o)]; ++t) {
        int64_t i = b + t;
        i = std::min(std::max(i, int64_t(0)), n_in - 1);
        acc += w[t] * s[i];
      }
      d[o] = acc;
    }
  }
}

}  // namespace

Tensor<float> bicubic_resize(const Tensor<float>& src, int64_t out_h, int64_t out_w) {
  FADP_CHECK_SHAPE(src.rank() == 3, "bicubic_resize: (C,H,W) expected");
  const int64_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  FADP_CHECK_SHAPE(out_h >= 1 && out_w >= 1, "bicubic_resize: bad output size");
  std::vector<double> a(static_cast<size_t>(c * h * w));
  for (int64_t i = 0; i < c * h * w; ++i) a[static_cast<size_t>(i)] = src[i];
  // horizontal pass
  std::vector<double> b(static_cast<size_t>(c * h * out_w));
  resize_line(a.data(), b.data(), c * h, w, out_w);
  // vertical pass: transpose (c,h,out_w) -> (c,out_w,h), resize, transpose back
  std::vector<double> bt(static_cast<size_t>(c * out_w * h));
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < out_w; ++x)
        bt[static_cast<size_t>((ci * out_w + x) * h + y)] =
            b[static_cast<size_t>((ci * h + y) * out_w + x)];
  std::vector<double> ct(static_cast<size_t>(c * out_w * out_h));
  resize_line(bt.data(), ct.data(), c * out_w, h, out_h);
  Tensor<float> out({c, out_h, out_w});
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < out_h; ++y)
      for (int64_t x = 0; x < out_w; ++x)
        out.at3(ci, y, x) = static_cast<float>(ct[static_cast<size_t>((ci * out_w + x) * out_h + y)]);
  return out;
}

Tensor<float> center_crop_square(const Tensor<float>& src) {
  const int64_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  const int64_t side = std::min(h, w);
  const int64_t y0 = (h - side) / 2, x0 = (w - side) / 2;
  Tensor<float> out({c, side, side});
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < side; ++y)
      for (int64_t x = 0; x < side; ++x) out.at3(ci, y, x) = src.at3(ci, y0 + y, x0 + x);
  return out;
}

Tensor<float> clamp01(Tensor<float> img) {
  for (auto& v : img.data) v = std::min(std::max(v, 0.0f), 1.0f);
  return img;
}

SRSample prepare_pair(const Tensor<float>& image, const std::string& source_id, Split split,
                      int hr_size, int scale) {
  FADP_CHECK_SHAPE(image.rank() == 3 && image.dim(0) == 3, "prepare_pair: (3,H,W) expected");
  if (image.dim(1) < hr_size || image.dim(2) < hr_size)
    throw DataError("prepare_pair: image smaller than target size: " + source_id);
  if (hr_size % scale != 0) throw ConfigError("prepare_pair: scale must divide hr_size");
  SRSample s;
  s.source_id = source_id;
  s.split = split;
  Tensor<float> sq = center_crop_square(image);
  s.hr = clamp01(sq.dim(1) == hr_size ? sq : bicubic_resize(sq, hr_size, hr_size));
  Tensor<float> lr = bicubic_resize(s.hr, hr_size / scale, hr_size / scale);
  s.lr_up = clamp01(bicubic_resize(lr, hr_size, hr_size));
  return s;
}

namespace {

Tensor<float> hflip(const Tensor<float>& img) {
  const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<float> out(img.shape);
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) out.at3(ci, y, x) = img.at3(ci, y, w - 1 - x);
  return out;
}

Tensor<float> center_crop_to(const Tensor<float>& img, int64_t side) {
  const int64_t h = img.dim(1), w = img.dim(2);
  const int64_t y0 = (h - side) / 2, x0 = (w - side) / 2;
  Tensor<float> out({img.dim(0), side, side});
  for (int64_t ci = 0; ci < img.dim(0); ++ci)
    for (int64_t y = 0; y < side; ++y)
      for (int64_t x = 0; x < side; ++x) out.at3(ci, y, x) = img.at3(ci, y0 + y, x0 + x);
  return out;
}

}  // namespace

SRSample apply_augment(const SRSample& sample, bool flip, double scale_factor) {
  SRSample out = sample;
  const int64_t side = sample.hr.dim(1);
  const int64_t scaled = std::llround(static_cast<double>(side) * scale_factor);
  if (scaled > side) {
    out.hr = clamp01(center_crop_to(bicubic_resize(sample.hr, scaled, scaled), side));
    out.lr_up = clamp01(center_crop_to(bicubic_resize(sample.lr_up, scaled, scaled), side));
  }
  if (flip) {
    out.hr = hflip(out.hr);
    out.lr_up = hflip(out.lr_up);
  }
  return out;
}

SRSample augment(const SRSample& sample, RandomEngine& rng) {
  const bool flip = rng.bernoulli(0.5);
  const double s = rng.uniform(1.0, 1.3);
  return apply_augment(sample, flip, s);
}

std::vector<int64_t> epoch_order(int64_t n, uint64_t seed, int64_t epoch) {
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  RandomEngine rng(RandomEngine::mix(seed, 0x45504f43 + static_cast<uint64_t>(epoch)));
  for (int64_t i = n - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.randint(i + 1))]);
  return order;
}

Tensor<float> make_synthetic_face(RandomEngine& rng, int size) {
  const int64_t n = size;
  Tensor<float> img({3, n, n});
  const double cx = 0.5 + rng.uniform(-0.05, 0.05);
  const double cy = 0.52 + rng.uniform(-0.05, 0.05);
  const double rx = 0.30 + rng.uniform(-0.04, 0.06);
  const double ry = 0.38 + rng.uniform(-0.04, 0.06);
  const double skin_r = 0.75 + rng.uniform(-0.12, 0.12);
  const double skin_g = 0.58 + rng.uniform(-0.10, 0.10);
  const double skin_b = 0.47 + rng.uniform(-0.10, 0.10);
  const double bg_r = rng.uniform(0.15, 0.75);
  const double bg_g = rng.uniform(0.15, 0.75);
  const double bg_b = rng.uniform(0.15, 0.75);
  const double grad_ang = rng.uniform(0.0, 6.283);
  const double eye_dx = 0.13 + rng.uniform(-0.02, 0.02);
  const double eye_y = cy - 0.10 + rng.uniform(-0.02, 0.02);
  const double eye_r = 0.035 + rng.uniform(-0.008, 0.012);
  const double mouth_y = cy + 0.18 + rng.uniform(-0.02, 0.03);
  const double mouth_w = 0.12 + rng.uniform(-0.03, 0.04);

  auto smoothstep = [](double e0, double e1, double x) {
    const double t = std::min(std::max((x - e0) / (e1 - e0), 0.0), 1.0);
    return t * t * (3.0 - 2.0 * t);
  };
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / n;
      const double v = (static_cast<double>(y) + 0.5) / n;
      const double g = 0.5 + 0.35 * std::sin(2.2 * (u * std::cos(grad_ang) + v * std::sin(grad_ang)));
      double r = bg_r * g, gg = bg_g * g, b = bg_b * g;
      // face oval with a soft edge
      const double d = std::sqrt(((u - cx) / rx) * ((u - cx) / rx) +
                                 ((v - cy) / ry) * ((v - cy) / ry));
      const double face = 1.0 - smoothstep(0.92, 1.05, d);
      const double shade = 1.0 - 0.25 * d * d;
      r = r * (1 - face) + skin_r * shade * face;
      gg = gg * (1 - face) + skin_g * shade * face;
      b = b * (1 - face) + skin_b * shade * face;
      // eyes
      for (int side = -1; side <= 1; side += 2) {
        const double ex = cx + side * eye_dx;
        const double de = std::sqrt((u - ex) * (u - ex) + (v - eye_y) * (v - eye_y));
        const double e = 1.0 - smoothstep(eye_r * 0.6, eye_r * 1.1, de);
        r = r * (1 - e) + 0.08 * e;
        gg = gg * (1 - e) + 0.07 * e;
        b = b * (1 - e) + 0.09 * e;
        // brow: soft dark band above the eye
        const double by = eye_y - 2.2 * eye_r;
        const double brow = (1.0 - smoothstep(0.008, 0.018, std::abs(v - by))) *
                            (1.0 - smoothstep(eye_r * 1.4, eye_r * 2.0, std::abs(u - ex)));
        r = r * (1 - brow) + 0.25 * brow;
        gg = gg * (1 - brow) + 0.18 * brow;
        b = b * (1 - brow) + 0.15 * brow;
      }
      // mouth
      {
        const double m = (1.0 - smoothstep(mouth_w * 0.7, mouth_w, std::abs(u - cx))) *
                         (1.0 - smoothstep(0.008, 0.018, std::abs(v - mouth_y)));
        r = r * (1 - m) + 0.55 * m;
        gg = gg * (1 - m) + 0.2 * m;
        b = b * (1 - m) + 0.25 * m;
      }
      img.at3(0, y, x) = static_cast<float>(std::min(std::max(r, 0.0), 1.0));
      img.at3(1, y, x) = static_cast<float>(std::min(std::max(gg, 0.0), 1.0));
      img.at3(2, y, x) = static_cast<float>(std::min(std::max(b, 0.0), 1.0));
    }
  return img;
}

}  // namespace fadp
