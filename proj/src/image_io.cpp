#include "fadpnet/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "fadpnet/errors.hpp"

namespace fadp {

namespace {

constexpr unsigned char kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

uint32_t be32(const unsigned char* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void put_be32(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

bool file_exists(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return f.good();
}

Tensor<float> read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open image: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), kPngSig, 8) != 0)
    throw DataError("not a PNG file: " + path);

  uint32_t w = 0, h = 0;
  int bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<unsigned char> idat;
  size_t pos = 8;
  while (pos + 8 <= buf.size()) {
    const uint32_t len = be32(&buf[pos]);
    if (pos + 12 + len > buf.size()) throw DataError("truncated PNG: " + path);
    const char* type = reinterpret_cast<const char*>(&buf[pos + 4]);
    const unsigned char* data = &buf[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      w = be32(data);
      h = be32(data + 4);
      bit_depth = data[8];
      color_type = data[9];
      interlace = data[12];
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (w == 0 || h == 0) throw DataError("PNG missing IHDR: " + path);
  if (bit_depth != 8) throw DataError("only 8-bit PNGs are supported: " + path);
  if (interlace != 0) throw DataError("interlaced PNGs are not supported: " + path);
  int nch;
  switch (color_type) {
    case 0: nch = 1; break;
    case 2: nch = 3; break;
    case 4: nch = 2; break;
    case 6: nch = 4; break;
    default: throw DataError("unsupported PNG color type: " + path);
  }

  const size_t stride = static_cast<size_t>(w) * nch;
  const size_t raw_size = (stride + 1) * h;
  std::vector<unsigned char> raw(raw_size);
  uLongf out_len = raw_size;
  if (uncompress(raw.data(), &out_len, idat.data(), idat.size()) != Z_OK || out_len != raw_size)
    throw DataError("PNG inflate failed: " + path);

  // undo per-scanline filters in place
  std::vector<unsigned char> img(stride * h);
  for (uint32_t y = 0; y < h; ++y) {
    const unsigned char filter = raw[(stride + 1) * y];
    const unsigned char* src = &raw[(stride + 1) * y + 1];
    unsigned char* dst = &img[stride * y];
    const unsigned char* up = y > 0 ? &img[stride * (y - 1)] : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      const int a = x >= static_cast<size_t>(nch) ? dst[x - nch] : 0;
      const int b = up ? up[x] : 0;
      const int c = (up && x >= static_cast<size_t>(nch)) ? up[x - nch] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw DataError("bad PNG filter byte: " + path);
      }
      dst[x] = static_cast<unsigned char>(v & 0xff);
    }
  }

  Tensor<float> out({3, static_cast<int64_t>(h), static_cast<int64_t>(w)});
  const float inv = 1.0f / 255.0f;
  for (uint32_t y = 0; y < h; ++y)
    for (uint32_t x = 0; x < w; ++x) {
      const unsigned char* px = &img[stride * y + static_cast<size_t>(x) * nch];
      float r, g, b;
      switch (color_type) {
        case 0: r = g = b = px[0] * inv; break;
        case 2: r = px[0] * inv; g = px[1] * inv; b = px[2] * inv; break;
        case 4: r = g = b = px[0] * inv; break;
        default: r = px[0] * inv; g = px[1] * inv; b = px[2] * inv; break;
      }
      out.at3(0, y, x) = r;
      out.at3(1, y, x) = g;
      out.at3(2, y, x) = b;
    }
  return out;
}

void write_png(const std::string& path, const Tensor<float>& img) {
  FADP_CHECK_SHAPE(img.rank() == 3 && img.dim(0) == 3, "write_png: image must be (3,H,W)");
  const int64_t h = img.dim(1), w = img.dim(2);
  const size_t stride = static_cast<size_t>(w) * 3;
  std::vector<unsigned char> raw((stride + 1) * h);
  for (int64_t y = 0; y < h; ++y) {
    raw[(stride + 1) * y] = 0;  // filter: none
    unsigned char* dst = &raw[(stride + 1) * y + 1];
    for (int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = img.at3(c, y, x);
        v = std::min(std::max(v, 0.0f), 1.0f);
        dst[x * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  }
  uLongf bound = compressBound(raw.size());
  std::vector<unsigned char> z(bound);
  if (compress2(z.data(), &bound, raw.data(), raw.size(), 6) != Z_OK)
    throw DataError("PNG deflate failed: " + path);
  z.resize(bound);

  std::vector<unsigned char> out(kPngSig, kPngSig + 8);
  auto chunk = [&out](const char* type, const unsigned char* data, size_t len) {
    put_be32(out, static_cast<uint32_t>(len));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (len) out.insert(out.end(), data, data + len);
    const uint32_t crc =
        crc32(0, out.data() + start, static_cast<uInt>(out.size() - start));
    put_be32(out, crc);
  };
  unsigned char ihdr[13];
  ihdr[0] = static_cast<unsigned char>(w >> 24);
  ihdr[1] = static_cast<unsigned char>(w >> 16);
  ihdr[2] = static_cast<unsigned char>(w >> 8);
  ihdr[3] = static_cast<unsigned char>(w);
  ihdr[4] = static_cast<unsigned char>(h >> 24);
  ihdr[5] = static_cast<unsigned char>(h >> 16);
  ihdr[6] = static_cast<unsigned char>(h >> 8);
  ihdr[7] = static_cast<unsigned char>(h);
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // RGB
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  chunk("IHDR", ihdr, 13);
  chunk("IDAT", z.data(), z.size());
  chunk("IEND", nullptr, 0);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write image: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("short write: " + path);
}

}  // namespace fadp
