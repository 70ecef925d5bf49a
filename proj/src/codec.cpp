// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ddpolab/binary_io.hpp"
#include "ddpolab/error.hpp"

namespace ddpolab {
namespace {

constexpr std::array<int, 64> kLuminanceTable = {
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kZigzag = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,   //
    12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6,  7,  14, 21, 28,  //
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,  //
    58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

constexpr std::array<std::uint8_t, 16> kDcBits = {0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
constexpr std::array<std::uint8_t, 12> kDcValues = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};

constexpr std::array<std::uint8_t, 16> kAcBits = {0, 2, 1, 3, 3, 2, 4, 3,
                                                  5, 5, 4, 4, 0, 0, 1, 0x7d};
constexpr std::array<std::uint8_t, 162> kAcValues = {
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61,
    0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52,
    0xd1, 0xf0, 0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25,
    0x26, 0x27, 0x28, 0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45,
    0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64,
    0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83,
    0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99,
    0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6,
    0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3,
    0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8,
    0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa};

// cos(k*pi/16), k = 0..8, as literals so the transform never touches libm.
constexpr std::array<double, 9> kCos = {
    1.0,
    0.98078528040323044913,
    0.92387953251128675613,
    0.83146961230254523708,
    0.70710678118654752440,
    0.55557023301960222474,
    0.38268343236508977173,
    0.19509032201612826785,
    0.0};

double cos_sixteenth(int m) {
  m %= 32;
  if (m > 16) m = 32 - m;
  return m <= 8 ? kCos[static_cast<std::size_t>(m)] : -kCos[static_cast<std::size_t>(16 - m)];
}

// basis[u][x] = C(u)/2 * cos((2x+1) u pi / 16).
std::array<std::array<double, 8>, 8> make_basis() {
  std::array<std::array<double, 8>, 8> b{};
  for (int u = 0; u < 8; ++u) {
    const double cu = u == 0 ? 0.5 * kCos[4] : 0.5;
    for (int x = 0; x < 8; ++x) b[u][x] = cu * cos_sixteenth((2 * x + 1) * u);
  }
  return b;
}

const std::array<std::array<double, 8>, 8>& basis() {
  static const auto b = make_basis();
  return b;
}

struct HuffmanCode {
  std::uint16_t code = 0;
  std::uint8_t length = 0;
};

template <std::size_t N>
std::array<HuffmanCode, 256> build_table(const std::array<std::uint8_t, 16>& bits,
                                         const std::array<std::uint8_t, N>& values) {
  std::array<HuffmanCode, 256> table{};
  std::uint16_t code = 0;
  std::size_t k = 0;
  for (int len = 1; len <= 16; ++len) {
    for (int i = 0; i < bits[static_cast<std::size_t>(len - 1)]; ++i) {
      table[values[k++]] = {code, static_cast<std::uint8_t>(len)};
      ++code;
    }
    code = static_cast<std::uint16_t>(code << 1);
  }
  return table;
}

const std::array<HuffmanCode, 256>& dc_table() {
  static const auto t = build_table(kDcBits, kDcValues);
  return t;
}

const std::array<HuffmanCode, 256>& ac_table() {
  static const auto t = build_table(kAcBits, kAcValues);
  return t;
}

int magnitude_category(int v) {
  int a = v < 0 ? -v : v;
  int cat = 0;
  while (a) {
    ++cat;
    a >>= 1;
  }
  return cat;
}

class BitWriter {
 public:
  void put(std::uint32_t bits, int count) {
    for (int i = count - 1; i >= 0; --i) {
      acc_ = static_cast<std::uint8_t>((acc_ << 1) | ((bits >> i) & 1u));
      if (++filled_ == 8) flush_byte();
    }
  }
  void code(const HuffmanCode& c) { put(c.code, c.length); }
  void value(int v, int cat) {
    if (cat == 0) return;
    const int bits = v >= 0 ? v : v + (1 << cat) - 1;
    put(static_cast<std::uint32_t>(bits), cat);
  }
  std::vector<std::uint8_t> finish() {
    while (filled_ != 0) put(1, 1);
    return std::move(out_);
  }

 private:
  void flush_byte() {
    out_.push_back(acc_);
    if (acc_ == 0xFF) out_.push_back(0x00);
    acc_ = 0;
    filled_ = 0;
  }
  std::vector<std::uint8_t> out_;
  std::uint8_t acc_ = 0;
  int filled_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> data) : data_(data) {}

  int bit() {
    if (left_ == 0) {
      if (pos_ >= data_.size()) throw FormatError("codec stream truncated");
      cur_ = data_[pos_++];
      if (cur_ == 0xFF) {
        if (pos_ >= data_.size() || data_[pos_] != 0x00) throw FormatError("bad byte stuffing");
        ++pos_;
      }
      left_ = 8;
    }
    --left_;
    return (cur_ >> left_) & 1;
  }
  int bits(int n) {
    int v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | bit();
    return v;
  }
  int decode(const std::array<HuffmanCode, 256>& table) {
    std::uint16_t code = 0;
    for (int len = 1; len <= 16; ++len) {
      code = static_cast<std::uint16_t>((code << 1) | bit());
      for (std::size_t s = 0; s < 256; ++s) {
        if (table[s].length == len && table[s].code == code) return static_cast<int>(s);
      }
    }
    throw FormatError("invalid huffman code");
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::uint8_t cur_ = 0;
  int left_ = 0;
};

int extend(int bits, int cat) {
  if (cat == 0) return 0;
  return bits < (1 << (cat - 1)) ? bits - (1 << cat) + 1 : bits;
}

int round_half_away(double v) {
  return static_cast<int>(v >= 0.0 ? std::floor(v + 0.5) : -std::floor(-v + 0.5));
}

void check_quality(int quality) {
  if (quality < 1 || quality > 100) {
    throw DomainError("codec quality " + std::to_string(quality) + " outside 1..100");
  }
}

void check_dimensions(std::size_t width, std::size_t height) {
  if (width == 0 || height == 0 || width % 8 != 0 || height % 8 != 0) {
    throw DomainError("codec image dimensions " + std::to_string(width) + "x" +
                      std::to_string(height) + " are not positive multiples of 8");
  }
}

}  // namespace

void CodecImage::validate() const {
  check_dimensions(width, height);
  if (pixels.size() != width * height) throw ShapeError("codec image pixel count mismatch");
}

CodecImage render_to_image(std::span<const double> values, std::size_t width, std::size_t height) {
  if (values.size() != width * height) throw ShapeError("render_to_image: length mismatch");
  CodecImage img{width, height, std::vector<std::uint8_t>(values.size())};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(values[i], -1.0, 1.0);
    const double p = std::floor((v + 1.0) * 127.5 + 0.5);
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
  }
  return img;
}

std::array<int, 64> quant_table(int quality) {
  check_quality(quality);
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> q{};
  for (std::size_t i = 0; i < 64; ++i) q[i] = std::clamp((kLuminanceTable[i] * scale + 50) / 100, 1, 255);
  return q;
}

std::vector<CoefficientBlock> quantized_blocks(const CodecImage& img, int quality) {
  img.validate();
  const auto q = quant_table(quality);
  const auto& b = basis();
  std::vector<CoefficientBlock> blocks;
  for (std::size_t by = 0; by < img.height; by += 8) {
    for (std::size_t bx = 0; bx < img.width; bx += 8) {
      double f[8][8];
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          f[y][x] = static_cast<double>(img.pixels[(by + y) * img.width + bx + x]) - 128.0;
        }
      }
      // Rows first: tmp[y][u] = sum_x f[y][x] b[u][x].
      double tmp[8][8];
      for (int y = 0; y < 8; ++y) {
        for (int u = 0; u < 8; ++u) {
          double acc = 0.0;
          for (int x = 0; x < 8; ++x) acc += f[y][x] * b[u][x];
          tmp[y][u] = acc;
        }
      }
      CoefficientBlock block{};
      for (int v = 0; v < 8; ++v) {
        for (int u = 0; u < 8; ++u) {
          double acc = 0.0;
          for (int y = 0; y < 8; ++y) acc += b[v][y] * tmp[y][u];
          const auto idx = static_cast<std::size_t>(v * 8 + u);
          block[idx] = round_half_away(acc / q[idx]);
        }
      }
      blocks.push_back(block);
    }
  }
  return blocks;
}

std::vector<std::uint8_t> codec_encode(const CodecImage& img, int quality) {
  const auto blocks = quantized_blocks(img, quality);
  const auto& dc = dc_table();
  const auto& ac = ac_table();
  BitWriter w;
  int prev_dc = 0;
  for (const auto& block : blocks) {
    const int diff = block[0] - prev_dc;
    prev_dc = block[0];
    const int dc_cat = magnitude_category(diff);
    w.code(dc[static_cast<std::size_t>(dc_cat)]);
    w.value(diff, dc_cat);
    int run = 0;
    for (std::size_t i = 1; i < 64; ++i) {
      const int coef = block[static_cast<std::size_t>(kZigzag[i])];
      if (coef == 0) {
        ++run;
        continue;
      }
      while (run > 15) {
        w.code(ac[0xF0]);
        run -= 16;
      }
      const int cat = magnitude_category(coef);
      w.code(ac[static_cast<std::size_t>((run << 4) | cat)]);
      w.value(coef, cat);
      run = 0;
    }
    if (run > 0) w.code(ac[0x00]);
  }
  return w.finish();
}

std::vector<CoefficientBlock> codec_decode_blocks(std::span<const std::uint8_t> bytes,
                                                  std::size_t width, std::size_t height) {
  check_dimensions(width, height);
  const std::size_t count = (width / 8) * (height / 8);
  BitReader r(bytes);
  std::vector<CoefficientBlock> blocks(count);
  int prev_dc = 0;
  for (auto& block : blocks) {
    block.fill(0);
    const int dc_cat = r.decode(dc_table());
    prev_dc += extend(r.bits(dc_cat), dc_cat);
    block[0] = prev_dc;
    for (std::size_t i = 1; i < 64;) {
      const int sym = r.decode(ac_table());
      if (sym == 0x00) break;
      if (sym == 0xF0) {
        i += 16;
        continue;
      }
      i += static_cast<std::size_t>(sym >> 4);
      const int cat = sym & 0x0F;
      if (i >= 64) throw FormatError("AC run past end of block");
      block[static_cast<std::size_t>(kZigzag[i])] = extend(r.bits(cat), cat);
      ++i;
    }
  }
  return blocks;
}

CodecImage codec_decode(std::span<const std::uint8_t> bytes, std::size_t width,
                        std::size_t height, int quality) {
  const auto blocks = codec_decode_blocks(bytes, width, height);
  const auto q = quant_table(quality);
  const auto& b = basis();
  CodecImage img{width, height, std::vector<std::uint8_t>(width * height)};
  std::size_t n = 0;
  for (std::size_t by = 0; by < height; by += 8) {
    for (std::size_t bx = 0; bx < width; bx += 8) {
      const auto& block = blocks[n++];
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          double acc = 0.0;
          for (int v = 0; v < 8; ++v) {
            for (int u = 0; u < 8; ++u) {
              const auto idx = static_cast<std::size_t>(v * 8 + u);
              acc += b[v][y] * b[u][x] * block[idx] * q[idx];
            }
          }
          const double p = std::clamp(std::floor(acc + 128.0 + 0.5), 0.0, 255.0);
          img.pixels[(by + y) * width + bx + x] = static_cast<std::uint8_t>(p);
        }
      }
    }
  }
  return img;
}

void write_image_corpus(const std::filesystem::path& path, std::span<const CodecImage> images) {
  ByteWriter w;
  for (const auto& img : images) {
    img.validate();
    w.bytes("DDPOIMG1");
    w.u32(static_cast<std::uint32_t>(img.width));
    w.u32(static_cast<std::uint32_t>(img.height));
    for (std::uint8_t p : img.pixels) w.u8(p);
  }
  write_file(path, w.data());
}

std::vector<CodecImage> read_image_corpus(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  std::vector<CodecImage> images;
  while (!r.at_end()) {
    r.expect("DDPOIMG1");
    CodecImage img;
    img.width = r.u32();
    img.height = r.u32();
    check_dimensions(img.width, img.height);
    const std::string raw = r.bytes(img.width * img.height);
    img.pixels.assign(raw.begin(), raw.end());
    images.push_back(std::move(img));
  }
  return images;
}

}  // namespace ddpolab
