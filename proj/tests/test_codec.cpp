// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "ddpolab/codec.hpp"
#include "ddpolab/error.hpp"
#include "ddpolab/rng.hpp"

using namespace ddpolab;

namespace {

CodecImage noise_image(std::uint64_t seed, std::size_t side = 8) {
  StreamRng rng(seed, 99);
  std::vector<double> v(side * side);
  for (double& x : v) x = 2.0 * rng.uniform() - 1.0;
  return render_to_image(v, side, side);
}

CodecImage box_blur(const CodecImage& img) {
  CodecImage out = img;
  const auto w = static_cast<int>(img.width);
  const auto h = static_cast<int>(img.height);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int sum = 0;
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          sum += img.pixels[static_cast<std::size_t>(yy * w + xx)];
          ++n;
        }
      }
      out.pixels[static_cast<std::size_t>(y * w + x)] = static_cast<std::uint8_t>((sum + n / 2) / n);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("rendering maps the unit interval onto bytes") {
  const std::vector<double> v{-1.0, 1.0, 0.0, -5.0, 5.0, -0.999, 0.5, 0.2};
  const CodecImage img = render_to_image(std::vector<double>(64, 0.0));
  CHECK(img.width == 8);
  CHECK(img.pixels.size() == 64);
  std::vector<double> full(64, 0.0);
  std::copy(v.begin(), v.end(), full.begin());
  const CodecImage r = render_to_image(full);
  CHECK(r.pixels[0] == 0);
  CHECK(r.pixels[1] == 255);
  CHECK(r.pixels[2] == 128);
  CHECK(r.pixels[3] == 0);
  CHECK(r.pixels[4] == 255);
  CHECK(r.pixels[6] == 191);  // 191.25
  CHECK(r.pixels[7] == 153);  // 153.0
  CHECK_THROWS_AS(render_to_image(v), ShapeError);
}

TEST_CASE("quantization table follows the quality rule") {
  const auto q50 = quant_table(50);
  CHECK(q50[0] == 16);
  CHECK(q50[63] == 99);
  const auto q100 = quant_table(100);
  for (int q : q100) CHECK(q == 1);
  const auto q95 = quant_table(95);
  CHECK(q95[0] == 2);  // (16 * 10 + 50) / 100
  CHECK_THROWS_AS(quant_table(0), DomainError);
  CHECK_THROWS_AS(quant_table(101), DomainError);
}

TEST_CASE("a flat mid-gray block is one DC code and an end-of-block") {
  const CodecImage flat = render_to_image(std::vector<double>(64, 0.0));
  const auto bytes = codec_encode(flat, 95);
  // DC category 0 ("00") + EOB ("1010"), padded with ones.
  REQUIRE(bytes.size() == 1);
  CHECK(bytes[0] == 0x2B);
}

TEST_CASE("constant images compress better than noise") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const CodecImage noisy = noise_image(seed);
    const double level = std::fmod(0.37 * static_cast<double>(seed), 2.0) - 1.0;
    const CodecImage flat = render_to_image(std::vector<double>(64, level));
    CHECK(codec_encode(flat, 95).size() < codec_encode(noisy, 95).size());
  }
}

TEST_CASE("blurring reduces the compressed size") {
  std::size_t smaller = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const CodecImage img = noise_image(seed, 16);
    if (codec_encode(box_blur(img), 95).size() < codec_encode(img, 95).size()) ++smaller;
  }
  CHECK(smaller == 100);
}

TEST_CASE("encoding is deterministic and decodes to the quantized blocks") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const CodecImage img = noise_image(seed, seed % 2 == 0 ? 8 : 16);
    for (int quality : {10, 50, 95, 100}) {
      const auto a = codec_encode(img, quality);
      CHECK(a == codec_encode(img, quality));
      CHECK(codec_decode_blocks(a, img.width, img.height) == quantized_blocks(img, quality));
    }
    const auto hq = codec_encode(img, 100);
    const CodecImage back = codec_decode(hq, img.width, img.height, 100);
    int worst = 0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      worst = std::max(worst, std::abs(int(back.pixels[i]) - int(img.pixels[i])));
    }
    CHECK(worst <= 2);
  }
}

TEST_CASE("invalid images are rejected") {
  CodecImage bad{12, 8, std::vector<std::uint8_t>(96, 0)};
  CHECK_THROWS_AS(codec_encode(bad, 95), DomainError);
  CodecImage short_pixels{8, 8, std::vector<std::uint8_t>(10, 0)};
  CHECK_THROWS_AS(codec_encode(short_pixels, 95), ShapeError);
  const std::vector<std::uint8_t> junk{0xFF, 0x13};
  CHECK_THROWS_AS(codec_decode_blocks(junk, 8, 8), FormatError);
}

TEST_CASE("image corpus round-trips") {
  std::vector<CodecImage> images{noise_image(1), noise_image(2, 16), noise_image(3)};
  const auto path = std::filesystem::temp_directory_path() / "ddpolab_test_corpus.bin";
  write_image_corpus(path, images);
  CHECK(read_image_corpus(path) == images);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 1);
  CHECK_THROWS_AS(read_image_corpus(path), FormatError);
  std::filesystem::remove(path);
}
