// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ddpolab {

/// 8-bit grayscale image with dimensions in multiples of 8.
struct CodecImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  void validate() const;
  friend bool operator==(const CodecImage&, const CodecImage&) = default;
};

/// Maps model values in [-1, 1] (clamped) to pixels: round-half-up of
/// (v + 1) * 127.5, clamped to [0, 255].
CodecImage render_to_image(std::span<const double> values, std::size_t width = 8,
                           std::size_t height = 8);

/// Standard luminance table scaled with the usual 50-pivot quality rule,
/// natural (row-major) order.
std::array<int, 64> quant_table(int quality);

using CoefficientBlock = std::array<int, 64>;

/// Quantized DCT coefficients per block (raster block order, natural order).
std::vector<CoefficientBlock> quantized_blocks(const CodecImage& img, int quality);

/// Baseline-JPEG-style entropy stream for a grayscale image: per block,
/// level shift, 8x8 DCT-II, quantization, zigzag scan, DC difference
/// coding, AC run-length coding with the standard luminance Huffman tables,
/// 0xFF byte stuffing and 1-bit padding of the last byte. No markers or
/// headers; the byte count measures the image's compressed payload.
std::vector<std::uint8_t> codec_encode(const CodecImage& img, int quality);

/// Entropy-decodes a stream back to quantized coefficient blocks.
std::vector<CoefficientBlock> codec_decode_blocks(std::span<const std::uint8_t> bytes,
                                                  std::size_t width, std::size_t height);

/// Full decode (dequantize + inverse DCT), for round-trip checks.
CodecImage codec_decode(std::span<const std::uint8_t> bytes, std::size_t width,
                        std::size_t height, int quality);

/// Corpus file: records of "DDPOIMG1", u32 width, u32 height, raw pixels;
/// any number of records back to back.
void write_image_corpus(const std::filesystem::path& path, std::span<const CodecImage> images);
std::vector<CodecImage> read_image_corpus(const std::filesystem::path& path);

}  // namespace ddpolab
