// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "anomagic/tensor.hpp"

namespace anomagic {

/// RGB image, planar [3, H, W], values nominally in [0, 1].
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, double fill = 0.0);
  explicit Image(Tensor pixels);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  static constexpr std::size_t channels() noexcept { return 3; }
  bool empty() const noexcept { return height_ == 0 || width_ == 0; }

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels_.at(c, y, x); }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels_.at(c, y, x); }

  const Tensor& tensor() const noexcept { return pixels_; }
  Tensor& tensor() noexcept { return pixels_; }

  /// Rounds to 8 bits and back, the precision every on-disk image has.
  Image quantized() const;

  friend bool operator==(const Image& a, const Image& b) { return a.pixels_ == b.pixels_; }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  Tensor pixels_;
};

/// Binary mask, row-major, 1 = foreground (anomaly), 0 = background.
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t height, std::size_t width, bool fill = false);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }

  bool operator()(std::size_t y, std::size_t x) const { return data_[y * width_ + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v) { data_[y * width_ + x] = v ? 1 : 0; }

  std::size_t count() const;
  bool any() const { return count() > 0; }
  double area_fraction() const;

  const std::vector<std::uint8_t>& data() const noexcept { return data_; }

  Mask operator&(const Mask& other) const;
  Mask operator|(const Mask& other) const;
  Mask operator~() const;
  /// True when every foreground pixel of *this is foreground in `other`.
  bool subset_of(const Mask& other) const;

  /// 0/1 values as a [1, H, W] tensor.
  Tensor to_tensor() const;

  friend bool operator==(const Mask& a, const Mask& b) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> data_;
};

// PNG I/O through libpng. Masks are single-channel files where any value
// above 127 is foreground; written masks use 0 / 255.
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);
Mask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Mask& mask);
/// Writes a [0,1] single-channel map as 8-bit grayscale.
void write_gray(const std::filesystem::path& path, const Tensor& map_hw);

/// Height and width from the PNG header without decoding pixels.
std::pair<std::size_t, std::size_t> png_size(const std::filesystem::path& path);

/// Encodes an image to PNG bytes in memory (for client payloads).
std::vector<std::uint8_t> encode_png(const Image& image);

}  // namespace anomagic
