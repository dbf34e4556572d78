// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "anomagic/errors.hpp"

namespace anomagic {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void require_same_size(const Mask& a, const Mask& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("mask sizes differ");
  }
}

struct PngImage {
  png_image img{};
  PngImage() {
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format,
                                   std::size_t& height, std::size_t& width) {
  PngImage p;
  if (!png_image_begin_read_from_file(&p.img, path.c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "': " + p.img.message);
  }
  p.img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(p.img));
  if (!png_image_finish_read(&p.img, nullptr, buf.data(), 0, nullptr)) {
    throw IoError("cannot decode PNG '" + path.string() + "': " + p.img.message);
  }
  height = p.img.height;
  width = p.img.width;
  return buf;
}

void write_png(const std::filesystem::path& path, png_uint_32 format, std::size_t height,
               std::size_t width, const std::vector<std::uint8_t>& buf) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  PngImage p;
  p.img.width = static_cast<png_uint_32>(width);
  p.img.height = static_cast<png_uint_32>(height);
  p.img.format = format;
  if (!png_image_write_to_file(&p.img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path.string() + "': " + p.img.message);
  }
}

std::vector<std::uint8_t> interleave(const Image& image) {
  const std::size_t H = image.height(), W = image.width();
  std::vector<std::uint8_t> buf(H * W * 3);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) buf[(y * W + x) * 3 + c] = to_byte(image.at(c, y, x));
  return buf;
}

}  // namespace

Image::Image(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), pixels_({3, height, width}, fill) {}

Image::Image(Tensor pixels) : pixels_(std::move(pixels)) {
  if (pixels_.ndim() != 3 || pixels_.dim(0) != 3) {
    throw ShapeError("image tensor must be [3,H,W], got " + shape_str(pixels_.shape()));
  }
  height_ = pixels_.dim(1);
  width_ = pixels_.dim(2);
}

Image Image::quantized() const {
  Image out = *this;
  for (auto& v : out.pixels_.data()) v = to_byte(v) / 255.0;
  return out;
}

Mask::Mask(std::size_t height, std::size_t width, bool fill)
    : height_(height), width_(width), data_(height * width, fill ? 1 : 0) {}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

double Mask::area_fraction() const {
  return data_.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(data_.size());
}

Mask Mask::operator&(const Mask& other) const {
  require_same_size(*this, other);
  Mask out(height_, width_);
  for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] = data_[i] & other.data_[i];
  return out;
}

Mask Mask::operator|(const Mask& other) const {
  require_same_size(*this, other);
  Mask out(height_, width_);
  for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] = data_[i] | other.data_[i];
  return out;
}

Mask Mask::operator~() const {
  Mask out(height_, width_);
  for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] = data_[i] ? 0 : 1;
  return out;
}

bool Mask::subset_of(const Mask& other) const {
  require_same_size(*this, other);
  for (std::size_t i = 0; i < data_.size(); ++i)
    if (data_[i] && !other.data_[i]) return false;
  return true;
}

Tensor Mask::to_tensor() const {
  Tensor t({1, height_, width_});
  for (std::size_t i = 0; i < data_.size(); ++i) t[i] = data_[i];
  return t;
}

Image read_image(const std::filesystem::path& path) {
  std::size_t H = 0, W = 0;
  auto buf = read_png(path, PNG_FORMAT_RGB, H, W);
  Image img(H, W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = buf[(y * W + x) * 3 + c] / 255.0;
  return img;
}

void write_image(const std::filesystem::path& path, const Image& image) {
  write_png(path, PNG_FORMAT_RGB, image.height(), image.width(), interleave(image));
}

Mask read_mask(const std::filesystem::path& path) {
  std::size_t H = 0, W = 0;
  auto buf = read_png(path, PNG_FORMAT_GRAY, H, W);
  Mask m(H, W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) m.set(y, x, buf[y * W + x] > 127);
  return m;
}

void write_mask(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint8_t> buf(mask.height() * mask.width());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = mask.data()[i] ? 255 : 0;
  write_png(path, PNG_FORMAT_GRAY, mask.height(), mask.width(), buf);
}

void write_gray(const std::filesystem::path& path, const Tensor& map_hw) {
  if (map_hw.ndim() != 2) throw ShapeError("write_gray expects [H,W]");
  std::vector<std::uint8_t> buf(map_hw.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(map_hw[i]);
  write_png(path, PNG_FORMAT_GRAY, map_hw.dim(0), map_hw.dim(1), buf);
}

std::pair<std::size_t, std::size_t> png_size(const std::filesystem::path& path) {
  PngImage p;
  if (!png_image_begin_read_from_file(&p.img, path.c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "': " + p.img.message);
  }
  return {p.img.height, p.img.width};
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  PngImage p;
  p.img.width = static_cast<png_uint_32>(image.width());
  p.img.height = static_cast<png_uint_32>(image.height());
  p.img.format = PNG_FORMAT_RGB;
  auto pixels = interleave(image);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&p.img, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG size query failed: ") + p.img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&p.img, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + p.img.message);
  }
  out.resize(size);
  return out;
}

}  // namespace anomagic
