#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "deblur_lab/tensor.hpp"

namespace deblur {

// H x W x C array of doubles, channels interleaved. Unit-interval intensities
// unless stated otherwise.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  std::size_t size() const { return data.size(); }
  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * channels + c]; }

  // One channel as a contiguous H*W plane.
  std::vector<double> plane(std::size_t c) const;
  void set_plane(std::size_t c, const std::vector<double>& values);
};

Image clamp_unit(Image img);

Tensor to_tensor(const Image& img, bool requires_grad = false);
Image from_tensor(const Tensor& t);

// Bilinear resampling with half-pixel centers.
Image resize_bilinear(const Image& img, std::size_t height, std::size_t width);

// 8-bit PNG. Gray and gray+alpha load as three identical channels; alpha is dropped.
Image load_png(const std::filesystem::path& path);
// Quantizes to 8 bits (round to nearest). 1- and 3-channel images supported.
void save_png(const Image& img, const std::filesystem::path& path);

}  // namespace deblur
