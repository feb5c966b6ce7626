#pragma once

// Real-valued single-channel fields and the small set of filters the quality
// and metric code needs.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "controlcol/color.hpp"
#include "controlcol/error.hpp"

namespace controlcol {

class Plane {
 public:
  Plane() = default;
  Plane(int width, int height, double fill = 0.0)
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {
    if (width < 1 || height < 1) throw InvalidArgument("plane dimensions must be positive");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& at(int x, int y) { return data_[index(x, y)]; }
  double at(int x, int y) const { return data_[index(x, y)]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  Plane crop(int x0, int y0, int w, int h) const {
    Plane out(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(x, y) = at(x0 + x, y0 + y);
    return out;
  }

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

// Rec.601 luma on the [0,255] scale, unrounded.
inline Plane luma_plane(const Frame& f) {
  Plane out(f.width(), f.height());
  auto src = f.pixels();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = luma_real(src[i]);
  return out;
}

enum class Channel { red, green, blue };

inline Plane channel_plane(const Frame& f, Channel c) {
  Plane out(f.width(), f.height());
  auto src = f.pixels();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = c == Channel::red ? src[i].r : c == Channel::green ? src[i].g : src[i].b;
  }
  return out;
}

// Normalized 1-D Gaussian taps of odd length `size`.
inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const int half = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - half;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable convolution with replicated borders; output has the input size.
inline Plane convolve_replicate(const Plane& in, std::span<const double> kernel) {
  const int half = static_cast<int>(kernel.size()) / 2;
  const int w = in.width();
  const int h = in.height();
  Plane tmp(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -half; k <= half; ++k) {
        acc += kernel[static_cast<std::size_t>(k + half)] * in.at(std::clamp(x + k, 0, w - 1), y);
      }
      tmp.at(x, y) = acc;
    }
  }
  Plane out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -half; k <= half; ++k) {
        acc += kernel[static_cast<std::size_t>(k + half)] * tmp.at(x, std::clamp(y + k, 0, h - 1));
      }
      out.at(x, y) = acc;
    }
  }
  return out;
}

// Separable convolution keeping only positions where the window fits
// entirely; output is (w - k + 1) x (h - k + 1).
inline Plane convolve_valid(const Plane& in, std::span<const double> kernel) {
  const int k = static_cast<int>(kernel.size());
  const int ow = in.width() - k + 1;
  const int oh = in.height() - k + 1;
  Plane tmp(ow, in.height());
  for (int y = 0; y < in.height(); ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += kernel[static_cast<std::size_t>(i)] * in.at(x + i, y);
      tmp.at(x, y) = acc;
    }
  }
  Plane out(ow, oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += kernel[static_cast<std::size_t>(i)] * tmp.at(x, y + i);
      out.at(x, y) = acc;
    }
  }
  return out;
}

// 2x2 box downsample (odd trailing row/column dropped).
inline Plane half_scale(const Plane& in) {
  const int w = in.width() / 2;
  const int h = in.height() / 2;
  Plane out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.at(x, y) = 0.25 * (in.at(2 * x, 2 * y) + in.at(2 * x + 1, 2 * y) + in.at(2 * x, 2 * y + 1) +
                             in.at(2 * x + 1, 2 * y + 1));
    }
  }
  return out;
}

}  // namespace controlcol
