#pragma once

// Color-space conversions, desaturation and the luminance/chroma split used
// throughout the pipeline. sRGB is 8-bit gamma encoded; Lab is CIE L*a*b*
// relative to D65 with the 2 degree observer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "controlcol/error.hpp"

namespace controlcol {

struct Pixel {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  constexpr bool is_gray() const noexcept { return r == g && g == b; }
  friend constexpr bool operator==(const Pixel&, const Pixel&) = default;
};

struct LabPixel {
  double L = 0.0;
  double a = 0.0;
  double b = 0.0;
};

// Result of lab_to_rgb: the nearest representable pixel plus whether any
// channel had to be clamped into [0,255].
struct RgbConversion {
  Pixel pixel;
  bool clamped = false;
};

// Row-major 8-bit sRGB raster.
class Frame {
 public:
  Frame() = default;
  Frame(int width, int height, Pixel fill = {})
      : width_(checked_dim(width)), height_(checked_dim(height)),
        pixels_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {}
  Frame(int width, int height, std::vector<Pixel> pixels)
      : width_(checked_dim(width)), height_(checked_dim(height)), pixels_(std::move(pixels)) {
    if (pixels_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
      throw DimensionMismatch("frame pixel count does not match width*height");
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return pixels_.empty(); }
  std::size_t size() const noexcept { return pixels_.size(); }

  Pixel& at(int x, int y) { return pixels_[index(x, y)]; }
  const Pixel& at(int x, int y) const { return pixels_[index(x, y)]; }

  std::span<Pixel> pixels() noexcept { return pixels_; }
  std::span<const Pixel> pixels() const noexcept { return pixels_; }

  bool same_shape(const Frame& o) const noexcept { return width_ == o.width_ && height_ == o.height_; }
  bool is_grayscale() const noexcept {
    return std::all_of(pixels_.begin(), pixels_.end(), [](const Pixel& p) { return p.is_gray(); });
  }

  friend bool operator==(const Frame&, const Frame&) = default;

 private:
  static int checked_dim(int v) {
    if (v < 1) throw InvalidArgument("frame dimensions must be positive");
    return v;
  }
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<Pixel> pixels_;
};

namespace detail {

// IEC 61966-2-1 linear sRGB -> XYZ (D65).
inline constexpr double kRgbToXyz[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};
// Exact inverse of the forward matrix (the published 7-digit inverse is off
// by ~1e-5 and breaks round trips at the gamut edge).
struct Mat3 {
  double m[3][3];
};
inline constexpr Mat3 invert3(const double (&a)[3][3]) {
  const double c00 = a[1][1] * a[2][2] - a[1][2] * a[2][1];
  const double c01 = a[1][2] * a[2][0] - a[1][0] * a[2][2];
  const double c02 = a[1][0] * a[2][1] - a[1][1] * a[2][0];
  const double det = a[0][0] * c00 + a[0][1] * c01 + a[0][2] * c02;
  return {{{c00 / det, (a[0][2] * a[2][1] - a[0][1] * a[2][2]) / det, (a[0][1] * a[1][2] - a[0][2] * a[1][1]) / det},
           {c01 / det, (a[0][0] * a[2][2] - a[0][2] * a[2][0]) / det, (a[0][2] * a[1][0] - a[0][0] * a[1][2]) / det},
           {c02 / det, (a[0][1] * a[2][0] - a[0][0] * a[2][1]) / det, (a[0][0] * a[1][1] - a[0][1] * a[1][0]) / det}}};
}
inline constexpr Mat3 kXyzToRgbM = invert3(kRgbToXyz);
inline constexpr const double (&kXyzToRgb)[3][3] = kXyzToRgbM.m;
// White point as the image of linear (1,1,1), so sRGB white lands on a=b=0.
inline constexpr double kWhite[3] = {
    kRgbToXyz[0][0] + kRgbToXyz[0][1] + kRgbToXyz[0][2],
    kRgbToXyz[1][0] + kRgbToXyz[1][1] + kRgbToXyz[1][2],
    kRgbToXyz[2][0] + kRgbToXyz[2][1] + kRgbToXyz[2][2],
};

inline constexpr double kLabEpsilon = 216.0 / 24389.0;
inline constexpr double kLabKappa = 24389.0 / 27.0;

inline double lab_f(double t) {
  return t > kLabEpsilon ? std::cbrt(t) : (kLabKappa * t + 16.0) / 116.0;
}
inline double lab_f_inv(double f) {
  const double f3 = f * f * f;
  return f3 > kLabEpsilon ? f3 : (116.0 * f - 16.0) / kLabKappa;
}

inline const std::array<double, 256>& linear_table() {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    for (int c = 0; c < 256; ++c) {
      const double v = c / 255.0;
      t[static_cast<std::size_t>(c)] = v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
    }
    return t;
  }();
  return table;
}

}  // namespace detail

// Round-half-up quantization used for every real -> 8-bit conversion.
inline std::uint8_t quantize(double v) noexcept {
  const double r = std::floor(v + 0.5);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

inline double srgb_to_linear(std::uint8_t c) noexcept { return detail::linear_table()[c]; }

// Inverse transfer, returning the gamma-encoded value on the [0,255] scale
// without quantization.
inline double linear_to_srgb(double v) noexcept {
  const double e = v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
  return 255.0 * e;
}

inline LabPixel rgb_to_lab(Pixel p) noexcept {
  const double lin[3] = {srgb_to_linear(p.r), srgb_to_linear(p.g), srgb_to_linear(p.b)};
  double f[3];
  for (int i = 0; i < 3; ++i) {
    const double xyz = detail::kRgbToXyz[i][0] * lin[0] + detail::kRgbToXyz[i][1] * lin[1] +
                       detail::kRgbToXyz[i][2] * lin[2];
    f[i] = detail::lab_f(xyz / detail::kWhite[i]);
  }
  return {116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])};
}

// Unquantized, unclamped gamma-encoded RGB on the [0,255] scale.
inline std::array<double, 3> lab_to_rgb_real(const LabPixel& q) noexcept {
  const double fy = (q.L + 16.0) / 116.0;
  const double f[3] = {fy + q.a / 500.0, fy, fy - q.b / 200.0};
  double xyz[3];
  for (int i = 0; i < 3; ++i) xyz[i] = detail::lab_f_inv(f[i]) * detail::kWhite[i];
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) {
    const double lin = detail::kXyzToRgb[i][0] * xyz[0] + detail::kXyzToRgb[i][1] * xyz[1] +
                       detail::kXyzToRgb[i][2] * xyz[2];
    // Negative linear light has no encoding; mirror the curve so clamping
    // below still reports it.
    out[static_cast<std::size_t>(i)] = lin < 0.0 ? -linear_to_srgb(-lin) : linear_to_srgb(lin);
  }
  return out;
}

inline RgbConversion lab_to_rgb(const LabPixel& q) noexcept {
  constexpr double kSlack = 1e-9;
  const auto rgb = lab_to_rgb_real(q);
  bool clamped = false;
  for (double v : rgb) clamped = clamped || v < -kSlack || v > 255.0 + kSlack;
  return {{quantize(rgb[0]), quantize(rgb[1]), quantize(rgb[2])}, clamped};
}

// Rec.601 luma with round-half-up, in exact integer arithmetic.
inline std::uint8_t luma(Pixel p) noexcept {
  return static_cast<std::uint8_t>((299 * p.r + 587 * p.g + 114 * p.b + 500) / 1000);
}

// Unrounded Rec.601 luma; exact for gray pixels.
inline double luma_real(Pixel p) noexcept { return (299.0 * p.r + 587.0 * p.g + 114.0 * p.b) / 1000.0; }

inline Frame desaturate(const Frame& f) {
  Frame out = f;
  for (Pixel& p : out.pixels()) {
    const std::uint8_t y = luma(p);
    p = {y, y, y};
  }
  return out;
}

// Returns the 8-bit pixel closest to `target` (real RGB, [0,255] scale)
// whose Rec.601 luma is exactly `y`. Adding a constant to all channels moves
// luma by the same constant and scaling the offset from gray keeps it fixed,
// so hue (channel differences) survives both corrections.
inline Pixel with_luma(std::array<double, 3> target, std::uint8_t y) noexcept {
  const double yd = y;
  const double shift = yd - (0.299 * target[0] + 0.587 * target[1] + 0.114 * target[2]);
  double t = 1.0;
  for (double& c : target) {
    c += shift;
    const double d = c - yd;
    if (d > 0.0 && c > 255.0) t = std::min(t, (255.0 - yd) / d);
    if (d < 0.0 && c < 0.0) t = std::min(t, yd / -d);
  }
  for (double& c : target) c = yd + t * (c - yd);

  auto weighted = [](int r, int g, int b) { return 299 * r + 587 * g + 114 * b; };
  const int lo = 1000 * y - 500;
  const int hi = 1000 * y + 500;
  // Shrink toward gray until the integer luma window is reachable; gray
  // itself always satisfies it.
  for (double shrink = 1.0; shrink > 0.0; shrink -= 0.125) {
    int ch[3];
    for (int i = 0; i < 3; ++i) {
      ch[i] = static_cast<int>(std::clamp(std::floor(yd + shrink * (target[static_cast<std::size_t>(i)] - yd) + 0.5), 0.0, 255.0));
    }
    // Nudge channels, heaviest weight first, into the luma window.
    for (int step = 0; step < 8; ++step) {
      const int w = weighted(ch[0], ch[1], ch[2]);
      if (w >= lo && w < hi) return {static_cast<std::uint8_t>(ch[0]), static_cast<std::uint8_t>(ch[1]), static_cast<std::uint8_t>(ch[2])};
      const int dir = w < lo ? 1 : -1;
      for (int i : {1, 0, 2}) {
        const int nv = ch[i] + dir;
        if (nv >= 0 && nv <= 255) {
          ch[i] = nv;
          break;
        }
      }
    }
  }
  return {y, y, y};
}

}  // namespace controlcol
