#pragma once

// Shared helpers for the test binaries: scratch directories, random frames
// and the synthetic talking-head clip.

#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "controlcol/color.hpp"
#include "controlcol/frame_io.hpp"

namespace testing_support {

namespace fs = std::filesystem;
using controlcol::Clip;
using controlcol::Frame;
using controlcol::Pixel;

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "controlcol-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) std::abort();
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& p) const { return path_ / p; }

 private:
  fs::path path_;
};

inline Frame random_frame(std::mt19937_64& rng, int w, int h) {
  std::uniform_int_distribution<int> d(0, 255);
  Frame f(w, h);
  for (auto& p : f.pixels()) {
    p = {static_cast<std::uint8_t>(d(rng)), static_cast<std::uint8_t>(d(rng)), static_cast<std::uint8_t>(d(rng))};
  }
  return f;
}

inline Frame gray_frame(int w, int h, std::uint8_t v) { return Frame(w, h, Pixel{v, v, v}); }

inline std::uint8_t clamp8(double v) { return controlcol::quantize(v); }

// Head-and-shoulders stand-in: dark blue wall, red shirt, skin-toned face
// drifting sideways with a mouth that opens and closes.
inline Frame speaker_frame(int t, int w = 64, int h = 64) {
  Frame f(w, h);
  const double cx = w * (0.5 + 0.12 * std::sin(t * 0.35));
  const double cy = h * 0.38;
  const double rx = w * 0.17, ry = h * 0.22;
  const double mouth = 0.15 + 0.12 * (0.5 + 0.5 * std::sin(t * 1.3));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // wall with a soft vertical gradient and fixed texture
      const double tex = 6.0 * std::sin(x * 0.9 + y * 0.4) * std::cos(y * 0.7);
      Pixel p{clamp8(35 + 0.2 * y + tex), clamp8(55 + 0.2 * y + tex), clamp8(120 + 0.3 * y + tex)};
      if (y > h * 0.68 && std::abs(x - cx) < w * 0.36) {
        const double fold = 10.0 * std::sin(x * 0.5 + t * 0.2);
        p = {clamp8(185 + fold), clamp8(55 + 0.3 * fold), clamp8(45 + 0.3 * fold)};
      }
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      if (dx * dx + dy * dy < 1.0) {
        const double shade = 18.0 * (dx * 0.6 - dy * 0.4);
        p = {clamp8(228 + shade), clamp8(188 + shade), clamp8(158 + shade)};
        const double mx = (x - cx) / (rx * 0.45), my = (y - (cy + ry * 0.45)) / (ry * mouth);
        if (mx * mx + my * my < 1.0) p = {110, 40, 45};
        const double ex = std::abs(x - cx) - rx * 0.4, ey = y - (cy - ry * 0.25);
        if (ex * ex + ey * ey < 4.0) p = {40, 30, 30};
      }
      f.at(x, y) = p;
    }
  }
  return f;
}

inline Clip speaker_clip(int frames = 24, int w = 64, int h = 64) {
  Clip c;
  for (int t = 0; t < frames; ++t) c.frames.push_back(speaker_frame(t, w, h));
  c.fps = controlcol::make_fps(25);
  c.caption = "a man wearing a red shirt in front of a blue wall";
  c.caption_source = "fixture";
  return c;
}

// Writes the colour clip and returns its manifest path.
inline fs::path write_speaker_fixture(const fs::path& dir, int frames = 24, int w = 64, int h = 64) {
  controlcol::save_clip(speaker_clip(frames, w, h), dir, "speaker");
  return dir / "clip.json";
}

}  // namespace testing_support
