#pragma once

// Clip manifests, PNG frame I/O and resampling.

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "controlcol/color.hpp"
#include "controlcol/error.hpp"

namespace controlcol {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Positive rational frames-per-second.
struct Fps {
  std::int64_t num = 25;
  std::int64_t den = 1;

  double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Fps&, const Fps&) = default;
};

inline Fps make_fps(std::int64_t num, std::int64_t den = 1) {
  if (num <= 0 || den <= 0) throw InvalidArgument("fps must be positive");
  const auto g = std::gcd(num, den);
  return {num / g, den / g};
}

inline json fps_to_json(const Fps& f) {
  if (f.den == 1) return f.num;
  return std::to_string(f.num) + "/" + std::to_string(f.den);
}

inline Fps fps_from_json(const json& j) {
  if (j.is_number_integer()) return make_fps(j.get<std::int64_t>());
  if (j.is_number()) {
    const double v = j.get<double>();
    if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument("fps must be positive");
    return make_fps(static_cast<std::int64_t>(std::llround(v * 1000000.0)), 1000000);
  }
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    const auto slash = s.find('/');
    try {
      if (slash == std::string::npos) return make_fps(std::stoll(s));
      return make_fps(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
    } catch (const std::logic_error&) {
      throw InvalidArgument("malformed fps '" + s + "'");
    }
  }
  throw InvalidArgument("fps must be a number or \"num/den\" string");
}

struct ClipManifest {
  std::string name;
  Fps fps;
  int width = 0;
  int height = 0;
  std::vector<std::string> frame_paths;
  std::optional<std::string> caption;
  // Opaque tag describing where the caption came from (e.g. an external
  // captioner); carried through, never regenerated.
  std::optional<std::string> caption_source;
  std::optional<std::vector<std::string>> ground_truth_paths;

  // Directory relative paths resolve against; not serialized.
  fs::path base_dir;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  void validate() const {
    if (frame_paths.empty()) throw InvalidArgument("manifest '" + name + "' has no frames");
    if (width < 1 || height < 1) throw InvalidArgument("manifest '" + name + "' has invalid dimensions");
    if (ground_truth_paths && ground_truth_paths->size() != frame_paths.size()) {
      throw InvalidArgument("manifest '" + name + "': ground_truth_paths length differs from frame_paths");
    }
  }
};

inline json to_json(const ClipManifest& m) {
  json j = {{"name", m.name},
            {"fps", fps_to_json(m.fps)},
            {"width", m.width},
            {"height", m.height},
            {"frame_paths", m.frame_paths}};
  j["caption"] = m.caption ? json(*m.caption) : json(nullptr);
  if (m.caption_source) j["caption_source"] = *m.caption_source;
  j["ground_truth_paths"] = m.ground_truth_paths ? json(*m.ground_truth_paths) : json(nullptr);
  return j;
}

inline ClipManifest manifest_from_json(const json& j, const fs::path& base_dir = {}) {
  static const char* kKnown[] = {"name",        "fps",           "width",          "height",
                                 "frame_paths", "caption",       "caption_source", "ground_truth_paths"};
  if (!j.is_object()) throw InvalidArgument("manifest must be a JSON object");
  for (const auto& item : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), item.key()) == std::end(kKnown)) {
      log::warn("ignoring unknown manifest key '" + item.key() + "'");
    }
  }
  ClipManifest m;
  try {
    m.name = j.value("name", std::string{});
    m.fps = fps_from_json(j.at("fps"));
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.frame_paths = j.at("frame_paths").get<std::vector<std::string>>();
    if (j.contains("caption") && !j["caption"].is_null()) m.caption = j["caption"].get<std::string>();
    if (j.contains("caption_source") && !j["caption_source"].is_null()) {
      m.caption_source = j["caption_source"].get<std::string>();
    }
    if (j.contains("ground_truth_paths") && !j["ground_truth_paths"].is_null()) {
      m.ground_truth_paths = j["ground_truth_paths"].get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed manifest: ") + e.what());
  }
  m.base_dir = base_dir;
  m.validate();
  return m;
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DecodeError(path.string(), std::string("invalid JSON (") + e.what() + ")");
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open file for writing");
  out << text;
  if (!out) throw IoError(path.string(), "write failed");
}

inline void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline ClipManifest read_manifest(const fs::path& path) {
  return manifest_from_json(read_json_file(path), path.parent_path());
}

inline void write_manifest(const fs::path& path, const ClipManifest& m) { write_json_file(path, to_json(m)); }

// ---------------------------------------------------------------------------
// PNG

namespace detail {

inline Frame frame_from_rgb(const png_image& image, const std::vector<std::uint8_t>& buffer) {
  std::vector<Pixel> pixels(static_cast<std::size_t>(image.width) * image.height);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = {buffer[3 * i], buffer[3 * i + 1], buffer[3 * i + 2]};
  }
  return Frame(static_cast<int>(image.width), static_cast<int>(image.height), std::move(pixels));
}

inline std::vector<std::uint8_t> rgb_bytes(const Frame& f) {
  std::vector<std::uint8_t> buffer;
  buffer.reserve(f.size() * 3);
  for (const Pixel& p : f.pixels()) {
    buffer.push_back(p.r);
    buffer.push_back(p.g);
    buffer.push_back(p.b);
  }
  return buffer;
}

inline png_image rgb_image(const Frame& f) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(f.width());
  image.height = static_cast<png_uint_32>(f.height());
  image.format = PNG_FORMAT_RGB;
  return image;
}

}  // namespace detail

inline Frame read_png(const fs::path& path) {
  if (!fs::exists(path)) throw IoError(path.string(), "missing file");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DecodeError(path.string(), std::string("cannot decode PNG (") + image.message + ")");
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError(path.string(), "cannot decode PNG (" + msg + ")");
  }
  return detail::frame_from_rgb(image, buffer);
}

inline Frame decode_png(std::span<const std::uint8_t> bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DecodeError("<memory>", std::string("cannot decode PNG (") + image.message + ")");
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError("<memory>", "cannot decode PNG (" + msg + ")");
  }
  return detail::frame_from_rgb(image, buffer);
}

inline std::vector<std::uint8_t> encode_png(const Frame& f) {
  png_image image = detail::rgb_image(f);
  const auto rgb = detail::rgb_bytes(f);
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, rgb.data(), 0, nullptr)) {
    throw Error(std::string("PNG encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw Error(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline void write_png(const fs::path& path, const Frame& f) {
  const auto bytes = encode_png(f);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open file for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string(), "write failed");
}

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Clips

struct Clip {
  std::vector<Frame> frames;
  Fps fps;
  std::optional<std::string> caption;
  std::optional<std::string> caption_source;

  int width() const { return frames.at(0).width(); }
  int height() const { return frames.at(0).height(); }
  std::size_t size() const noexcept { return frames.size(); }

  void validate() const {
    if (frames.empty()) throw InvalidArgument("clip has no frames");
    for (const Frame& f : frames) {
      if (!f.same_shape(frames.front())) throw DimensionMismatch("clip frames differ in size");
    }
  }
};

inline std::string frame_filename(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06zu.png", index);
  return buf;
}

namespace detail {

inline std::vector<Frame> load_frames(const ClipManifest& m, const std::vector<std::string>& paths) {
  std::vector<Frame> frames;
  frames.reserve(paths.size());
  for (const auto& p : paths) {
    const fs::path full = m.resolve(p);
    Frame f = read_png(full);
    if (f.width() != m.width || f.height() != m.height) {
      throw DimensionMismatch("dimension mismatch (" + std::to_string(f.width()) + "x" + std::to_string(f.height()) +
                              ", manifest says " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                              "): " + full.string());
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace detail

inline Clip load_clip(const ClipManifest& m) {
  m.validate();
  Clip c{detail::load_frames(m, m.frame_paths), m.fps, m.caption, m.caption_source};
  return c;
}

inline std::optional<Clip> load_ground_truth(const ClipManifest& m) {
  if (!m.ground_truth_paths) return std::nullopt;
  return Clip{detail::load_frames(m, *m.ground_truth_paths), m.fps, m.caption, m.caption_source};
}

// Writes frame_000000.png ... and clip.json into `dir`. Stale frame files
// from an earlier, longer clip are removed so the directory always matches
// the manifest.
inline ClipManifest save_clip(const Clip& c, const fs::path& dir, const std::string& name = {}) {
  c.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create directory");
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto fname = entry.path().filename().string();
    if (fname.rfind("frame_", 0) == 0 && entry.path().extension() == ".png") fs::remove(entry.path());
  }
  ClipManifest m;
  m.name = name.empty() ? dir.filename().string() : name;
  m.fps = c.fps;
  m.width = c.width();
  m.height = c.height();
  m.caption = c.caption;
  m.caption_source = c.caption_source;
  m.base_dir = dir;
  for (std::size_t i = 0; i < c.frames.size(); ++i) {
    const auto fname = frame_filename(i);
    write_png(dir / fname, c.frames[i]);
    m.frame_paths.push_back(fname);
  }
  write_manifest(dir / "clip.json", m);
  return m;
}

// ---------------------------------------------------------------------------
// Resampling

namespace detail {

// Per-axis resampling weights: destination sample -> list of (source index,
// weight). Area averaging when shrinking, bilinear (pixel-center aligned)
// when growing.
struct Tap {
  int index;
  double weight;
};

inline std::vector<std::vector<Tap>> axis_taps(int src, int dst) {
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int d = 0; d < dst; ++d) {
    auto& t = taps[static_cast<std::size_t>(d)];
    if (src == dst) {
      t.push_back({d, 1.0});
    } else if (dst < src) {
      const double lo = d * scale;
      const double hi = (d + 1) * scale;
      for (int s = static_cast<int>(std::floor(lo)); s < static_cast<int>(std::ceil(hi)) && s < src; ++s) {
        const double cover = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
        if (cover > 0.0) t.push_back({s, cover / scale});
      }
    } else {
      const double pos = std::clamp((d + 0.5) * scale - 0.5, 0.0, static_cast<double>(src - 1));
      const int i0 = static_cast<int>(std::floor(pos));
      const int i1 = std::min(i0 + 1, src - 1);
      const double frac = pos - i0;
      t.push_back({i0, 1.0 - frac});
      if (i1 != i0 && frac > 0.0) t.push_back({i1, frac});
    }
  }
  return taps;
}

}  // namespace detail

inline Frame resize(const Frame& f, int w, int h) {
  if (w < 1 || h < 1) throw InvalidArgument("resize target must be at least 1x1");
  if (w == f.width() && h == f.height()) return f;
  const auto xt = detail::axis_taps(f.width(), w);
  const auto yt = detail::axis_taps(f.height(), h);

  // Horizontal pass into real-valued rows, then vertical pass; quantize once.
  std::vector<std::array<double, 3>> tmp(static_cast<std::size_t>(w) * f.height());
  for (int y = 0; y < f.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      std::array<double, 3> acc{};
      for (const auto& tap : xt[static_cast<std::size_t>(x)]) {
        const Pixel& p = f.at(tap.index, y);
        acc[0] += tap.weight * p.r;
        acc[1] += tap.weight * p.g;
        acc[2] += tap.weight * p.b;
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  Frame out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::array<double, 3> acc{};
      for (const auto& tap : yt[static_cast<std::size_t>(y)]) {
        const auto& v = tmp[static_cast<std::size_t>(tap.index) * w + x];
        for (int c = 0; c < 3; ++c) acc[c] += tap.weight * v[c];
      }
      // Weights sum to one only up to rounding; snap tiny excursions so
      // constant inputs stay constant.
      for (double& v : acc) v = std::round(v * 1e9) / 1e9;
      out.at(x, y) = {quantize(acc[0]), quantize(acc[1]), quantize(acc[2])};
    }
  }
  return out;
}

}  // namespace controlcol
