#pragma once

// The two colorizer roles: text-guided candidate generation and
// exemplar-guided temporal propagation. Each has a built-in classical
// implementation and an external-process route speaking the file protocol:
//
//   work_dir/job.json                 BackendJob fields
//   work_dir/input/frame_%06d.png     grayscale inputs
//   work_dir/exemplar.png             propagator jobs only
//   work_dir/output/candidate_%02d.png  (generator) or
//   work_dir/output/frame_%06d.png      (propagator), written by the backend
//
// The backend is invoked as `<command...> <work_dir>/job.json` with
// work_dir as its working directory and must exit 0.

#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "controlcol/color.hpp"
#include "controlcol/error.hpp"
#include "controlcol/frame_io.hpp"
#include "controlcol/selection.hpp"
#include "controlcol/subprocess.hpp"

namespace controlcol {

// ---------------------------------------------------------------------------
// Deterministic randomness (identical streams on every platform)

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() noexcept { return splitmix64(state_++); }
  // Uniform in [lo, hi).
  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Caption-driven palette colorizer

enum class LumaBand { low, mid, high };

inline LumaBand band_of(std::uint8_t y) noexcept {
  return y < 85 ? LumaBand::low : y < 170 ? LumaBand::mid : LumaBand::high;
}

struct PaletteRule {
  double hue_deg = 0.0;
  double amplitude = 0.0;  // max channel offset from gray, 8-bit units
};

// Per-band colour assignment parsed from a caption.
struct PalettePlan {
  std::array<std::optional<PaletteRule>, 3> bands;  // indexed by LumaBand
  bool neutral = false;                             // empty caption: leave gray
};

inline constexpr double kPaletteAmplitude = 60.0;
inline constexpr double kSepiaHue = 30.0;
inline constexpr double kSepiaAmplitude = 14.0;

namespace detail {

struct HueWord {
  const char* word;
  double hue;
};

inline constexpr HueWord kHueWords[] = {
    {"red", 0.0},      {"crimson", 350.0}, {"orange", 30.0},  {"brown", 25.0},    {"yellow", 60.0},
    {"gold", 50.0},    {"green", 120.0},   {"olive", 75.0},   {"teal", 170.0},    {"cyan", 180.0},
    {"blue", 240.0},   {"navy", 230.0},    {"purple", 275.0}, {"violet", 275.0},  {"magenta", 300.0},
    {"pink", 330.0},
};

// Garment words colour the mid-luminance band; scenery words the two
// extreme bands.
inline constexpr const char* kMidRegionWords[] = {"top",    "shirt", "tshirt", "jacket", "sweater", "jumper",
                                                  "dress",  "blouse", "suit",  "coat",   "hoodie",  "tie",
                                                  "clothes", "clothing", "vest", "cardigan"};
inline constexpr const char* kExtremeRegionWords[] = {"background", "backdrop", "wall", "walls",
                                                      "curtain",    "curtains", "sky",  "room"};

inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isalpha(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

template <std::size_t N>
bool contains_word(const char* const (&words)[N], const std::string& w) {
  for (const char* c : words)
    if (w == c) return true;
  return false;
}

inline std::optional<double> hue_of(const std::string& w) {
  for (const auto& h : kHueWords)
    if (w == h.word) return h.hue;
  return std::nullopt;
}

// Zero-luma offset direction of a fully saturated hue, scaled so its
// largest channel magnitude is 1.
inline std::array<double, 3> hue_direction(double hue_deg) {
  double h = std::fmod(hue_deg, 360.0);
  if (h < 0.0) h += 360.0;
  const double hp = h / 60.0;
  const double x = 1.0 - std::abs(std::fmod(hp, 2.0) - 1.0);
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hp)) {
    case 0: rgb = {1.0, x, 0.0}; break;
    case 1: rgb = {x, 1.0, 0.0}; break;
    case 2: rgb = {0.0, 1.0, x}; break;
    case 3: rgb = {0.0, x, 1.0}; break;
    case 4: rgb = {x, 0.0, 1.0}; break;
    default: rgb = {1.0, 0.0, x}; break;
  }
  const double y = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
  double peak = 0.0;
  for (double& c : rgb) {
    c -= y;
    peak = std::max(peak, std::abs(c));
  }
  for (double& c : rgb) c /= peak;
  return rgb;
}

}  // namespace detail

// Rule table: a colour word followed within three tokens by a region word
// binds to that region's bands; an unbound colour word fills every band not
// otherwise assigned. A non-empty caption with no colour words yields a
// sepia wash; an empty caption leaves the frame gray.
inline PalettePlan plan_palette(const std::string& caption) {
  PalettePlan plan;
  const auto tokens = detail::tokenize(caption);
  if (tokens.empty()) {
    plan.neutral = true;
    return plan;
  }
  std::optional<double> global;
  bool any_colour = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto hue = detail::hue_of(tokens[i]);
    if (!hue) continue;
    any_colour = true;
    bool bound = false;
    for (std::size_t j = i + 1; j < tokens.size() && j <= i + 3; ++j) {
      if (detail::hue_of(tokens[j])) break;
      if (detail::contains_word(detail::kMidRegionWords, tokens[j])) {
        if (!plan.bands[1]) plan.bands[1] = PaletteRule{*hue, kPaletteAmplitude};
        bound = true;
        break;
      }
      if (detail::contains_word(detail::kExtremeRegionWords, tokens[j])) {
        if (!plan.bands[0]) plan.bands[0] = PaletteRule{*hue, kPaletteAmplitude};
        if (!plan.bands[2]) plan.bands[2] = PaletteRule{*hue, kPaletteAmplitude};
        bound = true;
        break;
      }
    }
    if (!bound && !global) global = *hue;
  }
  const PaletteRule fill = any_colour && global ? PaletteRule{*global, kPaletteAmplitude}
                                                : PaletteRule{kSepiaHue, kSepiaAmplitude};
  for (auto& b : plan.bands) {
    if (!b && (global || !any_colour)) b = fill;
  }
  return plan;
}

// Applies a plan to a grayscale frame; luma of every output pixel equals the
// input gray level exactly.
inline Frame apply_palette(const Frame& gray, const PalettePlan& plan) {
  if (plan.neutral) return desaturate(gray);
  std::array<std::optional<std::array<double, 3>>, 3> offsets;
  for (std::size_t b = 0; b < 3; ++b) {
    if (plan.bands[b]) {
      auto d = detail::hue_direction(plan.bands[b]->hue_deg);
      for (double& c : d) c *= plan.bands[b]->amplitude;
      offsets[b] = d;
    }
  }
  Frame out(gray.width(), gray.height());
  auto src = gray.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::uint8_t y = luma(src[i]);
    const auto& off = offsets[static_cast<std::size_t>(band_of(y))];
    if (!off) {
      dst[i] = {y, y, y};
      continue;
    }
    dst[i] = with_luma({y + (*off)[0], y + (*off)[1], y + (*off)[2]}, y);
  }
  return out;
}

inline const std::string kPaletteBackendId = "palette";

// Candidate k > 0 jitters every rule's hue by up to +/-25 degrees and its
// amplitude by a factor in [0.5, 1.5), drawn from a stream seeded by
// (seed, k). Candidate 0 is the unjittered plan.
inline CandidateSet palette_colorize(const Frame& gray, const std::string& caption, std::size_t n,
                                     std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("candidate count must be at least 1");
  const PalettePlan base = plan_palette(caption);
  CandidateSet set;
  set.source = kPaletteBackendId;
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint64_t cseed = splitmix64(seed ^ splitmix64(k));
    PalettePlan plan = base;
    if (k > 0) {
      SplitMix rng(cseed);
      for (auto& b : plan.bands) {
        const double dh = rng.uniform(-25.0, 25.0);
        const double da = rng.uniform(0.5, 1.5);
        if (b) {
          b->hue_deg += dh;
          b->amplitude *= da;
        }
      }
    }
    set.candidates.push_back(apply_palette(gray, plan));
    set.seeds.push_back(cseed);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Exemplar propagation

struct ChromaBucket {
  double a = 0.0;
  double b = 0.0;
  std::size_t count = 0;  // exemplar pixels that landed here (0 = filled)
};

struct ChromaLUT {
  std::array<ChromaBucket, 256> buckets{};

  // Largest Euclidean distance between any two bucket chroma values.
  double spread() const noexcept {
    double s = 0.0;
    for (const auto& p : buckets)
      for (const auto& q : buckets) s = std::max(s, std::hypot(p.a - q.a, p.b - q.b));
    return s;
  }
};

inline ChromaLUT build_chroma_lut(const Frame& exemplar) {
  ChromaLUT lut;
  for (const Pixel& p : exemplar.pixels()) {
    const LabPixel lab = rgb_to_lab(p);
    auto& bucket = lut.buckets[luma(p)];
    bucket.a += lab.a;
    bucket.b += lab.b;
    ++bucket.count;
  }
  for (auto& bucket : lut.buckets) {
    if (bucket.count) {
      bucket.a /= static_cast<double>(bucket.count);
      bucket.b /= static_cast<double>(bucket.count);
    }
  }
  // Nearest populated bucket; ties go to the darker one.
  const auto filled = lut.buckets;
  for (int i = 0; i < 256; ++i) {
    if (filled[static_cast<std::size_t>(i)].count) continue;
    for (int d = 1; d < 256; ++d) {
      const int lo = i - d;
      const int hi = i + d;
      const ChromaBucket* src = nullptr;
      if (lo >= 0 && filled[static_cast<std::size_t>(lo)].count) src = &filled[static_cast<std::size_t>(lo)];
      else if (hi < 256 && filled[static_cast<std::size_t>(hi)].count) src = &filled[static_cast<std::size_t>(hi)];
      if (src) {
        lut.buckets[static_cast<std::size_t>(i)].a = src->a;
        lut.buckets[static_cast<std::size_t>(i)].b = src->b;
        break;
      }
    }
  }
  return lut;
}

// Per-pixel (a, b) chroma of one frame.
struct ChromaField {
  int width = 0;
  int height = 0;
  std::vector<std::array<double, 2>> ab;
};

inline constexpr double kDefaultAlpha = 0.5;

// chroma_t = alpha * chroma_{t-1} + (1 - alpha) * lut(luma_t), chroma_0 = lut(luma_0).
inline std::vector<ChromaField> propagate_chroma(const Clip& gray_clip, const ChromaLUT& lut, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0,1]");
  gray_clip.validate();
  std::vector<ChromaField> out;
  out.reserve(gray_clip.size());
  for (std::size_t t = 0; t < gray_clip.size(); ++t) {
    const Frame& f = gray_clip.frames[t];
    ChromaField field{f.width(), f.height(), std::vector<std::array<double, 2>>(f.size())};
    auto px = f.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
      const auto& bucket = lut.buckets[luma(px[i])];
      if (t == 0) {
        field.ab[i] = {bucket.a, bucket.b};
      } else {
        const auto& prev = out.back().ab[i];
        field.ab[i] = {alpha * prev[0] + (1.0 - alpha) * bucket.a, alpha * prev[1] + (1.0 - alpha) * bucket.b};
      }
    }
    out.push_back(std::move(field));
  }
  return out;
}

// Recombines gray luminance with a chroma field; luma is preserved exactly.
inline Frame compose_chroma(const Frame& gray, const ChromaField& chroma) {
  Frame out(gray.width(), gray.height());
  auto src = gray.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::uint8_t y = luma(src[i]);
    const auto& ab = chroma.ab[i];
    if (ab[0] == 0.0 && ab[1] == 0.0) {
      dst[i] = {y, y, y};
      continue;
    }
    const LabPixel base = rgb_to_lab({y, y, y});
    dst[i] = with_luma(lab_to_rgb_real({base.L, ab[0], ab[1]}), y);
  }
  return out;
}

inline const std::string kLutPropagatorId = "lut";

inline Clip exemplar_propagate(const Clip& gray_clip, const Frame& exemplar, double alpha = kDefaultAlpha) {
  gray_clip.validate();
  if (!exemplar.same_shape(gray_clip.frames.front())) {
    throw DimensionMismatch("exemplar is " + std::to_string(exemplar.width()) + "x" +
                            std::to_string(exemplar.height()) + ", clip frames are " +
                            std::to_string(gray_clip.width()) + "x" + std::to_string(gray_clip.height()));
  }
  const auto lut = build_chroma_lut(exemplar);
  const auto fields = propagate_chroma(gray_clip, lut, alpha);
  Clip out{{}, gray_clip.fps, gray_clip.caption, gray_clip.caption_source};
  out.frames.reserve(gray_clip.size());
  for (std::size_t t = 0; t < gray_clip.size(); ++t) out.frames.push_back(compose_chroma(gray_clip.frames[t], fields[t]));
  return out;
}

// ---------------------------------------------------------------------------
// External backend protocol

enum class BackendRole { candidate_generator, propagator };

inline std::string to_string(BackendRole r) {
  return r == BackendRole::candidate_generator ? "candidate_generator" : "propagator";
}

inline BackendRole backend_role_from_string(const std::string& s) {
  if (s == "candidate_generator") return BackendRole::candidate_generator;
  if (s == "propagator") return BackendRole::propagator;
  throw InvalidArgument("unknown backend role '" + s + "'");
}

struct BackendJob {
  BackendRole role = BackendRole::candidate_generator;
  fs::path work_dir;
  std::vector<std::string> input_frames;  // relative to work_dir
  std::optional<std::string> caption;
  std::optional<std::string> exemplar_path;  // relative to work_dir
  std::size_t candidate_count = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (input_frames.empty()) throw InvalidArgument("backend job has no input frames");
    if (role == BackendRole::candidate_generator && !caption) {
      throw InvalidArgument("candidate_generator job requires a caption");
    }
    if (role == BackendRole::propagator && !exemplar_path) {
      throw InvalidArgument("propagator job requires exemplar_path");
    }
    if (candidate_count < 1) throw InvalidArgument("candidate_count must be at least 1");
  }
};

inline json to_json(const BackendJob& j) {
  return {{"role", to_string(j.role)},
          {"work_dir", j.work_dir.string()},
          {"input_frames", j.input_frames},
          {"caption", j.caption ? json(*j.caption) : json(nullptr)},
          {"exemplar_path", j.exemplar_path ? json(*j.exemplar_path) : json(nullptr)},
          {"candidate_count", j.candidate_count},
          {"seed", j.seed}};
}

inline BackendJob backend_job_from_json(const json& j) {
  BackendJob job;
  try {
    job.role = backend_role_from_string(j.at("role").get<std::string>());
    job.work_dir = j.at("work_dir").get<std::string>();
    job.input_frames = j.at("input_frames").get<std::vector<std::string>>();
    if (j.contains("caption") && !j["caption"].is_null()) job.caption = j["caption"].get<std::string>();
    if (j.contains("exemplar_path") && !j["exemplar_path"].is_null()) {
      job.exemplar_path = j["exemplar_path"].get<std::string>();
    }
    job.candidate_count = j.value("candidate_count", std::size_t{1});
    job.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed backend job: ") + e.what());
  }
  job.validate();
  return job;
}

struct BackendCommand {
  std::vector<std::string> argv;
  std::chrono::milliseconds timeout{std::chrono::seconds(600)};
};

inline std::string candidate_filename(std::size_t index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "candidate_%02zu.png", index);
  return buf;
}

namespace detail {

inline void reset_dir(const fs::path& dir) {
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create directory");
}

inline void launch_backend(const BackendJob& job, const BackendCommand& cmd) {
  if (cmd.argv.empty()) throw InvalidArgument("backend command is empty");
  const fs::path job_file = job.work_dir / "job.json";
  write_json_file(job_file, to_json(job));
  auto argv = cmd.argv;
  argv.push_back(job_file.string());
  ProcessOptions opts;
  opts.working_dir = job.work_dir;
  opts.timeout = cmd.timeout;
  const auto r = run_process(argv, opts);
  if (r.timed_out) {
    throw ProcessError("backend '" + cmd.argv.front() + "' timed out after " +
                       std::to_string(cmd.timeout.count()) + " ms");
  }
  if (r.exit_code != 0) {
    throw ProcessError("backend '" + cmd.argv.front() + "' exited with status " + std::to_string(r.exit_code));
  }
}

inline std::vector<Frame> collect_outputs(const fs::path& out_dir, const std::vector<std::string>& names, int w,
                                          int h) {
  std::vector<std::string> missing;
  for (const auto& n : names)
    if (!fs::exists(out_dir / n)) missing.push_back(n);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ProcessError("backend output missing " + std::to_string(missing.size()) + " of " +
                       std::to_string(names.size()) + " declared files: " + list);
  }
  std::vector<Frame> frames;
  for (const auto& n : names) {
    Frame f = read_png(out_dir / n);
    if (f.width() != w || f.height() != h) {
      throw DecodeError((out_dir / n).string(), "backend output has wrong dimensions");
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace detail

// Lays out work_dir, runs the generator on `gray` and reads back n candidates.
inline CandidateSet run_external_generator(const Frame& gray, const std::string& caption, std::size_t n,
                                           std::uint64_t seed, const fs::path& work_dir,
                                           const BackendCommand& cmd) {
  BackendJob job;
  job.role = BackendRole::candidate_generator;
  job.work_dir = fs::absolute(work_dir);
  job.caption = caption;
  job.candidate_count = n;
  job.seed = seed;
  job.input_frames = {"input/" + frame_filename(0)};
  job.validate();
  detail::reset_dir(job.work_dir / "input");
  detail::reset_dir(job.work_dir / "output");
  write_png(job.work_dir / job.input_frames[0], gray);
  detail::launch_backend(job, cmd);
  std::vector<std::string> names;
  for (std::size_t k = 0; k < n; ++k) names.push_back(candidate_filename(k));
  CandidateSet set;
  set.candidates = detail::collect_outputs(job.work_dir / "output", names, gray.width(), gray.height());
  set.source = "external:" + cmd.argv.front();
  for (std::size_t k = 0; k < n; ++k) set.seeds.push_back(splitmix64(seed ^ splitmix64(k)));
  return set;
}

inline Clip run_external_propagator(const Clip& gray_clip, const Frame& exemplar, const fs::path& work_dir,
                                    const BackendCommand& cmd) {
  gray_clip.validate();
  BackendJob job;
  job.role = BackendRole::propagator;
  job.work_dir = fs::absolute(work_dir);
  job.exemplar_path = "exemplar.png";
  for (std::size_t t = 0; t < gray_clip.size(); ++t) job.input_frames.push_back("input/" + frame_filename(t));
  job.validate();
  detail::reset_dir(job.work_dir / "input");
  detail::reset_dir(job.work_dir / "output");
  for (std::size_t t = 0; t < gray_clip.size(); ++t) write_png(job.work_dir / job.input_frames[t], gray_clip.frames[t]);
  write_png(job.work_dir / *job.exemplar_path, exemplar);
  detail::launch_backend(job, cmd);
  std::vector<std::string> names;
  for (std::size_t t = 0; t < gray_clip.size(); ++t) names.push_back(frame_filename(t));
  Clip out{detail::collect_outputs(job.work_dir / "output", names, gray_clip.width(), gray_clip.height()),
           gray_clip.fps, gray_clip.caption, gray_clip.caption_source};
  return out;
}

// Executes a protocol job with the built-in implementations; the body of the
// controlcol-backend executable.
inline void serve_builtin_job(const fs::path& job_file) {
  const BackendJob job = backend_job_from_json(read_json_file(job_file));
  const fs::path wd = job.work_dir.empty() ? job_file.parent_path() : job.work_dir;
  std::vector<Frame> inputs;
  for (const auto& p : job.input_frames) inputs.push_back(read_png(wd / p));
  const fs::path out = wd / "output";
  fs::create_directories(out);
  if (job.role == BackendRole::candidate_generator) {
    const auto set = palette_colorize(inputs.front(), *job.caption, job.candidate_count, job.seed);
    for (std::size_t k = 0; k < set.size(); ++k) write_png(out / candidate_filename(k), set.candidates[k]);
  } else {
    Clip clip{std::move(inputs), {}, job.caption, std::nullopt};
    const Clip result = exemplar_propagate(clip, read_png(wd / *job.exemplar_path));
    for (std::size_t t = 0; t < result.size(); ++t) write_png(out / frame_filename(t), result.frames[t]);
  }
}

}  // namespace controlcol
