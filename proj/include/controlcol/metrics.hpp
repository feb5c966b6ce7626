#pragma once

// Evaluation metrics: PSNR, SSIM, Fréchet distance with pluggable features
// (FID over frame features, FVD over clip features), toy feature extractors
// and survey tallying.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "controlcol/color.hpp"
#include "controlcol/error.hpp"
#include "controlcol/frame_io.hpp"
#include "controlcol/linalg.hpp"
#include "controlcol/plane.hpp"

namespace controlcol {

// ---------------------------------------------------------------------------
// PSNR / SSIM

inline void require_same_shape(const Frame& a, const Frame& b) {
  if (!a.same_shape(b)) {
    throw DimensionMismatch("frame sizes differ: " + std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                            " vs " + std::to_string(b.width()) + "x" + std::to_string(b.height()));
  }
}

// 10 log10(255^2 / MSE) over all three channels; +infinity when identical.
inline double psnr(const Frame& a, const Frame& b) {
  require_same_shape(a, b);
  auto pa = a.pixels();
  auto pb = b.pixels();
  std::uint64_t sse = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const int dr = pa[i].r - pb[i].r;
    const int dg = pa[i].g - pb[i].g;
    const int db = pa[i].b - pb[i].b;
    sse += static_cast<std::uint64_t>(dr * dr + dg * dg + db * db);
  }
  if (sse == 0) return std::numeric_limits<double>::infinity();
  const double mse = static_cast<double>(sse) / (3.0 * static_cast<double>(pa.size()));
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

// Mean SSIM over every 11x11 window fully inside the frame (Gaussian
// weights, sigma 1.5), computed on Rec.601 luma.
inline double ssim(const Frame& a, const Frame& b) {
  require_same_shape(a, b);
  if (a.width() < kSsimWindow || a.height() < kSsimWindow) {
    throw InvalidArgument("ssim requires frames of at least 11x11");
  }
  const Plane x = luma_plane(a);
  const Plane y = luma_plane(b);
  Plane xx(x.width(), x.height()), yy(x.width(), x.height()), xy(x.width(), x.height());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx.values()[i] = x.values()[i] * x.values()[i];
    yy.values()[i] = y.values()[i] * y.values()[i];
    xy.values()[i] = x.values()[i] * y.values()[i];
  }
  const auto k = gaussian_kernel(kSsimWindow, kSsimSigma);
  const Plane mx = convolve_valid(x, k);
  const Plane my = convolve_valid(y, k);
  const Plane sxx = convolve_valid(xx, k);
  const Plane syy = convolve_valid(yy, k);
  const Plane sxy = convolve_valid(xy, k);
  const double c1 = (kSsimK1 * 255.0) * (kSsimK1 * 255.0);
  const double c2 = (kSsimK2 * 255.0) * (kSsimK2 * 255.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double ux = mx.values()[i];
    const double uy = my.values()[i];
    const double vx = sxx.values()[i] - ux * ux;
    const double vy = syy.values()[i] - uy * uy;
    const double cxy = sxy.values()[i] - ux * uy;
    sum += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
  }
  return sum / static_cast<double>(mx.size());
}

// ---------------------------------------------------------------------------
// Fréchet machinery

struct GaussianSummary {
  Vector mean;
  Matrix covariance;
};

enum class FeatureUnit { frame, clip };

inline std::string to_string(FeatureUnit u) { return u == FeatureUnit::frame ? "frame" : "clip"; }

inline FeatureUnit feature_unit_from_string(const std::string& s) {
  if (s == "frame") return FeatureUnit::frame;
  if (s == "clip") return FeatureUnit::clip;
  throw InvalidArgument("unknown feature unit '" + s + "'");
}

struct FeatureSet {
  std::vector<std::vector<double>> vectors;
  std::string extractor_id;
  FeatureUnit unit = FeatureUnit::frame;

  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }

  void validate() const {
    if (vectors.empty()) throw InvalidArgument("feature set is empty");
    for (const auto& v : vectors) {
      if (v.size() != dim()) throw DimensionMismatch("feature vectors differ in dimension");
    }
    if (dim() == 0) throw InvalidArgument("feature vectors are empty");
  }
};

// Empirical Gaussian with kCovarianceEpsilon on the diagonal. A single
// vector yields a zero (then regularized) covariance.
inline GaussianSummary summarize(const FeatureSet& fs) {
  fs.validate();
  auto m = sample_moments(fs.vectors);
  m.covariance.diagonal().array() += kCovarianceEpsilon;
  return {std::move(m.mean), std::move(m.covariance)};
}

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}); rounding noise below zero
// is clamped.
inline double frechet_distance(const GaussianSummary& g1, const GaussianSummary& g2) {
  if (g1.mean.size() != g2.mean.size() || g1.covariance.rows() != g1.mean.size() ||
      g2.covariance.rows() != g2.mean.size()) {
    throw DimensionMismatch("Gaussian summaries differ in dimension");
  }
  const double mean_term = (g1.mean - g2.mean).squaredNorm();
  const double trace = g1.covariance.trace() + g2.covariance.trace() -
                       2.0 * trace_sqrt_product(g1.covariance, g2.covariance);
  return std::max(mean_term + trace, 0.0);
}

namespace detail {

inline void check_pair(const FeatureSet& a, const FeatureSet& b, FeatureUnit unit, std::size_t min_vectors) {
  a.validate();
  b.validate();
  if (a.unit != unit || b.unit != unit) {
    throw InvalidArgument("expected " + to_string(unit) + "-unit feature sets");
  }
  if (a.extractor_id != b.extractor_id) {
    throw InvalidArgument("feature extractors differ: '" + a.extractor_id + "' vs '" + b.extractor_id + "'");
  }
  if (a.dim() != b.dim()) throw DimensionMismatch("feature dimensions differ");
  if (a.vectors.size() < min_vectors || b.vectors.size() < min_vectors) {
    throw InvalidArgument("insufficient samples: need at least " + std::to_string(min_vectors) + " vectors per set");
  }
}

}  // namespace detail

inline double fid(const FeatureSet& real, const FeatureSet& generated) {
  detail::check_pair(real, generated, FeatureUnit::frame, 2);
  return frechet_distance(summarize(real), summarize(generated));
}

// Clip-level sets may hold a single unit (one window per clip); its Gaussian
// is then a point mass plus the diagonal loading.
inline double fvd(const FeatureSet& real_clips, const FeatureSet& generated_clips) {
  detail::check_pair(real_clips, generated_clips, FeatureUnit::clip, 1);
  return frechet_distance(summarize(real_clips), summarize(generated_clips));
}

// ---------------------------------------------------------------------------
// Toy extractors

inline const std::string kToyFrameExtractor = "toy-lab-grid-v1";
inline const std::string kToyClipExtractor = "toy-lab-grid-temporal-v1";
inline constexpr int kToyGrid = 4;
inline constexpr int kToyFrameDim = kToyGrid * kToyGrid * 3;
inline constexpr int kToyClipDim = 2 * kToyFrameDim;

// 4x4 grid, row-major cells, each contributing mean (L, a, b). Cell (i, j)
// covers rows [i*h/4, (i+1)*h/4) and columns [j*w/4, (j+1)*w/4).
inline std::vector<double> toy_frame_features(const Frame& f) {
  std::vector<double> out;
  out.reserve(kToyFrameDim);
  for (int gy = 0; gy < kToyGrid; ++gy) {
    for (int gx = 0; gx < kToyGrid; ++gx) {
      const int y0 = gy * f.height() / kToyGrid, y1 = (gy + 1) * f.height() / kToyGrid;
      const int x0 = gx * f.width() / kToyGrid, x1 = (gx + 1) * f.width() / kToyGrid;
      double sl = 0.0, sa = 0.0, sb = 0.0;
      int n = 0;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const LabPixel lab = rgb_to_lab(f.at(x, y));
          sl += lab.L;
          sa += lab.a;
          sb += lab.b;
          ++n;
        }
      }
      const double d = n > 0 ? static_cast<double>(n) : 1.0;
      out.push_back(sl / d);
      out.push_back(sa / d);
      out.push_back(sb / d);
    }
  }
  return out;
}

// (mean over t of frame features, mean over t of |F_t - F_{t-1}|).
inline std::vector<double> toy_clip_features(std::span<const Frame> frames) {
  if (frames.size() < 2) throw InvalidArgument("toy_clip_features needs at least 2 frames");
  std::vector<double> out(kToyClipDim, 0.0);
  std::vector<double> prev;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto f = toy_frame_features(frames[t]);
    for (int i = 0; i < kToyFrameDim; ++i) out[static_cast<std::size_t>(i)] += f[static_cast<std::size_t>(i)];
    if (t > 0) {
      for (int i = 0; i < kToyFrameDim; ++i) {
        out[static_cast<std::size_t>(kToyFrameDim + i)] += std::abs(f[static_cast<std::size_t>(i)] - prev[static_cast<std::size_t>(i)]);
      }
    }
    prev = f;
  }
  const double n = static_cast<double>(frames.size());
  for (int i = 0; i < kToyFrameDim; ++i) out[static_cast<std::size_t>(i)] /= n;
  for (int i = 0; i < kToyFrameDim; ++i) out[static_cast<std::size_t>(kToyFrameDim + i)] /= (n - 1.0);
  return out;
}

inline std::vector<double> toy_clip_features(const Clip& c) { return toy_clip_features(c.frames); }

inline FeatureSet frame_feature_set(std::span<const Frame> frames) {
  FeatureSet fs{{}, kToyFrameExtractor, FeatureUnit::frame};
  for (const Frame& f : frames) fs.vectors.push_back(toy_frame_features(f));
  return fs;
}

inline constexpr std::size_t kFvdWindow = 16;

// Non-overlapping windows of `window` frames; a trailing short window is
// dropped. A clip shorter than one window becomes a single window.
inline FeatureSet clip_feature_set(std::span<const Frame> frames, std::size_t window = kFvdWindow) {
  FeatureSet fs{{}, kToyClipExtractor, FeatureUnit::clip};
  if (frames.size() < window) {
    fs.vectors.push_back(toy_clip_features(frames));
    return fs;
  }
  for (std::size_t s = 0; s + window <= frames.size(); s += window) {
    fs.vectors.push_back(toy_clip_features(frames.subspan(s, window)));
  }
  return fs;
}

// ---------------------------------------------------------------------------
// Feature files: "ccol-features v1 <count> <dim> <unit> <extractor_id>"
// followed by one whitespace-separated vector per line.

inline std::string format_decimal(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string serialize_features(const FeatureSet& fs) {
  fs.validate();
  if (fs.extractor_id.empty() || fs.extractor_id.find_first_of(" \t\n") != std::string::npos) {
    throw InvalidArgument("extractor id must be a non-empty token");
  }
  std::ostringstream os;
  os << "ccol-features v1 " << fs.vectors.size() << ' ' << fs.dim() << ' ' << to_string(fs.unit) << ' '
     << fs.extractor_id << '\n';
  for (const auto& v : fs.vectors) {
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << format_decimal(v[i]);
    os << '\n';
  }
  return os.str();
}

inline FeatureSet parse_features(const std::string& text, const std::string& origin = "<features>") {
  std::istringstream in(text);
  std::string magic, version, unit;
  std::size_t count = 0, dim = 0;
  FeatureSet fs;
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  if (!(hs >> magic >> version >> count >> dim >> unit >> fs.extractor_id) || magic != "ccol-features" ||
      version != "v1") {
    throw DecodeError(origin, "bad feature file header");
  }
  fs.unit = feature_unit_from_string(unit);
  std::string line;
  while (fs.vectors.size() < count && std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof()) throw DecodeError(origin, "non-numeric value in feature vector");
    if (v.size() != dim) throw DecodeError(origin, "feature vector has " + std::to_string(v.size()) + " values, header says " + std::to_string(dim));
    fs.vectors.push_back(std::move(v));
  }
  if (fs.vectors.size() != count) throw DecodeError(origin, "feature file holds fewer vectors than declared");
  return fs;
}

inline FeatureSet read_features(const fs::path& p) {
  const auto bytes = read_file_bytes(p);
  return parse_features(std::string(bytes.begin(), bytes.end()), p.string());
}

inline void write_features(const fs::path& p, const FeatureSet& fs) { write_text_file(p, serialize_features(fs)); }

// ---------------------------------------------------------------------------
// Survey tallies

struct Vote {
  std::string question_id;
  std::string participant_id;
  std::string option;
};

struct SurveyTally {
  std::string question_id;
  std::vector<std::string> options;  // order of first appearance
  std::vector<std::size_t> counts;
  std::size_t participant_count = 0;
  std::size_t max_choices = 0;  // most votes cast by one participant

  std::size_t total_votes() const {
    std::size_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  // Count divided by the number of options.
  std::vector<double> mos() const {
    std::vector<double> out;
    for (auto c : counts) out.push_back(options.empty() ? 0.0 : static_cast<double>(c) / static_cast<double>(options.size()));
    return out;
  }
  // Share of all votes cast on the question.
  std::vector<double> shares() const {
    std::vector<double> out;
    const double total = static_cast<double>(total_votes());
    for (auto c : counts) out.push_back(total > 0.0 ? static_cast<double>(c) / total : 0.0);
    return out;
  }
  std::size_t count_of(const std::string& option) const {
    for (std::size_t i = 0; i < options.size(); ++i)
      if (options[i] == option) return counts[i];
    return 0;
  }
};

// Tallies votes per question. A participant may cast several votes on a
// question (ranking-style questions) but never two for the same option.
// `known_options` (optional, per question) fixes the option list so options
// nobody chose still appear with a zero count.
inline std::vector<SurveyTally> mos_tally(std::span<const Vote> votes,
                                          const std::map<std::string, std::vector<std::string>>& known_options = {}) {
  std::vector<SurveyTally> tallies;
  std::map<std::string, std::size_t> by_question;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  std::map<std::pair<std::string, std::string>, std::size_t> per_participant;

  auto tally_for = [&](const std::string& q) -> SurveyTally& {
    auto it = by_question.find(q);
    if (it == by_question.end()) {
      SurveyTally t;
      t.question_id = q;
      if (auto k = known_options.find(q); k != known_options.end()) {
        t.options = k->second;
        t.counts.assign(t.options.size(), 0);
      }
      it = by_question.emplace(q, tallies.size()).first;
      tallies.push_back(std::move(t));
    }
    return tallies[it->second];
  };
  for (const auto& [q, opts] : known_options) tally_for(q);

  for (const Vote& v : votes) {
    if (!seen.emplace(v.question_id, v.participant_id, v.option).second) {
      throw InvalidArgument("duplicate vote: participant '" + v.participant_id + "' chose '" + v.option +
                            "' twice on question '" + v.question_id + "'");
    }
    SurveyTally& t = tally_for(v.question_id);
    auto pos = std::find(t.options.begin(), t.options.end(), v.option);
    if (pos == t.options.end()) {
      if (known_options.count(v.question_id)) {
        throw InvalidArgument("unknown option '" + v.option + "' on question '" + v.question_id + "'");
      }
      t.options.push_back(v.option);
      t.counts.push_back(0);
      pos = t.options.end() - 1;
    }
    ++t.counts[static_cast<std::size_t>(pos - t.options.begin())];
    auto& n = per_participant[{v.question_id, v.participant_id}];
    if (n++ == 0) ++t.participant_count;
    t.max_choices = std::max(t.max_choices, n);
  }
  return tallies;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

// CSV with header `question_id,participant_id,option`.
inline std::vector<Vote> parse_votes_csv(const std::string& text, const std::string& origin = "<votes>") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || detail::split_csv_line(line) != std::vector<std::string>{"question_id", "participant_id", "option"}) {
    throw DecodeError(origin, "votes CSV must start with header question_id,participant_id,option");
  }
  std::vector<Vote> votes;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != 3) throw DecodeError(origin, "line " + std::to_string(lineno) + " does not have 3 fields");
    votes.push_back({cells[0], cells[1], cells[2]});
  }
  return votes;
}

inline json to_json(const SurveyTally& t) {
  json counts = json::object();
  json mos = json::object();
  json shares = json::object();
  const auto m = t.mos();
  const auto s = t.shares();
  for (std::size_t i = 0; i < t.options.size(); ++i) {
    counts[t.options[i]] = t.counts[i];
    mos[t.options[i]] = m[i];
    shares[t.options[i]] = s[i];
  }
  return {{"question_id", t.question_id}, {"options", t.options},       {"counts", counts},
          {"mos", mos},                   {"shares", shares},           {"participant_count", t.participant_count},
          {"total_votes", t.total_votes()}, {"max_choices_per_participant", t.max_choices}};
}

inline std::string format_tally_table(std::span<const SurveyTally> tallies) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "question" << std::setw(20) << "option" << std::right << std::setw(8) << "count"
     << std::setw(10) << "mos" << std::setw(9) << "share" << '\n';
  for (const auto& t : tallies) {
    const auto m = t.mos();
    const auto s = t.shares();
    for (std::size_t i = 0; i < t.options.size(); ++i) {
      os << std::left << std::setw(14) << t.question_id << std::setw(20) << t.options[i] << std::right << std::setw(8)
         << t.counts[i] << std::setw(10) << std::fixed << std::setprecision(2) << m[i] << std::setw(8)
         << std::setprecision(1) << 100.0 * s[i] << "%\n";
    }
    os << std::left << std::setw(14) << t.question_id << "participants=" << t.participant_count
       << " votes=" << t.total_votes() << '\n';
  }
  return os.str();
}

}  // namespace controlcol
