#pragma once

// No-reference quality scoring: MSCN natural-scene statistics shared by the
// NIQE-style and BRISQUE-style scores, a face-region sharpness proxy, and an
// external-scorer protocol.

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "controlcol/color.hpp"
#include "controlcol/error.hpp"
#include "controlcol/frame_io.hpp"
#include "controlcol/linalg.hpp"
#include "controlcol/plane.hpp"
#include "controlcol/subprocess.hpp"

namespace controlcol {

enum class Polarity { lower_is_better, higher_is_better };

inline std::string to_string(Polarity p) {
  return p == Polarity::lower_is_better ? "lower-is-better" : "higher-is-better";
}

inline Polarity polarity_from_string(const std::string& s) {
  if (s == "lower-is-better" || s == "lower") return Polarity::lower_is_better;
  if (s == "higher-is-better" || s == "higher") return Polarity::higher_is_better;
  throw InvalidArgument("unknown polarity '" + s + "'");
}

struct QualityScore {
  double value = 0.0;
  Polarity polarity = Polarity::lower_is_better;
  std::string scorer_id;
};

// ---------------------------------------------------------------------------
// MSCN front end

inline constexpr int kMscnWindow = 7;
inline constexpr double kMscnSigma = 7.0 / 6.0;
inline constexpr double kMscnC = 1.0;

struct LocalStatistics {
  Plane mean;
  Plane deviation;
};

// Gaussian-weighted local mean and standard deviation (7x7, sigma 7/6,
// replicated borders). The plane is centered on its global mean first so a
// constant input yields exactly zero deviation and zero MSCN.
inline LocalStatistics local_statistics(const Plane& gray) {
  double offset = 0.0;
  for (double v : gray.values()) offset += v;
  offset /= static_cast<double>(gray.size());

  Plane centered(gray.width(), gray.height());
  Plane squared(gray.width(), gray.height());
  auto src = gray.values();
  auto c = centered.values();
  auto sq = squared.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    c[i] = src[i] - offset;
    sq[i] = c[i] * c[i];
  }
  const auto k = gaussian_kernel(kMscnWindow, kMscnSigma);
  Plane mu = convolve_replicate(centered, k);
  Plane var = convolve_replicate(squared, k);
  auto m = mu.values();
  auto v = var.values();
  for (std::size_t i = 0; i < m.size(); ++i) v[i] = std::sqrt(std::abs(v[i] - m[i] * m[i]));
  for (double& x : m) x += offset;
  return {std::move(mu), std::move(var)};
}

inline void require_min_size(int w, int h, int min, const char* what) {
  if (w < min || h < min) {
    throw InvalidArgument(std::string(what) + " requires at least " + std::to_string(min) + "x" +
                          std::to_string(min) + " pixels, got " + std::to_string(w) + "x" + std::to_string(h));
  }
}

// (I - mu) / (sigma + C) on the [0,255] scale.
inline Plane mscn_coefficients(const Plane& gray) {
  require_min_size(gray.width(), gray.height(), 16, "MSCN");
  const auto stats = local_statistics(gray);
  Plane out(gray.width(), gray.height());
  auto src = gray.values();
  auto mu = stats.mean.values();
  auto sd = stats.deviation.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = (src[i] - mu[i]) / (sd[i] + kMscnC);
  }
  return out;
}

inline Plane mscn_coefficients(const Frame& f) { return mscn_coefficients(luma_plane(f)); }

// ---------------------------------------------------------------------------
// Generalized Gaussian fits

// Spread/variance reported for degenerate (all-zero) inputs.
inline constexpr double kDegenerateSpread = 1e-6;

namespace detail {

// Gamma(2/g)^2 / (Gamma(1/g) Gamma(3/g)); strictly increasing in g.
inline double ggd_ratio(double g) {
  return std::exp(2.0 * std::lgamma(2.0 / g) - std::lgamma(1.0 / g) - std::lgamma(3.0 / g));
}

// Solves ggd_ratio(g) == target on [0.2, 10] by bisection.
inline double solve_shape(double target) {
  double lo = 0.2;
  double hi = 10.0;
  if (!(target > ggd_ratio(lo))) return lo;
  if (!(target < ggd_ratio(hi))) return hi;
  for (int i = 0; i < 200 && hi - lo > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    (ggd_ratio(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

struct GgdFit {
  double shape = 2.0;
  double variance = kDegenerateSpread;
};

struct AggdFit {
  double shape = 2.0;
  double mean = 0.0;
  double left_variance = kDegenerateSpread;
  double right_variance = kDegenerateSpread;
};

// Zero-mean generalized Gaussian by moment matching: E|x|^2 / E[x^2] is a
// function of the shape parameter alone.
inline GgdFit fit_ggd(std::span<const double> x) {
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (double v : x) {
    abs_sum += std::abs(v);
    sq_sum += v * v;
  }
  if (sq_sum == 0.0 || x.empty()) return {};
  const double n = static_cast<double>(x.size());
  const double mean_abs = abs_sum / n;
  const double var = sq_sum / n;
  return {detail::solve_shape(mean_abs * mean_abs / var), var};
}

// Asymmetric generalized Gaussian with separate left/right spreads.
inline AggdFit fit_aggd(std::span<const double> x) {
  double neg_sq = 0.0, pos_sq = 0.0, abs_sum = 0.0;
  std::size_t neg_n = 0, pos_n = 0;
  for (double v : x) {
    if (v > 0.0) {
      ++pos_n;
      pos_sq += v * v;
      abs_sum += v;
    } else if (v < 0.0) {
      ++neg_n;
      neg_sq += v * v;
      abs_sum -= v;
    }
  }
  if (neg_n + pos_n == 0) return {};
  const double floor_sigma = std::sqrt(kDegenerateSpread);
  const double left = neg_n ? std::sqrt(neg_sq / static_cast<double>(neg_n)) : floor_sigma;
  const double right = pos_n ? std::sqrt(pos_sq / static_cast<double>(pos_n)) : floor_sigma;
  const double n = static_cast<double>(x.size());
  const double gamma_hat = left / right;
  const double r_hat = (abs_sum / n) * (abs_sum / n) / ((neg_sq + pos_sq) / n);
  const double r_norm = r_hat * (gamma_hat * gamma_hat * gamma_hat + 1.0) * (gamma_hat + 1.0) /
                        std::pow(gamma_hat * gamma_hat + 1.0, 2.0);
  const double shape = detail::solve_shape(r_norm);
  const double mean = (right - left) * std::exp(std::lgamma(2.0 / shape) - std::lgamma(1.0 / shape)) *
                      std::sqrt(std::exp(std::lgamma(1.0 / shape) - std::lgamma(3.0 / shape)));
  return {shape, mean, left * left, right * right};
}

// ---------------------------------------------------------------------------
// NSS feature vectors

inline constexpr int kFeaturesPerScale = 18;
inline constexpr int kNssFeatureDim = 2 * kFeaturesPerScale;

namespace detail {

// Neighbor offsets (dx, dy): horizontal, vertical, main and anti diagonal.
inline constexpr int kOrientations[4][2] = {{1, 0}, {0, 1}, {1, 1}, {-1, 1}};

// 18 statistics of one MSCN field: GGD (shape, variance) then, per
// orientation, AGGD (shape, mean, left variance, right variance) of the
// neighbor products over all pairs inside the field.
inline void append_scale_features(const Plane& mscn, std::vector<double>& out) {
  const auto g = fit_ggd(mscn.values());
  out.push_back(g.shape);
  out.push_back(g.variance);
  std::vector<double> prod;
  prod.reserve(mscn.size());
  for (const auto& o : kOrientations) {
    prod.clear();
    const int dx = o[0];
    const int dy = o[1];
    for (int y = 0; y + dy < mscn.height(); ++y) {
      for (int x = std::max(0, -dx); x < mscn.width() && x + dx < mscn.width(); ++x) {
        prod.push_back(mscn.at(x, y) * mscn.at(x + dx, y + dy));
      }
    }
    const auto a = fit_aggd(prod);
    out.push_back(a.shape);
    out.push_back(a.mean);
    out.push_back(a.left_variance);
    out.push_back(a.right_variance);
  }
}

}  // namespace detail

// 36-component BRISQUE-style feature vector over the whole frame at full
// and half resolution.
inline std::vector<double> brisque_features(const Frame& f) {
  require_min_size(f.width(), f.height(), 32, "brisque_features");
  std::vector<double> out;
  out.reserve(kNssFeatureDim);
  const Plane gray = luma_plane(f);
  detail::append_scale_features(mscn_coefficients(gray), out);
  detail::append_scale_features(mscn_coefficients(half_scale(gray)), out);
  return out;
}

inline constexpr int kNiqePatch = 96;

// Per-patch NSS features: MSCN is computed on the whole image at each scale,
// then 96x96 patches (48x48 at half scale) with stride 96 are summarized.
// Frames smaller than one patch contribute a single whole-frame patch.
inline std::vector<std::vector<double>> niqe_patch_features(const Frame& f) {
  require_min_size(f.width(), f.height(), 32, "niqe");
  const Plane gray = luma_plane(f);
  const Plane m1 = mscn_coefficients(gray);
  const Plane m2 = mscn_coefficients(half_scale(gray));

  std::vector<std::vector<double>> patches;
  if (f.width() < kNiqePatch || f.height() < kNiqePatch) {
    std::vector<double> v;
    detail::append_scale_features(m1, v);
    detail::append_scale_features(m2, v);
    patches.push_back(std::move(v));
    return patches;
  }
  constexpr int half = kNiqePatch / 2;
  for (int y = 0; y + kNiqePatch <= f.height(); y += kNiqePatch) {
    for (int x = 0; x + kNiqePatch <= f.width(); x += kNiqePatch) {
      std::vector<double> v;
      v.reserve(kNssFeatureDim);
      detail::append_scale_features(m1.crop(x, y, kNiqePatch, kNiqePatch), v);
      detail::append_scale_features(m2.crop(x / 2, y / 2, half, half), v);
      patches.push_back(std::move(v));
    }
  }
  return patches;
}

// ---------------------------------------------------------------------------
// Quality models

struct QualityModel {
  Vector mean;
  Matrix covariance;

  int feature_dim() const noexcept { return static_cast<int>(mean.size()); }

  void validate() const {
    if (covariance.rows() != mean.size() || covariance.cols() != mean.size()) {
      throw DimensionMismatch("quality model covariance does not match feature_dim");
    }
    if (!is_symmetric(covariance)) throw InvalidArgument("quality model covariance is not symmetric");
  }
};

inline json to_json(const QualityModel& m) {
  std::vector<double> cov;
  cov.reserve(static_cast<std::size_t>(m.covariance.size()));
  for (Eigen::Index r = 0; r < m.covariance.rows(); ++r)
    for (Eigen::Index c = 0; c < m.covariance.cols(); ++c) cov.push_back(m.covariance(r, c));
  return {{"feature_dim", m.feature_dim()}, {"mean", to_std(m.mean)}, {"covariance", cov}};
}

inline QualityModel quality_model_from_json(const json& j) {
  QualityModel m;
  try {
    const int dim = j.at("feature_dim").get<int>();
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto cov = j.at("covariance").get<std::vector<double>>();
    if (dim < 1 || mean.size() != static_cast<std::size_t>(dim) ||
        cov.size() != static_cast<std::size_t>(dim) * static_cast<std::size_t>(dim)) {
      throw DimensionMismatch("quality model arrays do not match feature_dim");
    }
    m.mean = to_vector(mean);
    m.covariance = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        cov.data(), dim, dim);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed quality model: ") + e.what());
  }
  m.validate();
  return m;
}

inline QualityModel read_quality_model(const fs::path& p) { return quality_model_from_json(read_json_file(p)); }
inline void write_quality_model(const fs::path& p, const QualityModel& m) { write_json_file(p, to_json(m)); }

namespace detail {

inline bool all_constant(std::span<const Frame> corpus) {
  for (const Frame& f : corpus) {
    const Pixel first = f.pixels()[0];
    for (const Pixel& p : f.pixels())
      if (!(p == first)) return false;
  }
  return true;
}

inline QualityModel model_from_samples(const std::vector<std::vector<double>>& samples) {
  auto moments = sample_moments(samples);
  return {std::move(moments.mean), std::move(moments.covariance)};
}

}  // namespace detail

// Pristine NIQE model: mean/covariance of all patch feature vectors.
inline QualityModel fit_quality_model(std::span<const Frame> corpus) {
  if (corpus.size() < 2) throw InvalidArgument("fit_quality_model needs at least 2 frames");
  if (detail::all_constant(corpus)) throw InvalidArgument("degenerate corpus: every frame is constant");
  std::vector<std::vector<double>> samples;
  for (const Frame& f : corpus) {
    auto p = niqe_patch_features(f);
    samples.insert(samples.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return detail::model_from_samples(samples);
}

// Reference model for brisque_score: one whole-frame feature vector per frame.
inline QualityModel fit_brisque_model(std::span<const Frame> corpus) {
  if (corpus.size() < 2) throw InvalidArgument("fit_brisque_model needs at least 2 frames");
  if (detail::all_constant(corpus)) throw InvalidArgument("degenerate corpus: every frame is constant");
  std::vector<std::vector<double>> samples;
  for (const Frame& f : corpus) samples.push_back(brisque_features(f));
  return detail::model_from_samples(samples);
}

inline const std::string kNiqeId = "niqe";
inline const std::string kBrisqueId = "brisque";

inline QualityScore niqe_score(const Frame& f, const QualityModel& m) {
  const auto patches = niqe_patch_features(f);
  if (m.feature_dim() != kNssFeatureDim) {
    throw DimensionMismatch("niqe model has feature_dim " + std::to_string(m.feature_dim()) + ", expected " +
                            std::to_string(kNssFeatureDim));
  }
  const auto stats = sample_moments(patches);
  return {pooled_mahalanobis(m.mean, m.covariance, stats.mean, stats.covariance), Polarity::lower_is_better,
          kNiqeId};
}

// Distance of a single feature vector (zero covariance) from the model.
inline QualityScore brisque_score(std::span<const double> v, const QualityModel& m) {
  if (static_cast<int>(v.size()) != m.feature_dim()) {
    throw DimensionMismatch("brisque feature vector has " + std::to_string(v.size()) +
                            " components, model expects " + std::to_string(m.feature_dim()));
  }
  const Matrix zero = Matrix::Zero(m.feature_dim(), m.feature_dim());
  return {pooled_mahalanobis(m.mean, m.covariance, to_vector(v), zero), Polarity::lower_is_better,
          kBrisqueId};
}

// Built-in pristine corpus: smooth band-limited random fields with mild
// fine texture, deterministic. Used when no model files are configured.
inline std::vector<Frame> builtin_pristine_corpus(int count = 12, int size = 192) {
  std::vector<Frame> corpus;
  std::mt19937_64 rng(0x5eed);
  auto unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  for (int n = 0; n < count; ++n) {
    struct Wave {
      double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;
    for (int k = 0; k < 12; ++k) {
      const double freq = 0.01 + 0.15 * unit() * unit();
      const double theta = 6.283185307179586 * unit();
      waves.push_back({freq * std::cos(theta), freq * std::sin(theta), 6.283185307179586 * unit(),
                       (0.3 + unit()) / (1.0 + 20.0 * freq)});
    }
    Frame f(size, size);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        double v = 0.0;
        for (const auto& w : waves) v += w.amp * std::sin(6.283185307179586 * (w.fx * x + w.fy * y) + w.phase);
        v = 128.0 + 40.0 * v + 6.0 * (unit() - 0.5);
        const std::uint8_t q = quantize(v);
        f.at(x, y) = {q, q, q};
      }
    }
    corpus.push_back(std::move(f));
  }
  return corpus;
}

inline const QualityModel& builtin_niqe_model() {
  static const QualityModel model = [] {
    const auto corpus = builtin_pristine_corpus();
    return fit_quality_model(corpus);
  }();
  return model;
}

inline const QualityModel& builtin_brisque_model() {
  static const QualityModel model = [] {
    const auto corpus = builtin_pristine_corpus();
    return fit_brisque_model(corpus);
  }();
  return model;
}

// ---------------------------------------------------------------------------
// Face quality

struct FaceRegion {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
};

inline constexpr int kMinFaceRegion = 8;

// Centered 50% x 50% box (head-and-shoulders framing).
inline FaceRegion default_face_region(const Frame& f) {
  return {f.width() / 4, f.height() / 4, f.width() / 2, f.height() / 2};
}

inline void validate_region(const Frame& f, const FaceRegion& r) {
  if (r.w < kMinFaceRegion || r.h < kMinFaceRegion) {
    throw InvalidArgument("face region must be at least 8x8, got " + std::to_string(r.w) + "x" +
                          std::to_string(r.h));
  }
  if (r.x < 0 || r.y < 0 || r.x + r.w > f.width() || r.y + r.h > f.height()) {
    throw InvalidArgument("face region out of frame bounds");
  }
}

inline const std::string kFaceProxyId = "face-sharpness-proxy";

// Variance of the 4-neighbour Laplacian over positions whose 3x3
// neighbourhood lies inside the region, averaged over R, G and B so chroma
// contrast counts. Depends only on the region's content.
inline QualityScore face_quality_score(const Frame& f, std::optional<FaceRegion> region = std::nullopt) {
  const FaceRegion r = region.value_or(default_face_region(f));
  validate_region(f, r);
  const double n = static_cast<double>((r.w - 2) * (r.h - 2));
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    auto ch = [&](int x, int y) -> double {
      const Pixel& p = f.at(x, y);
      return c == 0 ? p.r : c == 1 ? p.g : p.b;
    };
    double sum = 0.0, sq = 0.0;
    for (int y = r.y + 1; y < r.y + r.h - 1; ++y) {
      for (int x = r.x + 1; x < r.x + r.w - 1; ++x) {
        const double lap = ch(x - 1, y) + ch(x + 1, y) + ch(x, y - 1) + ch(x, y + 1) - 4.0 * ch(x, y);
        sum += lap;
        sq += lap * lap;
      }
    }
    const double mean = sum / n;
    total += std::max(sq / n - mean * mean, 0.0);
  }
  return {total / 3.0, Polarity::higher_is_better, kFaceProxyId};
}

// ---------------------------------------------------------------------------
// Scorer interface

class QualityScorer {
 public:
  virtual ~QualityScorer() = default;
  virtual QualityScore score(const Frame& f) const = 0;
  virtual std::string id() const = 0;
  virtual Polarity polarity() const = 0;
};

class FaceProxyScorer final : public QualityScorer {
 public:
  explicit FaceProxyScorer(std::optional<FaceRegion> region = std::nullopt) : region_(region) {}
  QualityScore score(const Frame& f) const override { return face_quality_score(f, region_); }
  std::string id() const override { return kFaceProxyId; }
  Polarity polarity() const override { return Polarity::higher_is_better; }

 private:
  std::optional<FaceRegion> region_;
};

class NiqeScorer final : public QualityScorer {
 public:
  explicit NiqeScorer(QualityModel model) : model_(std::move(model)) {}
  QualityScore score(const Frame& f) const override { return niqe_score(f, model_); }
  std::string id() const override { return kNiqeId; }
  Polarity polarity() const override { return Polarity::lower_is_better; }

 private:
  QualityModel model_;
};

class BrisqueScorer final : public QualityScorer {
 public:
  explicit BrisqueScorer(QualityModel model) : model_(std::move(model)) {}
  QualityScore score(const Frame& f) const override { return brisque_score(brisque_features(f), model_); }
  std::string id() const override { return kBrisqueId; }
  Polarity polarity() const override { return Polarity::lower_is_better; }

 private:
  QualityModel model_;
};

// Runs `<command...> score <frame.png>`; the process prints one decimal
// number and exits 0. Polarity comes from configuration.
class ExternalScorer final : public QualityScorer {
 public:
  ExternalScorer(std::vector<std::string> command, Polarity polarity, std::string id = "external",
                 std::chrono::milliseconds timeout = std::chrono::seconds(600))
      : command_(std::move(command)), polarity_(polarity), id_(std::move(id)), timeout_(timeout) {
    if (command_.empty()) throw InvalidArgument("external scorer command is empty");
  }

  QualityScore score(const Frame& f) const override {
    const fs::path dir = make_scratch_dir();
    const fs::path png = dir / "frame.png";
    write_png(png, f);
    auto argv = command_;
    argv.push_back("score");
    argv.push_back(png.string());
    ProcessOptions opts;
    opts.capture_stdout = true;
    opts.timeout = timeout_;
    ProcessResult r;
    try {
      r = run_process(argv, opts);
    } catch (...) {
      fs::remove_all(dir);
      throw;
    }
    fs::remove_all(dir);
    if (r.timed_out) throw ProcessError("scorer '" + id_ + "' timed out");
    if (r.exit_code != 0) {
      throw ProcessError("scorer '" + id_ + "' exited with status " + std::to_string(r.exit_code));
    }
    std::istringstream in(r.stdout_text);
    double v = 0.0;
    std::string trailing;
    if (!(in >> v) || (in >> trailing) || !std::isfinite(v)) {
      throw ProcessError("scorer '" + id_ + "' printed a non-numeric score: '" + r.stdout_text + "'");
    }
    return {v, polarity_, id_};
  }
  std::string id() const override { return id_; }
  Polarity polarity() const override { return polarity_; }

 private:
  static fs::path make_scratch_dir() {
    std::string tmpl = (fs::temp_directory_path() / "controlcol-score-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw IoError(tmpl, "cannot create scratch directory");
    return tmpl;
  }

  std::vector<std::string> command_;
  Polarity polarity_;
  std::string id_;
  std::chrono::milliseconds timeout_;
};

}  // namespace controlcol
