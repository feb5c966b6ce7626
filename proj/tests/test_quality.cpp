#include <gtest/gtest.h>

#include <random>

#include "controlcol/quality.hpp"
#include "fixtures.hpp"

using namespace controlcol;
using testing_support::random_frame;
using testing_support::speaker_frame;
using testing_support::TempDir;

namespace {

Frame blur(const Frame& f, double sigma) {
  if (sigma <= 0.0) return f;
  const int size = 2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1;
  const auto k = gaussian_kernel(size, sigma);
  const Plane r = convolve_replicate(channel_plane(f, Channel::red), k);
  const Plane g = convolve_replicate(channel_plane(f, Channel::green), k);
  const Plane b = convolve_replicate(channel_plane(f, Channel::blue), k);
  Frame out(f.width(), f.height());
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x) out.at(x, y) = {quantize(r.at(x, y)), quantize(g.at(x, y)), quantize(b.at(x, y))};
  return out;
}

Frame noise_frame(std::mt19937_64& rng, int w, int h, double sd) {
  std::normal_distribution<double> d(128.0, sd);
  Frame f(w, h);
  for (auto& p : f.pixels()) {
    const auto v = quantize(d(rng));
    p = {v, v, v};
  }
  return f;
}

Frame add_noise(std::mt19937_64& rng, const Frame& f, double sd) {
  std::normal_distribution<double> d(0.0, sd);
  Frame out = f;
  for (auto& p : out.pixels()) {
    const double n = d(rng);
    p = {quantize(p.r + n), quantize(p.g + n), quantize(p.b + n)};
  }
  return out;
}

}  // namespace

TEST(Mscn, ConstantFrameIsZero) {
  const Plane m = mscn_coefficients(Frame(40, 30, Pixel{77, 77, 77}));
  for (double v : m.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(mscn_coefficients(Frame(8, 40)), InvalidArgument);
}

TEST(Mscn, NaturalImageHasNearZeroMean) {
  const Plane m = mscn_coefficients(speaker_frame(3, 128, 128));
  double s = 0.0;
  for (double v : m.values()) s += v;
  EXPECT_LT(std::abs(s / static_cast<double>(m.size())), 0.1);
}

TEST(Mscn, ContrastInvariantWhereDeviationDominates) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> d(-50.0, 50.0);
  Plane a(48, 48);
  for (double& v : a.values()) v = 128.0 + d(rng);
  Plane b(48, 48);
  for (std::size_t i = 0; i < a.size(); ++i) b.values()[i] = 128.0 + 2.0 * (a.values()[i] - 128.0);
  const Plane ma = mscn_coefficients(a), mb = mscn_coefficients(b);
  const auto stats = local_statistics(a);
  int checked = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (stats.deviation.values()[i] > 20.0) {
      ++checked;
      EXPECT_NEAR(ma.values()[i], mb.values()[i], 0.05 * std::max(1.0, std::abs(ma.values()[i])));
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(Ggd, GaussianSamplesGiveShapeTwo) {
  std::mt19937_64 rng(32);
  std::normal_distribution<double> d(0.0, 3.0);
  std::vector<double> x(200000);
  for (double& v : x) v = d(rng);
  const auto g = fit_ggd(x);
  EXPECT_NEAR(g.shape, 2.0, 0.05);
  EXPECT_NEAR(g.variance, 9.0, 0.1);
  const auto a = fit_aggd(x);
  EXPECT_NEAR(a.shape, 2.0, 0.05);
  EXPECT_NEAR(a.mean, 0.0, 0.05);
  EXPECT_NEAR(a.left_variance, a.right_variance, 0.2);
}

TEST(Ggd, LaplaceSamplesGiveShapeOne) {
  std::mt19937_64 rng(33);
  std::exponential_distribution<double> e(1.0);
  std::bernoulli_distribution sign;
  std::vector<double> x(200000);
  for (double& v : x) v = sign(rng) ? e(rng) : -e(rng);
  EXPECT_NEAR(fit_ggd(x).shape, 1.0, 0.05);
}

TEST(Ggd, DegenerateFallback) {
  std::vector<double> zeros(100, 0.0);
  const auto g = fit_ggd(zeros);
  EXPECT_EQ(g.shape, 2.0);
  EXPECT_EQ(g.variance, kDegenerateSpread);
  const auto a = fit_aggd(zeros);
  EXPECT_EQ(a.shape, 2.0);
  EXPECT_EQ(a.mean, 0.0);
  EXPECT_EQ(a.left_variance, kDegenerateSpread);
}

TEST(Brisque, FeatureShapeAndDegenerateContract) {
  const auto v = brisque_features(Frame(40, 40, Pixel{9, 9, 9}));
  ASSERT_EQ(v.size(), 36u);
  for (std::size_t s = 0; s < 2; ++s) {
    EXPECT_EQ(v[s * 18 + 0], 2.0);
    EXPECT_EQ(v[s * 18 + 1], kDegenerateSpread);
    for (int o = 0; o < 4; ++o) {
      EXPECT_EQ(v[s * 18 + 2 + o * 4 + 0], 2.0);
      EXPECT_EQ(v[s * 18 + 2 + o * 4 + 1], 0.0);
      EXPECT_EQ(v[s * 18 + 2 + o * 4 + 2], kDegenerateSpread);
      EXPECT_EQ(v[s * 18 + 2 + o * 4 + 3], kDegenerateSpread);
    }
  }
  std::mt19937_64 rng(34);
  const Frame f = random_frame(rng, 50, 37);
  EXPECT_EQ(brisque_features(f).size(), 36u);
  EXPECT_EQ(brisque_features(f), brisque_features(Frame(f)));
  EXPECT_THROW(brisque_features(Frame(20, 40)), InvalidArgument);
}

TEST(Ggd, WhiteNoiseFrameIsNearGaussian) {
  std::mt19937_64 rng(35);
  const Plane l = luma_plane(noise_frame(rng, 256, 256, 30.0));
  std::vector<double> x(l.values().begin(), l.values().end());
  for (double& v : x) v -= 128.0;
  EXPECT_NEAR(fit_ggd(x).shape, 2.0, 0.1);
}

TEST(QualityModelFit, TwoFrameMeanAndIdenticalCorpus) {
  std::mt19937_64 rng(36);
  const Frame a = speaker_frame(0, 64, 64), b = add_noise(rng, speaker_frame(5, 64, 64), 4.0);
  const std::vector<Frame> two{a, b};
  const QualityModel m = fit_quality_model(two);
  const auto fa = niqe_patch_features(a), fb = niqe_patch_features(b);
  ASSERT_EQ(fa.size(), 1u);
  for (int i = 0; i < kNssFeatureDim; ++i) EXPECT_NEAR(m.mean(i), 0.5 * (fa[0][i] + fb[0][i]), 1e-12);

  const std::vector<Frame> same{a, a, a};
  EXPECT_LT(fit_quality_model(same).covariance.cwiseAbs().maxCoeff(), 1e-20);
  const std::vector<Frame> one{a};
  EXPECT_THROW(fit_quality_model(one), InvalidArgument);
  const std::vector<Frame> flat{Frame(40, 40, Pixel{3, 3, 3}), Frame(40, 40, Pixel{9, 9, 9})};
  EXPECT_THROW(fit_quality_model(flat), InvalidArgument);
}

TEST(QualityModelFit, JsonRoundTrip) {
  const QualityModel& m = builtin_brisque_model();
  TempDir tmp;
  write_quality_model(tmp / "m.json", m);
  const QualityModel back = read_quality_model(tmp / "m.json");
  EXPECT_EQ(back.feature_dim(), 36);
  EXPECT_LT((back.mean - m.mean).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, m.mean.cwiseAbs().maxCoeff()));
  EXPECT_LT((back.covariance - m.covariance).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_THROW(quality_model_from_json(json{{"feature_dim", 2}, {"mean", {1.0}}, {"covariance", {1.0}}}),
               InvalidArgument);
}

TEST(Niqe, ZeroAtModelStatisticsAndNonnegative) {
  const Frame f = speaker_frame(2, 64, 64);
  QualityModel m;
  m.mean = to_vector(niqe_patch_features(f)[0]);
  m.covariance = Matrix::Identity(36, 36);
  EXPECT_EQ(niqe_score(f, m).value, 0.0);
  std::mt19937_64 rng(37);
  for (int i = 0; i < 5; ++i) EXPECT_GE(niqe_score(random_frame(rng, 64, 64), builtin_niqe_model()).value, 0.0);
}

TEST(Niqe, MembersScoreBetterThanNoise) {
  std::vector<Frame> corpus;
  for (int t = 0; t < 20; ++t) corpus.push_back(speaker_frame(t, 96, 96));
  const QualityModel m = fit_quality_model(corpus);
  std::mt19937_64 rng(38);
  const double member = niqe_score(corpus[4], m).value;
  const double noisy = niqe_score(add_noise(rng, corpus[4], 40.0), m).value;
  EXPECT_LT(member, noisy);
}

TEST(Niqe, BlurScoresWorseThanSharp) {
  const auto corpus = builtin_pristine_corpus();
  const std::vector<Frame> train(corpus.begin() + 1, corpus.end());
  const QualityModel m = fit_quality_model(train);
  const double sharp = niqe_score(corpus[0], m).value;
  const double blurred = niqe_score(blur(corpus[0], 3.0), m).value;
  EXPECT_LT(sharp, blurred);
}

TEST(BrisqueScore, OracleAndZero) {
  const QualityModel& m = builtin_brisque_model();
  EXPECT_EQ(brisque_score(to_std(m.mean), m).value, 0.0);
  std::mt19937_64 rng(39);
  std::normal_distribution<double> d(0.0, 0.1);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> v = to_std(m.mean);
    for (double& x : v) x += d(rng);
    // independent route: explicit inverse of the half covariance
    Matrix pooled = 0.5 * m.covariance;
    pooled.diagonal().array() += kCovarianceEpsilon;
    const Vector diff = to_vector(v) - m.mean;
    const double oracle = std::sqrt(diff.dot(pooled.fullPivLu().inverse() * diff));
    EXPECT_NEAR(brisque_score(v, m).value, oracle, 1e-6 * oracle);
  }
  const std::vector<double> shorter(35, 0.0);
  EXPECT_THROW(brisque_score(shorter, m), DimensionMismatch);
}

TEST(FaceProxy, ConstantIsZeroAndBlurOrdering) {
  EXPECT_EQ(face_quality_score(Frame(32, 32, Pixel{50, 60, 70})).value, 0.0);
  const Frame sharp = speaker_frame(0, 96, 96);
  double prev = face_quality_score(sharp).value;
  for (double s : {1.0, 2.0, 4.0}) {
    const double v = face_quality_score(blur(sharp, s)).value;
    EXPECT_LT(v, prev) << "sigma " << s;
    prev = v;
  }
  const auto q = face_quality_score(sharp);
  EXPECT_EQ(q.polarity, Polarity::higher_is_better);
  EXPECT_EQ(q.scorer_id, kFaceProxyId);
}

TEST(FaceProxy, TranslationInvariantForFixedContent) {
  std::mt19937_64 rng(40);
  const Frame patch = random_frame(rng, 20, 20);
  auto place = [&](int ox, int oy) {
    Frame f(64, 64, Pixel{10, 10, 10});
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) f.at(ox + x, oy + y) = patch.at(x, y);
    return f;
  };
  const double a = face_quality_score(place(3, 5), FaceRegion{3, 5, 20, 20}).value;
  const double b = face_quality_score(place(40, 31), FaceRegion{40, 31, 20, 20}).value;
  EXPECT_DOUBLE_EQ(a, b);
  EXPECT_THROW(face_quality_score(place(0, 0), FaceRegion{60, 60, 10, 10}), InvalidArgument);
  EXPECT_THROW(face_quality_score(place(0, 0), FaceRegion{0, 0, 4, 4}), InvalidArgument);
}

TEST(ExternalScorer, PassThroughAndErrors) {
  const std::string dir = CONTROLCOL_FIXTURES;
  const ExternalScorer s({dir + "/const_scorer.sh"}, Polarity::higher_is_better, "ser-fiq");
  const auto q = s.score(Frame(8, 8));
  EXPECT_DOUBLE_EQ(q.value, 0.73);
  EXPECT_EQ(q.polarity, Polarity::higher_is_better);
  EXPECT_EQ(q.scorer_id, "ser-fiq");
  EXPECT_THROW(ExternalScorer({dir + "/bad_scorer.sh"}, Polarity::lower_is_better).score(Frame(8, 8)), ProcessError);
  EXPECT_THROW(ExternalScorer({"/bin/false"}, Polarity::lower_is_better).score(Frame(8, 8)), ProcessError);
  EXPECT_THROW(ExternalScorer({}, Polarity::lower_is_better), InvalidArgument);
}

TEST(PolarityNames, RoundTrip) {
  EXPECT_EQ(polarity_from_string(to_string(Polarity::higher_is_better)), Polarity::higher_is_better);
  EXPECT_EQ(polarity_from_string("lower"), Polarity::lower_is_better);
  EXPECT_THROW(polarity_from_string("sideways"), InvalidArgument);
}
