#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "json.hpp"
#include "synthetic.h"
#include "test_support.h"
#include "vfiqa/eval.h"

namespace vfiqa {
namespace {

TEST(TwoAfcTest, CreditRule) {
  const PairedResult full[] = {{"t", 2, 1, 1.0}};
  EXPECT_EQ(two_afc(full), 1.0);
  const PairedResult soft[] = {{"t", 2, 1, 0.66}};
  EXPECT_DOUBLE_EQ(two_afc(soft), 0.66);
  const PairedResult tie[] = {{"t", 1, 1, 1.0}};
  EXPECT_EQ(two_afc(tie), 0.5);
  const PairedResult wrong[] = {{"t", 1, 2, 1.0}};
  EXPECT_EQ(two_afc(wrong), 0.0);
  EXPECT_THROW(two_afc(std::span<const PairedResult>()), std::invalid_argument);
}

TEST(TwoAfcTest, SelfConsistentChoicesScoreOne) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<PairedResult> rs;
  for (int i = 0; i < 100; ++i) {
    const double a = u(rng), b = u(rng);
    rs.push_back({"t", a, b, b < a ? 1.0 : 0.0});
  }
  EXPECT_EQ(two_afc(rs), 1.0);
}

TEST(CorrelationTest, PerfectMonotone) {
  const double p[] = {1, 2, 3, 4}, up[] = {10, 20, 30, 40},
               down[] = {40, 30, 20, 10};
  auto c = correlate(p, up);
  EXPECT_NEAR(c.srocc, 1.0, 1e-12);
  EXPECT_NEAR(c.plcc, 1.0, 1e-12);
  EXPECT_NEAR(c.krocc, 1.0, 1e-12);
  c = correlate(p, down);
  EXPECT_NEAR(c.srocc, -1.0, 1e-12);
  EXPECT_NEAR(c.plcc, -1.0, 1e-12);
  EXPECT_NEAR(c.krocc, -1.0, 1e-12);
}

TEST(CorrelationTest, HandCase) {
  // Ranks (1,2,3) vs (3,1,2): sum d^2 = 4+1+1 = 6, rho = 1 - 36/24 = -0.5.
  // Pairs: (1,2) discordant, (1,3) discordant, (2,3) concordant: -1/3.
  const double p[] = {1, 2, 3}, m[] = {3, 1, 2};
  auto c = correlate(p, m);
  EXPECT_NEAR(c.srocc, -0.5, 1e-12);
  EXPECT_NEAR(c.krocc, -1.0 / 3.0, 1e-12);
}

TEST(CorrelationTest, AverageRanksWithTies) {
  const double v[] = {10, 20, 20, 5, 20};
  EXPECT_EQ(average_ranks(v), (std::vector<double>{2, 4, 4, 1, 4}));
}

TEST(CorrelationTest, TauBWithTies) {
  // x = [1,1,2,3], y = [1,2,2,3]: pairs 6, ties in x 1, ties in y 1,
  // concordant 4 (excluding tied pairs), discordant 0; tau_b = 4/sqrt(5*5).
  const double x[] = {1, 1, 2, 3}, y[] = {1, 2, 2, 3};
  EXPECT_NEAR(kendall_tau_b(x, y), 0.8, 1e-12);
}

TEST(CorrelationTest, InvarianceUnderMonotoneTransforms) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::vector<double> p(15), m(15);
  for (auto& v : p) v = g(rng);
  for (size_t i = 0; i < m.size(); ++i) m[i] = p[i] + 0.7 * g(rng);
  const auto base = correlate(p, m);
  std::vector<double> e(p.size()), aff(p.size());
  for (size_t i = 0; i < p.size(); ++i) {
    e[i] = std::exp(p[i]);
    aff[i] = 3.0 * p[i] + 7.0;
  }
  const auto ce = correlate(e, m), ca = correlate(aff, m);
  EXPECT_NEAR(ce.srocc, base.srocc, 1e-12);
  EXPECT_NEAR(ce.krocc, base.krocc, 1e-12);
  EXPECT_GT(std::abs(ce.plcc - base.plcc), 1e-6);
  EXPECT_NEAR(ca.srocc, base.srocc, 1e-12);
  EXPECT_NEAR(ca.plcc, base.plcc, 1e-12);
  EXPECT_NEAR(ca.krocc, base.krocc, 1e-12);
}

TEST(CorrelationTest, GroupsAveragedAndConstantGroupsExcluded) {
  std::vector<MosRecord> rs = {
      {"g1", "a", 1, 10}, {"g1", "b", 2, 20}, {"g1", "c", 3, 30},
      {"g2", "a", 1, 30}, {"g2", "b", 2, 10}, {"g2", "c", 3, 20},
      {"g3", "a", 5, 1},  {"g3", "b", 5, 2},  {"g4", "a", 1, 1}};
  std::ostringstream warn;
  auto r = rank_correlations(rs, &warn);
  ASSERT_EQ(r.groups.size(), 2u);
  EXPECT_EQ(r.excluded, (std::vector<std::string>{"g3", "g4"}));
  EXPECT_NE(warn.str().find("g3"), std::string::npos);
  EXPECT_NEAR(r.mean.srocc, (1.0 - 0.5) / 2, 1e-12);
  EXPECT_NEAR(r.mean.krocc, (1.0 - 1.0 / 3.0) / 2, 1e-12);
  const std::vector<MosRecord> only_bad = {{"g", "a", 1, 1}, {"g", "b", 1, 2}};
  EXPECT_THROW(rank_correlations(only_bad), std::invalid_argument);
}

TEST(MosCsvTest, ParsesAndValidates) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = dir / "vfiqa_mos.csv";
  std::ofstream(path) << "group_id,item_id,prediction,mos\n"
                         "v1,m1,0.5,3.2\n"
                         "v1,m2,0.25,4.0\n\n";
  auto rs = read_mos_csv(path);
  ASSERT_EQ(rs.size(), 2u);
  EXPECT_EQ(rs[1].item_id, "m2");
  EXPECT_EQ(rs[1].prediction, 0.25);
  EXPECT_EQ(rs[0].mos, 3.2);
  std::ofstream(path) << "group,item,p,m\n";
  EXPECT_THROW(read_mos_csv(path), std::runtime_error);
  std::ofstream(path) << "group_id,item_id,prediction,mos\nv1,m1,abc,3\n";
  EXPECT_THROW(read_mos_csv(path), std::runtime_error);
  std::ofstream(path) << "group_id,item_id,prediction,mos\nv1,m1,1\n";
  EXPECT_THROW(read_mos_csv(path), std::runtime_error);
  std::filesystem::remove(path);
}

TEST(ResultsJsonTest, Fields) {
  EvalResults r;
  r.two_afc = 0.75;
  r.srocc = 0.5;
  r.groups = 3;
  const auto j = nlohmann::json::parse(results_json(r));
  EXPECT_EQ(j["two_afc"], 0.75);
  EXPECT_EQ(j["srocc"], 0.5);
  EXPECT_TRUE(j["plcc"].is_null());
  EXPECT_TRUE(j["krocc"].is_null());
  EXPECT_EQ(j["groups"], 3);
}

VideoClip constant(int64_t n, int64_t h, int64_t w, float v) {
  return {"c", TensorF::full({n, 3, h, w}, v), {}};
}

TEST(PsnrTest, ClosedForms) {
  VideoClip a = constant(2, 8, 8, 0.1f);
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
  const float e = static_cast<float>(1.0 / 255.0);
  VideoClip lo = constant(2, 8, 8, -e), hi = constant(2, 8, 8, e);
  // |hi - lo| = 2e is exact; the only error is rounding 1/255 to float.
  EXPECT_NEAR(psnr(lo, hi), 20.0 * std::log10(255.0), 1e-6);
  const double mse_db = 10.0 * std::log10(4.0 / (4.0 * double(e) * e));
  EXPECT_NEAR(psnr(lo, hi), mse_db, 1e-12);
}

TEST(PsnrTest, DoublingNoiseCostsSixDecibels) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0, 1);
  std::vector<float> base(2 * 3 * 16 * 16, 0.0f), n1(base.size()),
      n2(base.size());
  for (size_t i = 0; i < base.size(); ++i) {
    const double z = g(rng);
    n1[i] = static_cast<float>(0.01 * z);
    n2[i] = static_cast<float>(0.02 * z);
  }
  VideoClip r{"r", TensorF::from_vector({2, 3, 16, 16}, base), {}};
  VideoClip a{"a", TensorF::from_vector({2, 3, 16, 16}, n1), {}};
  VideoClip b{"b", TensorF::from_vector({2, 3, 16, 16}, n2), {}};
  EXPECT_NEAR(psnr(a, r) - psnr(b, r), 20.0 * std::log10(2.0), 1e-5);
}

// Direct 2-D Gaussian-window SSIM, no separable filtering.
double reference_ssim(const VideoClip& x, const VideoClip& y) {
  const int64_t h = x.height(), w = x.width(), hw = h * w;
  double g[11][11], gs = 0.0;
  for (int i = 0; i < 11; ++i) {
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 2.25));
      gs += g[i][j];
    }
  }
  auto luma = [&](const VideoClip& c, int64_t f, int64_t p) {
    auto d = c.frames.data();
    const double r = (d[(f * 3 + 0) * hw + p] + 1.0) * 127.5;
    const double gg = (d[(f * 3 + 1) * hw + p] + 1.0) * 127.5;
    const double b = (d[(f * 3 + 2) * hw + p] + 1.0) * 127.5;
    return 0.299 * r + 0.587 * gg + 0.114 * b;
  };
  const double c1 = 6.5025, c2 = 58.5225;
  double total = 0.0;
  int64_t count = 0;
  for (int64_t f = 0; f < x.frame_count(); ++f) {
    for (int64_t y0 = 0; y0 + 11 <= h; ++y0) {
      for (int64_t x0 = 0; x0 + 11 <= w; ++x0) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < 11; ++i) {
          for (int j = 0; j < 11; ++j) {
            const double wgt = g[i][j] / gs;
            const int64_t p = (y0 + i) * w + x0 + j;
            const double a = luma(x, f, p), b = luma(y, f, p);
            mx += wgt * a;
            my += wgt * b;
            sxx += wgt * a * a;
            syy += wgt * b * b;
            sxy += wgt * a * b;
          }
        }
        const double vx = sxx - mx * mx, vy = syy - my * my,
                     cov = sxy - mx * my;
        total += (2 * mx * my + c1) * (2 * cov + c2) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return total / count;
}

TEST(SsimTest, IdentityAndSymmetry) {
  std::mt19937_64 rng(4);
  VideoClip a = testing::smooth_clip(rng, 2, 24, 30);
  EXPECT_EQ(ssim(a, a), 1.0);
  VideoClip b = testing::add_noise(a, 0.1, rng);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_LT(ssim(a, b), 1.0);
}

TEST(SsimTest, MatchesDirectImplementation) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    VideoClip a = testing::smooth_clip(rng, 2, 20, 23);
    VideoClip b = testing::add_noise(a, 0.05 + 0.1 * trial, rng);
    EXPECT_NEAR(ssim(a, b), reference_ssim(a, b), 1e-6);
  }
}

TEST(SsimTest, TooSmallThrows) {
  VideoClip a = constant(1, 10, 40, 0.0f);
  EXPECT_THROW(ssim(a, a), ShapeError);
}

TEST(SlidingWindowTest, WindowCountsAndMean) {
  ModelConfig cfg;
  cfg.frames = 2;
  MetricModel model(cfg, 1);
  std::mt19937_64 rng(6);
  VideoClip ref = testing::smooth_clip(rng, 6, 32, 32);
  VideoClip v = testing::add_noise(ref, 0.1, rng);
  double manual = 0.0;
  for (int i = 0; i < 5; ++i) {
    manual += score(v.subclip(i, 2), ref.subclip(i, 2), model);
  }
  EXPECT_NEAR(sliding_window_score(v, ref, model, 2, 1), manual / 5, 1e-12);
  // stride == window on N = 3 * window: mean of three disjoint windows.
  double disjoint = 0.0;
  for (int i = 0; i < 6; i += 2) {
    disjoint += score(v.subclip(i, 2), ref.subclip(i, 2), model);
  }
  EXPECT_NEAR(sliding_window_score(v, ref, model, 2, 2), disjoint / 3, 1e-12);
  // stride 4 drops the partial window: windows at 0 and 4.
  const double s04 = (score(v.subclip(0, 2), ref.subclip(0, 2), model) +
                      score(v.subclip(4, 2), ref.subclip(4, 2), model)) / 2;
  EXPECT_NEAR(sliding_window_score(v, ref, model, 2, 4), s04, 1e-12);
  EXPECT_THROW(sliding_window_score(v.subclip(0, 1), ref.subclip(0, 1), model,
                                    2, 1),
               ShapeError);
}

TEST(SlidingWindowTest, SingleWindowEqualsScore) {
  ModelConfig cfg;
  MetricModel model(cfg, 2);
  std::mt19937_64 rng(7);
  VideoClip ref = testing::smooth_clip(rng, 12, 32, 32);
  VideoClip v = testing::add_noise(ref, 0.1, rng);
  EXPECT_EQ(sliding_window_score(v, ref, model, 12, 1), score(v, ref, model));
}

}  // namespace
}  // namespace vfiqa
