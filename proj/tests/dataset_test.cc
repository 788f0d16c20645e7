#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "synthetic.h"
#include "test_support.h"
#include "vfiqa/clip.h"
#include "vfiqa/dataset.h"

namespace vfiqa {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("vfiqa_ds_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

VideoClip uniform_clip(int64_t n, int64_t h, int64_t w, float v,
                       const std::string& id = "c") {
  return {id, TensorF::full({n, 3, h, w}, v), {}};
}

TEST(ClipIoTest, StoreLoadRoundTripWithinQuantization) {
  const fs::path dir = scratch("rt") / "clip";
  std::mt19937_64 rng(1);
  VideoClip clip = testing::smooth_clip(rng, 12, 20, 28);
  store_clip(clip, dir);
  VideoClip back = load_clip(dir);
  EXPECT_EQ(back.frame_count(), 12);
  EXPECT_EQ(back.height(), 20);
  EXPECT_EQ(back.width(), 28);
  EXPECT_EQ(back.id, "clip");
  for (int64_t i = 0; i < clip.frames.size(); ++i) {
    ASSERT_LE(std::abs(clip.frames.data()[i] - back.frames.data()[i]),
              1.0f / 255.0f + 1e-6f);
  }
}

TEST(ClipIoTest, ByteEndpoints) {
  EXPECT_EQ(to_unit_range(255), 1.0f);
  EXPECT_EQ(to_unit_range(0), -1.0f);
  EXPECT_EQ(to_byte(1.0f), 255);
  EXPECT_EQ(to_byte(-1.0f), 0);
  for (int b = 0; b < 256; ++b) {
    EXPECT_EQ(to_byte(to_unit_range(static_cast<uint8_t>(b))), b);
  }
}

TEST(ClipIoTest, GapIsReported) {
  const fs::path dir = scratch("gap") / "clip";
  store_clip(uniform_clip(4, 8, 8, 0.0f), dir);
  fs::remove(dir / "frame_001.png");
  fs::remove(dir / "frame_002.png");
  try {
    load_clip(dir);
    FAIL() << "expected ClipIoError";
  } catch (const ClipIoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("frame_001.png"), std::string::npos) << msg;
    EXPECT_NE(msg.find("frame_002.png"), std::string::npos) << msg;
  }
  EXPECT_THROW(load_clip(scratch("none") / "missing"), ClipIoError);
  EXPECT_THROW(load_clip(scratch("empty")), ClipIoError);
}

TEST(ClipIoTest, ValidateRejectsOutOfRange) {
  VideoClip c = uniform_clip(1, 2, 2, 1.5f);
  EXPECT_THROW(c.validate(), std::domain_error);
  VideoClip bad{"x", TensorF::zeros({1, 2, 2, 2}), {}};
  EXPECT_THROW(bad.validate(), ShapeError);
}

TEST(ClipIoTest, ResizeKeepsConstantsAndShape) {
  VideoClip c = uniform_clip(2, 64, 48, 0.25f);
  VideoClip r = resize_clip(c, 32, 32);
  EXPECT_EQ(r.frames.shape(), (Shape{2, 3, 32, 32}));
  for (float v : r.frames.data()) EXPECT_FLOAT_EQ(v, 0.25f);
  // 2x downsampling with half-pixel centres averages 2x2 blocks.
  std::vector<float> v = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  std::vector<float> three;
  for (int c3 = 0; c3 < 3; ++c3) {
    for (float x : v) three.push_back(x / 16.0f);
  }
  VideoClip g{"g", TensorF::from_vector({1, 3, 4, 4}, three), {}};
  VideoClip h = resize_clip(g, 2, 2);
  EXPECT_FLOAT_EQ(h.frames.data()[0], (0 + 1 + 4 + 5) / 64.0f);
  EXPECT_FLOAT_EQ(h.frames.data()[3], (10 + 11 + 14 + 15) / 64.0f);
}

TEST(ManifestTest, RoundTripWithRelativePaths) {
  const fs::path dir = scratch("manifest");
  std::vector<Triplet> ts = {
      {"t0", dir / "clips/a0", dir / "clips/b0", dir / "clips/r0", 0.66,
       TripletSource::kHuman},
      {"t1", dir / "clips/a1", dir / "clips/b1", dir / "clips/r0", std::nullopt,
       TripletSource::kUnlabeled},
      {"t2", dir / "clips/a2", dir / "clips/b2", dir / "clips/r2", 1.0,
       TripletSource::kAuto}};
  write_manifest(dir / "m.jsonl", ts);
  std::ifstream in(dir / "m.jsonl");
  std::string first;
  std::getline(in, first);
  EXPECT_NE(first.find("\"a\":\"clips/a0\""), std::string::npos) << first;
  EXPECT_NE(first.find("\"h\":0.66"), std::string::npos) << first;
  EXPECT_NE(first.find("\"source\":\"human\""), std::string::npos) << first;

  auto back = read_manifest(dir / "m.jsonl");
  ASSERT_EQ(back.size(), 3u);
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].id, ts[i].id);
    EXPECT_EQ(back[i].a, ts[i].a.lexically_normal());
    EXPECT_EQ(back[i].ref, ts[i].ref.lexically_normal());
    EXPECT_EQ(back[i].h, ts[i].h);
    EXPECT_EQ(back[i].source, ts[i].source);
  }
  EXPECT_FALSE(fs::exists(dir / "m.jsonl.tmp"));
}

TEST(ManifestTest, RejectsInvalidLines) {
  const fs::path dir = scratch("manifest_bad");
  auto write = [&](const std::string& body) {
    std::ofstream(dir / "m.jsonl") << body;
    return dir / "m.jsonl";
  };
  EXPECT_THROW(read_manifest(write("{\"id\":\"x\",\"a\":\"a\",\"b\":\"b\","
                                   "\"ref\":\"r\",\"h\":null,\"source\":\"human\"}\n")),
               DatasetError);
  EXPECT_THROW(read_manifest(write("{\"id\":\"x\",\"a\":\"a\",\"b\":\"b\","
                                   "\"ref\":\"r\",\"h\":1.5,\"source\":\"auto\"}\n")),
               DatasetError);
  EXPECT_THROW(read_manifest(write("not json\n")), DatasetError);
  EXPECT_THROW(read_manifest(write("{\"id\":\"x\",\"a\":\"a\",\"b\":\"b\","
                                   "\"ref\":\"r\",\"h\":null,\"source\":\"unlabeled\"}\n"
                                   "{\"id\":\"x\",\"a\":\"a\",\"b\":\"b\","
                                   "\"ref\":\"r\",\"h\":null,\"source\":\"unlabeled\"}\n")),
               DatasetError);
  EXPECT_THROW(read_manifest(dir / "absent.jsonl"), DatasetError);
}

TEST(JudgmentTest, LogRoundTrip) {
  const fs::path log = scratch("log") / "j.jsonl";
  Judgment j1{"t0", "ann1", Choice::kBMaybe, utc_timestamp()};
  Judgment j2{"t0", "ann2", Choice::kASure, utc_timestamp()};
  append_judgment(log, j1);
  append_judgment(log, j2);
  auto back = read_judgments(log);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].annotator_id, "ann1");
  EXPECT_EQ(back[0].choice, Choice::kBMaybe);
  EXPECT_EQ(back[1].choice, Choice::kASure);
  EXPECT_EQ(back[0].timestamp, j1.timestamp);
  EXPECT_EQ(j1.timestamp.size(), 24u);  // 2026-01-01T00:00:00.000Z
  EXPECT_TRUE(read_judgments(log.parent_path() / "none.jsonl").empty());
}

TEST(JudgmentTest, ChoiceWireNames) {
  for (Choice c : {Choice::kASure, Choice::kAMaybe, Choice::kBMaybe,
                   Choice::kBSure}) {
    EXPECT_EQ(parse_choice(to_string(c)), c);
  }
  EXPECT_EQ(to_string(Choice::kBMaybe), "B_maybe");
  EXPECT_THROW(parse_choice("middle"), DatasetError);
}

std::vector<Judgment> three(Choice a, Choice b, Choice c) {
  return {{"t", "x", a, ""}, {"t", "y", b, ""}, {"t", "z", c, ""}};
}

TEST(AggregateTest, VoteTable) {
  auto j = three(Choice::kBSure, Choice::kBMaybe, Choice::kAMaybe);
  EXPECT_DOUBLE_EQ(aggregate_judgments(j), 2.0 / 3.0);
  EXPECT_EQ(quantize_h(aggregate_judgments(j)), 0.66);
  EXPECT_EQ(aggregate_judgments(three(Choice::kASure, Choice::kASure,
                                      Choice::kAMaybe)),
            0.0);
  EXPECT_EQ(aggregate_judgments(three(Choice::kBSure, Choice::kBSure,
                                      Choice::kBSure)),
            1.0);
  EXPECT_EQ(quantize_h(1.0 / 3.0), 0.33);
  EXPECT_EQ(quantize_h(0.0), 0.0);
  EXPECT_EQ(quantize_h(1.0), 1.0);
}

TEST(AggregateTest, PermutationInvariant) {
  const Choice all[] = {Choice::kASure, Choice::kAMaybe, Choice::kBMaybe,
                        Choice::kBSure};
  for (Choice a : all) {
    for (Choice b : all) {
      for (Choice c : all) {
        auto j = three(a, b, c);
        const double h = aggregate_judgments(j);
        std::vector<Judgment> p = j;
        std::sort(p.begin(), p.end(), [](auto& l, auto& r) {
          return l.annotator_id < r.annotator_id;
        });
        do {
          EXPECT_EQ(aggregate_judgments(p), h);
        } while (std::next_permutation(
            p.begin(), p.end(),
            [](auto& l, auto& r) { return l.annotator_id < r.annotator_id; }));
      }
    }
  }
}

TEST(AggregateTest, RejectsWrongCountsAndDuplicates) {
  auto j = three(Choice::kBSure, Choice::kBSure, Choice::kBSure);
  EXPECT_THROW(aggregate_judgments(std::span(j).first(2)), DatasetError);
  j.push_back({"t", "w", Choice::kASure, ""});
  EXPECT_THROW(aggregate_judgments(j), DatasetError);
  j.pop_back();
  j[2].annotator_id = "x";
  EXPECT_THROW(aggregate_judgments(j), DatasetError);
  j[2].annotator_id = "z";
  j[2].triplet_id = "other";
  EXPECT_THROW(aggregate_judgments(j), DatasetError);
}

PatchLocation brute_force_patch(const VideoClip& a, const VideoClip& b,
                                int64_t size) {
  const int64_t h = a.height(), w = a.width();
  const auto map = mean_abs_error_map(a, b);
  PatchLocation best;
  double best_sum = -1.0;
  for (int64_t y = 0; y + size <= h; ++y) {
    for (int64_t x = 0; x + size <= w; ++x) {
      double s = 0.0;
      for (int64_t yy = y; yy < y + size; ++yy) {
        for (int64_t xx = x; xx < x + size; ++xx) s += map[yy * w + xx];
      }
      if (s > best_sum) {
        best_sum = s;
        best = {y, x};
      }
    }
  }
  return best;
}

TEST(PatchTest, IdenticalClipsPickOrigin) {
  VideoClip a = uniform_clip(2, 40, 50, 0.3f);
  EXPECT_EQ(select_patch(a, a, 16), (PatchLocation{0, 0}));
}

TEST(PatchTest, BlockDifferenceFound) {
  VideoClip a = uniform_clip(1, 300, 300, 0.0f);
  std::vector<float> v(a.frames.data().begin(), a.frames.data().end());
  for (int c = 0; c < 3; ++c) {
    for (int y = 10; y < 266; ++y) {
      for (int x = 20; x < 276; ++x) v[(c * 300 + y) * 300 + x] = 0.5f;
    }
  }
  VideoClip b{"b", TensorF::from_vector(a.frames.shape(), v), {}};
  EXPECT_EQ(select_patch(a, b, 256), (PatchLocation{10, 20}));
}

TEST(PatchTest, MatchesBruteForceOnSmallRandomPairs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    VideoClip a{"a", testing::random_tensor<float>({2, 3, 30, 37}, rng), {}};
    VideoClip b{"b", testing::random_tensor<float>({2, 3, 30, 37}, rng), {}};
    EXPECT_EQ(select_patch(a, b, 9), brute_force_patch(a, b, 9));
  }
}

TEST(PatchTest, ConstantShiftInvariantAndInBounds) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> q(-8, 8);
  std::vector<float> va(2 * 3 * 40 * 40), vb(va.size());
  for (auto& x : va) x = q(rng) / 16.0f;
  for (auto& x : vb) x = q(rng) / 16.0f;
  VideoClip a{"a", TensorF::from_vector({2, 3, 40, 40}, va), {}};
  VideoClip b{"b", TensorF::from_vector({2, 3, 40, 40}, vb), {}};
  for (auto& x : va) x += 0.25f;
  for (auto& x : vb) x += 0.25f;
  VideoClip a2{"a", TensorF::from_vector({2, 3, 40, 40}, va), {}};
  VideoClip b2{"b", TensorF::from_vector({2, 3, 40, 40}, vb), {}};
  const PatchLocation p = select_patch(a, b, 12);
  EXPECT_EQ(select_patch(a2, b2, 12), p);
  EXPECT_GE(p.row, 0);
  EXPECT_LE(p.row, 40 - 12);
  EXPECT_GE(p.col, 0);
  EXPECT_LE(p.col, 40 - 12);
}

TEST(PatchTest, CoarseStrideStaysOnGrid) {
  std::mt19937_64 rng(5);
  VideoClip a{"a", testing::random_tensor<float>({1, 3, 50, 50}, rng), {}};
  VideoClip b{"b", testing::random_tensor<float>({1, 3, 50, 50}, rng), {}};
  const PatchLocation p = select_patch(a, b, 10, 4);
  EXPECT_EQ(p.row % 4, 0);
  EXPECT_EQ(p.col % 4, 0);
  EXPECT_LE(p.row, 40);
}

TEST(PatchTest, PatchLargerThanFrameThrows) {
  VideoClip a = uniform_clip(1, 100, 300, 0.0f);
  EXPECT_THROW(select_patch(a, a, 256), ShapeError);
}

// Scores keyed by the first pixel value, to pin exact metric values.
class TableMetric : public RefMetric {
 public:
  explicit TableMetric(std::map<float, double> by_value)
      : by_value_(std::move(by_value)) {}
  double frame_score(std::span<const float> frame, std::span<const float>,
                     int64_t, int64_t) const override {
    return by_value_.at(frame[0]);
  }

 private:
  std::map<float, double> by_value_;
};

TEST(AutoAnnotateTest, ThresholdRule) {
  VideoClip ref = uniform_clip(2, 4, 4, 0.0f);
  VideoClip a = uniform_clip(2, 4, 4, 0.1f), b = uniform_clip(2, 4, 4, 0.2f);
  auto run = [&](double ma, double mb) {
    TableMetric m({{0.1f, ma}, {0.2f, mb}});
    return auto_annotate(a, b, ref, m, 0.15);
  };
  EXPECT_EQ(run(0.50, 0.30), 1.0);
  EXPECT_EQ(run(0.30, 0.50), 0.0);
  EXPECT_FALSE(run(0.40, 0.35).has_value());
  EXPECT_FALSE(run(0.50, 0.35).has_value());
  EXPECT_FALSE(run(0.15, 0.0).has_value());
  EXPECT_EQ(run(0.1500001, 0.0), 1.0);
  EXPECT_THROW(auto_annotate(a, b, ref, TableMetric({}), 0.0),
               std::invalid_argument);
}

TEST(AutoAnnotateTest, AntisymmetricUnderSwap) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double ma = u(rng), mb = u(rng);
    const auto h = auto_label(ma, mb, 0.15);
    const auto swapped = auto_label(mb, ma, 0.15);
    ASSERT_EQ(h.has_value(), swapped.has_value());
    if (h) EXPECT_EQ(*h, 1.0 - *swapped);
  }
}

TEST(BlurMetricTest, ZeroForIdenticalAndMonotoneInNoise) {
  BlurPyramidMetric m;
  std::mt19937_64 rng(7);
  VideoClip ref = testing::smooth_clip(rng, 2, 32, 32);
  EXPECT_EQ(m.video_score(ref, ref), 0.0);
  const double light = m.video_score(testing::add_noise(ref, 0.05, rng), ref);
  const double heavy = m.video_score(testing::add_noise(ref, 0.3, rng), ref);
  EXPECT_GT(light, 0.0);
  EXPECT_LT(light, heavy);
  // Opposite extremes: |(-1) - 1| / 2 = 1 at every scale.
  EXPECT_DOUBLE_EQ(m.video_score(uniform_clip(1, 8, 8, -1.0f),
                                 uniform_clip(1, 8, 8, 1.0f)),
                   1.0);
}

}  // namespace
}  // namespace vfiqa
