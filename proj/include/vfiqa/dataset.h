#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vfiqa/clip.h"

namespace vfiqa {

enum class TripletSource { kAuto, kHuman, kUnlabeled };

std::string to_string(TripletSource s);
TripletSource parse_source(const std::string& s);

// h is the preference for B: 1 means every judge found B closer to R.
struct Triplet {
  std::string id;
  std::filesystem::path a, b, ref;
  std::optional<double> h;
  TripletSource source = TripletSource::kUnlabeled;

  void validate() const;
};

enum class Choice { kASure, kAMaybe, kBMaybe, kBSure };

std::string to_string(Choice c);
// Accepts the wire names A_sure, A_maybe, B_maybe, B_sure.
Choice parse_choice(const std::string& s);
inline bool prefers_b(Choice c) {
  return c == Choice::kBMaybe || c == Choice::kBSure;
}

struct Judgment {
  std::string triplet_id;
  std::string annotator_id;
  Choice choice = Choice::kASure;
  std::string timestamp;  // ISO 8601, UTC
};

std::string utc_timestamp();

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// JSON lines. Relative clip paths are resolved against the manifest's
// directory on read and written relative to it.
std::vector<Triplet> read_manifest(const std::filesystem::path& path);
// Replaces the file atomically (temp file + rename).
void write_manifest(const std::filesystem::path& path,
                    std::span<const Triplet> triplets);

void append_judgment(const std::filesystem::path& path, const Judgment& j);
std::vector<Judgment> read_judgments(const std::filesystem::path& path);

// Exact mean preference for B over three judgments from distinct annotators
// on one triplet.
double aggregate_judgments(std::span<const Judgment> judgments);
// 0, 1/3, 2/3, 1 -> 0, 0.33, 0.66, 1 as written to manifests.
double quantize_h(double h);

struct PatchLocation {
  int64_t row = 0;
  int64_t col = 0;
  bool operator==(const PatchLocation&) const = default;
};

// Per-pixel |a - b| averaged over frames and channels, [H*W] row-major.
std::vector<double> mean_abs_error_map(const VideoClip& a, const VideoClip& b);

// Top-left corner of the size x size window with the largest error sum.
// Ties go to the smallest (row, col). stride > 1 searches the coarse grid
// 0, stride, 2*stride, ...
PatchLocation select_patch(const VideoClip& a, const VideoClip& b,
                           int64_t size = 256, int64_t stride = 1);

// Full-reference image metric; lower is more similar.
class RefMetric {
 public:
  virtual ~RefMetric() = default;
  // frame and ref are [3,H,W] slices of a clip.
  virtual double frame_score(std::span<const float> frame,
                             std::span<const float> ref, int64_t height,
                             int64_t width) const = 0;
  // Mean of frame_score over frames.
  double video_score(const VideoClip& clip, const VideoClip& ref) const;
};

// Mean |difference| over a stack of progressively blurred and halved
// copies, on a [0, 1] scale.
class BlurPyramidMetric : public RefMetric {
 public:
  explicit BlurPyramidMetric(int scales = 4) : scales_(scales) {}
  double frame_score(std::span<const float> frame, std::span<const float> ref,
                     int64_t height, int64_t width) const override;

 private:
  int scales_;
};

inline constexpr double kAutoThreshold = 0.15;
inline constexpr double kBoundarySlack = 1e-12;

// Hard label when the metric scores differ by more than threshold,
// otherwise nullopt (defer to human judges).
std::optional<double> auto_annotate(const VideoClip& a, const VideoClip& b,
                                    const VideoClip& ref,
                                    const RefMetric& metric,
                                    double threshold = kAutoThreshold);
// Same rule on precomputed scores.
std::optional<double> auto_label(double m_a, double m_b, double threshold);

}  // namespace vfiqa
