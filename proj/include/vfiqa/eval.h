#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vfiqa/clip.h"
#include "vfiqa/metric_model.h"

namespace vfiqa {

struct PairedResult {
  std::string triplet_id;
  double d_a = 0.0;
  double d_b = 0.0;
  double h = 0.0;
};

// Mean agreement credit g*h + (1-g)*(1-h), g = 1 when d_b < d_a, 0.5 on a
// tie. Throws std::invalid_argument on an empty list.
double two_afc(std::span<const PairedResult> results);

struct MosRecord {
  std::string group_id;
  std::string item_id;
  double prediction = 0.0;
  double mos = 0.0;
};

struct Correlations {
  double srocc = 0.0;
  double plcc = 0.0;
  double krocc = 0.0;
};

// 1-based ranks, tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> v);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
double kendall_tau_b(std::span<const double> x, std::span<const double> y);
// Throws std::invalid_argument for fewer than 2 items or a constant vector.
Correlations correlate(std::span<const double> pred, std::span<const double> mos);

struct GroupCorrelations {
  std::string group_id;
  size_t items = 0;
  Correlations c;
};

struct CorrelationReport {
  std::vector<GroupCorrelations> groups;  // in first-seen order
  std::vector<std::string> excluded;
  Correlations mean;  // equal weight per group
};

// Groups whose prediction or MOS is constant (or with one item) are left
// out, with a warning on `warn`. Throws if no group remains.
CorrelationReport rank_correlations(std::span<const MosRecord> records,
                                    std::ostream* warn = nullptr);

// CSV with header group_id,item_id,prediction,mos.
std::vector<MosRecord> read_mos_csv(const std::filesystem::path& path);

// Mean score over windows [i, i + window), i = 0, stride, ...; a trailing
// partial window is dropped.
double sliding_window_score(const VideoClip& clip, const VideoClip& reference,
                            const MetricModel& model, int64_t window = 12,
                            int64_t stride = 1);

// 10 log10(peak^2 / MSE) with peak 2; +inf for identical clips.
double psnr(const VideoClip& clip, const VideoClip& reference);

// Mean SSIM of Rec.601 luma on a 0..255 scale, 11-tap Gaussian (sigma 1.5),
// valid region only, averaged over pixels and frames.
double ssim(const VideoClip& clip, const VideoClip& reference);

struct EvalResults {
  std::optional<double> two_afc;
  std::optional<double> srocc, plcc, krocc;
  std::optional<size_t> groups;
};

// {"two_afc", "srocc", "plcc", "krocc", "groups"}; missing values are null.
std::string results_json(const EvalResults& r);

}  // namespace vfiqa
