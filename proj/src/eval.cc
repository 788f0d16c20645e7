#include "vfiqa/eval.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace vfiqa {

double two_afc(std::span<const PairedResult> results) {
  if (results.empty()) throw std::invalid_argument("two_afc: no results");
  double total = 0.0;
  for (const auto& r : results) {
    const double g = r.d_b < r.d_a ? 1.0 : (r.d_b == r.d_a ? 0.5 : 0.0);
    total += g * r.h + (1.0 - g) * (1.0 - r.h);
  }
  return total / static_cast<double>(results.size());
}

std::vector<double> average_ranks(std::span<const double> v) {
  const size_t n = v.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("pearson: need two equal-length vectors of "
                                "at least 2 items");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw std::invalid_argument("pearson: constant vector");
  }
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("kendall_tau_b: need two equal-length "
                                "vectors of at least 2 items");
  }
  int64_t concordant = 0, discordant = 0, tied_x = 0, tied_y = 0, pairs = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    for (size_t j = i + 1; j < x.size(); ++j) {
      ++pairs;
      const bool tx = x[i] == x[j], ty = y[i] == y[j];
      if (tx) ++tied_x;
      if (ty) ++tied_y;
      if (tx || ty) continue;
      if ((x[i] < x[j]) == (y[i] < y[j])) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  if (tied_x == pairs || tied_y == pairs) {
    throw std::invalid_argument("kendall_tau_b: constant vector");
  }
  const double denom = std::sqrt(static_cast<double>(pairs - tied_x) *
                                 static_cast<double>(pairs - tied_y));
  return static_cast<double>(concordant - discordant) / denom;
}

Correlations correlate(std::span<const double> pred,
                       std::span<const double> mos) {
  return {spearman(pred, mos), pearson(pred, mos), kendall_tau_b(pred, mos)};
}

CorrelationReport rank_correlations(std::span<const MosRecord> records,
                                    std::ostream* warn) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      groups;
  for (const auto& r : records) {
    auto [it, inserted] = groups.try_emplace(r.group_id);
    if (inserted) order.push_back(r.group_id);
    it->second.first.push_back(r.prediction);
    it->second.second.push_back(r.mos);
  }
  CorrelationReport report;
  for (const auto& g : order) {
    const auto& [pred, mos] = groups[g];
    auto constant = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(),
                         [&](double x) { return x == v.front(); });
    };
    if (pred.size() < 2 || constant(pred) || constant(mos)) {
      report.excluded.push_back(g);
      if (warn) {
        *warn << "warning: group '" << g
              << "' has fewer than 2 items or a constant vector; excluded\n";
      }
      continue;
    }
    report.groups.push_back({g, pred.size(), correlate(pred, mos)});
  }
  if (report.groups.empty()) {
    throw std::invalid_argument("rank_correlations: no usable group");
  }
  for (const auto& g : report.groups) {
    report.mean.srocc += g.c.srocc;
    report.mean.plcc += g.c.plcc;
    report.mean.krocc += g.c.krocc;
  }
  const double n = static_cast<double>(report.groups.size());
  report.mean.srocc /= n;
  report.mean.plcc /= n;
  report.mean.krocc /= n;
  return report;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v)) {
    throw std::runtime_error(where + ": '" + s + "' is not a finite number");
  }
  return v;
}

}  // namespace

std::vector<MosRecord> read_mos_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error(path.string() + ": empty file");
  }
  const std::vector<std::string> expected = {"group_id", "item_id",
                                             "prediction", "mos"};
  if (split_csv(line) != expected) {
    throw std::runtime_error(path.string() +
                             ": header must be group_id,item_id,prediction,mos");
  }
  std::vector<MosRecord> out;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 4) {
      throw std::runtime_error(where + ": expected 4 fields, got " +
                               std::to_string(f.size()));
    }
    out.push_back({f[0], f[1], parse_number(f[2], where),
                   parse_number(f[3], where)});
  }
  return out;
}

double sliding_window_score(const VideoClip& clip, const VideoClip& reference,
                            const MetricModel& model, int64_t window,
                            int64_t stride) {
  if (window < 1 || stride < 1) {
    throw std::invalid_argument("sliding_window_score: window and stride "
                                "must be >= 1");
  }
  if (!clip.same_geometry(reference)) {
    throw ShapeError("sliding_window_score: clip " +
                     shape_str(clip.frames.shape()) + " vs reference " +
                     shape_str(reference.frames.shape()));
  }
  if (clip.frame_count() < window) {
    throw ShapeError("sliding_window_score: clip has " +
                     std::to_string(clip.frame_count()) +
                     " frames, window is " + std::to_string(window));
  }
  double total = 0.0;
  int64_t count = 0;
  for (int64_t i = 0; i + window <= clip.frame_count(); i += stride) {
    total += score(clip.subclip(i, window), reference.subclip(i, window),
                   model);
    ++count;
  }
  return total / static_cast<double>(count);
}

double psnr(const VideoClip& clip, const VideoClip& reference) {
  if (!clip.same_geometry(reference)) {
    throw ShapeError("psnr: clip shapes differ");
  }
  auto a = clip.frames.data(), b = reference.frames.data();
  double se = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(a.size());
  return 10.0 * std::log10(4.0 / mse);
}

namespace {

constexpr int kSsimTaps = 11;
constexpr double kSsimSigma = 1.5;

std::vector<double> gaussian_taps() {
  std::vector<double> g(kSsimTaps);
  double sum = 0.0;
  for (int i = 0; i < kSsimTaps; ++i) {
    const double x = i - kSsimTaps / 2;
    g[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Valid separable filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& img, int64_t h,
                                 int64_t w, const std::vector<double>& g) {
  const int64_t k = static_cast<int64_t>(g.size());
  const int64_t ow = w - k + 1, oh = h - k + 1;
  std::vector<double> rows(h * ow);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int64_t t = 0; t < k; ++t) acc += g[t] * img[y * w + x + t];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow);
  for (int64_t y = 0; y < oh; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int64_t t = 0; t < k; ++t) acc += g[t] * rows[(y + t) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

std::vector<double> luma(const VideoClip& clip, int64_t frame) {
  const int64_t hw = clip.height() * clip.width();
  auto d = clip.frames.data().subspan(frame * 3 * hw, 3 * hw);
  std::vector<double> y(hw);
  for (int64_t i = 0; i < hw; ++i) {
    const double r = (d[i] + 1.0) * 127.5, g = (d[hw + i] + 1.0) * 127.5,
                 b = (d[2 * hw + i] + 1.0) * 127.5;
    y[i] = 0.299 * r + 0.587 * g + 0.114 * b;
  }
  return y;
}

}  // namespace

double ssim(const VideoClip& clip, const VideoClip& reference) {
  if (!clip.same_geometry(reference)) {
    throw ShapeError("ssim: clip shapes differ");
  }
  const int64_t h = clip.height(), w = clip.width();
  if (h < kSsimTaps || w < kSsimTaps) {
    throw ShapeError("ssim: frames " + std::to_string(h) + "x" +
                     std::to_string(w) + " smaller than the " +
                     std::to_string(kSsimTaps) + "-tap window");
  }
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const auto g = gaussian_taps();
  double total = 0.0;
  int64_t count = 0;
  for (int64_t f = 0; f < clip.frame_count(); ++f) {
    const auto x = luma(clip, f), y = luma(reference, f);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx, h, w, g), syy = filter_valid(yy, h, w, g),
               sxy = filter_valid(xy, h, w, g);
    for (size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

std::string results_json(const EvalResults& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j;
  j["two_afc"] = opt(r.two_afc);
  j["srocc"] = opt(r.srocc);
  j["plcc"] = opt(r.plcc);
  j["krocc"] = opt(r.krocc);
  j["groups"] = r.groups ? nlohmann::json(*r.groups) : nlohmann::json(nullptr);
  return j.dump(2);
}

}  // namespace vfiqa
