#include "vfiqa/dataset.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>

#include "json.hpp"

namespace vfiqa {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(TripletSource s) {
  switch (s) {
    case TripletSource::kAuto: return "auto";
    case TripletSource::kHuman: return "human";
    case TripletSource::kUnlabeled: return "unlabeled";
  }
  return "unlabeled";
}

TripletSource parse_source(const std::string& s) {
  if (s == "auto") return TripletSource::kAuto;
  if (s == "human") return TripletSource::kHuman;
  if (s == "unlabeled") return TripletSource::kUnlabeled;
  throw DatasetError("unknown triplet source '" + s + "'");
}

void Triplet::validate() const {
  if (id.empty()) throw DatasetError("triplet without id");
  if (h.has_value() != (source != TripletSource::kUnlabeled)) {
    throw DatasetError("triplet '" + id + "': h must be present iff source " +
                       "is not unlabeled");
  }
  if (h && !(*h >= 0.0 && *h <= 1.0)) {
    throw DatasetError("triplet '" + id + "': h outside [0, 1]");
  }
}

std::string to_string(Choice c) {
  switch (c) {
    case Choice::kASure: return "A_sure";
    case Choice::kAMaybe: return "A_maybe";
    case Choice::kBMaybe: return "B_maybe";
    case Choice::kBSure: return "B_sure";
  }
  return "A_sure";
}

Choice parse_choice(const std::string& s) {
  if (s == "A_sure") return Choice::kASure;
  if (s == "A_maybe") return Choice::kAMaybe;
  if (s == "B_maybe") return Choice::kBMaybe;
  if (s == "B_sure") return Choice::kBSure;
  throw DatasetError("unknown choice '" + s + "'");
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      now.time_since_epoch())
                      .count() %
                  1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  const size_t n = std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  std::snprintf(buf + n, sizeof(buf) - n, ".%03lldZ",
                static_cast<long long>(ms));
  return buf;
}

namespace {

std::string line_error(const fs::path& path, size_t line,
                                 const std::string& what) {
  return path.string() + ":" + std::to_string(line) + ": " + what;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path q(p);
  return q.is_absolute() ? q : (base / q).lexically_normal();
}

std::string relative_to(const fs::path& base, const fs::path& p) {
  if (p.is_relative()) return p.generic_string();
  fs::path rel = p.lexically_relative(base);
  return rel.empty() ? p.generic_string() : rel.generic_string();
}

}  // namespace

std::vector<Triplet> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open manifest " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  std::vector<Triplet> out;
  std::set<std::string> ids;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Triplet t;
    try {
      const json j = json::parse(line);
      t.id = j.at("id").get<std::string>();
      t.a = resolve(base, j.at("a").get<std::string>());
      t.b = resolve(base, j.at("b").get<std::string>());
      t.ref = resolve(base, j.at("ref").get<std::string>());
      if (j.contains("h") && !j["h"].is_null()) t.h = j["h"].get<double>();
      t.source = parse_source(j.value("source", std::string("unlabeled")));
      t.validate();
    } catch (const json::exception& e) {
      throw DatasetError(line_error(path, lineno, e.what()));
    } catch (const DatasetError& e) {
      throw DatasetError(line_error(path, lineno, e.what()));
    }
    if (!ids.insert(t.id).second) {
      throw DatasetError(
          line_error(path, lineno, "duplicate id '" + t.id + "'"));
    }
    out.push_back(std::move(t));
  }
  return out;
}

void write_manifest(const fs::path& path, std::span<const Triplet> triplets) {
  const fs::path base = fs::absolute(path).parent_path();
  if (!base.empty()) fs::create_directories(base);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DatasetError("cannot write " + tmp.string());
    for (const auto& t : triplets) {
      t.validate();
      json j;
      j["id"] = t.id;
      j["a"] = relative_to(base, t.a);
      j["b"] = relative_to(base, t.b);
      j["ref"] = relative_to(base, t.ref);
      j["h"] = t.h ? json(*t.h) : json(nullptr);
      j["source"] = to_string(t.source);
      out << j.dump() << '\n';
    }
    out.flush();
    if (!out) throw DatasetError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void append_judgment(const fs::path& path, const Judgment& jd) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DatasetError("cannot append to " + path.string());
  json j;
  j["triplet_id"] = jd.triplet_id;
  j["annotator_id"] = jd.annotator_id;
  j["choice"] = to_string(jd.choice);
  j["timestamp"] = jd.timestamp;
  out << j.dump() << '\n';
  out.flush();
  if (!out) throw DatasetError("write failed for " + path.string());
}

std::vector<Judgment> read_judgments(const fs::path& path) {
  std::vector<Judgment> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Judgment jd;
      jd.triplet_id = j.at("triplet_id").get<std::string>();
      jd.annotator_id = j.at("annotator_id").get<std::string>();
      jd.choice = parse_choice(j.at("choice").get<std::string>());
      jd.timestamp = j.value("timestamp", std::string());
      out.push_back(std::move(jd));
    } catch (const json::exception& e) {
      throw DatasetError(line_error(path, lineno, e.what()));
    }
  }
  return out;
}

double aggregate_judgments(std::span<const Judgment> judgments) {
  if (judgments.size() != 3) {
    throw DatasetError("aggregate_judgments: need exactly 3 judgments, got " +
                       std::to_string(judgments.size()));
  }
  std::set<std::string> annotators;
  int votes_b = 0;
  for (const auto& j : judgments) {
    if (j.triplet_id != judgments[0].triplet_id) {
      throw DatasetError("aggregate_judgments: judgments span triplets '" +
                         judgments[0].triplet_id + "' and '" + j.triplet_id +
                         "'");
    }
    if (!annotators.insert(j.annotator_id).second) {
      throw DatasetError("aggregate_judgments: annotator '" + j.annotator_id +
                         "' judged triplet '" + j.triplet_id + "' twice");
    }
    votes_b += prefers_b(j.choice) ? 1 : 0;
  }
  return votes_b / 3.0;
}

double quantize_h(double h) {
  const int thirds = static_cast<int>(std::lround(h * 3.0));
  static constexpr double kStored[] = {0.0, 0.33, 0.66, 1.0};
  if (thirds < 0 || thirds > 3 || std::abs(h * 3.0 - thirds) > 1e-6) {
    throw DatasetError("quantize_h: " + std::to_string(h) +
                       " is not a multiple of 1/3");
  }
  return kStored[thirds];
}

std::vector<double> mean_abs_error_map(const VideoClip& a,
                                       const VideoClip& b) {
  if (!a.same_geometry(b)) {
    throw ShapeError("error map: clip shapes " + shape_str(a.frames.shape()) +
                     " and " + shape_str(b.frames.shape()) + " differ");
  }
  const int64_t n = a.frame_count(), hw = a.height() * a.width();
  std::vector<double> map(hw, 0.0);
  auto da = a.frames.data(), db = b.frames.data();
  for (int64_t f = 0; f < n * 3; ++f) {
    const float* pa = da.data() + f * hw;
    const float* pb = db.data() + f * hw;
    for (int64_t i = 0; i < hw; ++i) {
      map[i] += std::abs(static_cast<double>(pa[i]) - pb[i]);
    }
  }
  const double denom = static_cast<double>(n * 3);
  for (auto& v : map) v /= denom;
  return map;
}

PatchLocation select_patch(const VideoClip& a, const VideoClip& b,
                           int64_t size, int64_t stride) {
  if (size < 1 || stride < 1) {
    throw std::invalid_argument("select_patch: size and stride must be >= 1");
  }
  const int64_t h = a.height(), w = a.width();
  if (size > h || size > w) {
    throw ShapeError("select_patch: patch " + std::to_string(size) +
                     " larger than frame " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  const std::vector<double> map = mean_abs_error_map(a, b);
  // Summed-area table with a zero border.
  std::vector<double> sat((h + 1) * (w + 1), 0.0);
  for (int64_t y = 0; y < h; ++y) {
    double row = 0.0;
    for (int64_t x = 0; x < w; ++x) {
      row += map[y * w + x];
      sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
    }
  }
  PatchLocation best;
  double best_sum = -1.0;
  for (int64_t y = 0; y + size <= h; y += stride) {
    for (int64_t x = 0; x + size <= w; x += stride) {
      const double s = sat[(y + size) * (w + 1) + x + size] -
                       sat[y * (w + 1) + x + size] -
                       sat[(y + size) * (w + 1) + x] + sat[y * (w + 1) + x];
      if (s > best_sum) {
        best_sum = s;
        best = {y, x};
      }
    }
  }
  return best;
}

double RefMetric::video_score(const VideoClip& clip,
                              const VideoClip& ref) const {
  if (!clip.same_geometry(ref)) {
    throw ShapeError("metric: clip shapes " + shape_str(clip.frames.shape()) +
                     " and " + shape_str(ref.frames.shape()) + " differ");
  }
  const int64_t per = 3 * clip.height() * clip.width();
  double total = 0.0;
  for (int64_t f = 0; f < clip.frame_count(); ++f) {
    total += frame_score(clip.frames.data().subspan(f * per, per),
                         ref.frames.data().subspan(f * per, per),
                         clip.height(), clip.width());
  }
  return total / static_cast<double>(clip.frame_count());
}

namespace {

// Separable [1 2 1]/4 blur with clamped edges, in place on [3,H,W].
void blur(std::vector<double>& img, int64_t h, int64_t w) {
  std::vector<double> tmp(img.size());
  for (int64_t c = 0; c < 3; ++c) {
    double* p = img.data() + c * h * w;
    double* t = tmp.data() + c * h * w;
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        const int64_t l = std::max<int64_t>(x - 1, 0), r = std::min(x + 1, w - 1);
        t[y * w + x] = 0.25 * p[y * w + l] + 0.5 * p[y * w + x] +
                       0.25 * p[y * w + r];
      }
    }
    for (int64_t y = 0; y < h; ++y) {
      const int64_t u = std::max<int64_t>(y - 1, 0), d = std::min(y + 1, h - 1);
      for (int64_t x = 0; x < w; ++x) {
        p[y * w + x] = 0.25 * t[u * w + x] + 0.5 * t[y * w + x] +
                       0.25 * t[d * w + x];
      }
    }
  }
}

std::vector<double> halve(const std::vector<double>& img, int64_t h,
                          int64_t w, int64_t* nh, int64_t* nw) {
  *nh = std::max<int64_t>(h / 2, 1);
  *nw = std::max<int64_t>(w / 2, 1);
  std::vector<double> out(3 * *nh * *nw);
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t y = 0; y < *nh; ++y) {
      for (int64_t x = 0; x < *nw; ++x) {
        const int64_t sy = std::min(2 * y, h - 1), sx = std::min(2 * x, w - 1);
        out[(c * *nh + y) * *nw + x] = img[(c * h + sy) * w + sx];
      }
    }
  }
  return out;
}

}  // namespace

double BlurPyramidMetric::frame_score(std::span<const float> frame,
                                      std::span<const float> ref,
                                      int64_t height, int64_t width) const {
  std::vector<double> a(frame.begin(), frame.end());
  std::vector<double> r(ref.begin(), ref.end());
  int64_t h = height, w = width;
  double total = 0.0;
  for (int s = 0; s < scales_; ++s) {
    blur(a, h, w);
    blur(r, h, w);
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - r[i]);
    total += acc / (2.0 * static_cast<double>(a.size()));
    if (s + 1 < scales_) {
      int64_t nh = h, nw = w;
      a = halve(a, h, w, &nh, &nw);
      r = halve(r, h, w, &nh, &nw);
      h = nh;
      w = nw;
    }
  }
  return total / scales_;
}

std::optional<double> auto_label(double m_a, double m_b, double threshold) {
  // Differences within kBoundarySlack of the threshold count as equal to it,
  // so decimal inputs like 0.50 vs 0.35 defer.
  if (!(std::abs(m_a - m_b) - threshold > kBoundarySlack)) return std::nullopt;
  return m_b < m_a ? 1.0 : 0.0;
}

std::optional<double> auto_annotate(const VideoClip& a, const VideoClip& b,
                                    const VideoClip& ref,
                                    const RefMetric& metric,
                                    double threshold) {
  if (!(threshold > 0.0)) {
    throw std::invalid_argument("auto_annotate: threshold must be > 0");
  }
  if (!a.same_geometry(ref) || !b.same_geometry(ref)) {
    throw ShapeError("auto_annotate: clip shapes differ");
  }
  return auto_label(metric.video_score(a, ref), metric.video_score(b, ref),
                    threshold);
}

}  // namespace vfiqa
