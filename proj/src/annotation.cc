#include "vfiqa/annotation.h"

#include <algorithm>

namespace vfiqa {

namespace fs = std::filesystem;

AnnotationService::AnnotationService(fs::path manifest, fs::path judgment_log)
    : manifest_path_(std::move(manifest)), log_path_(std::move(judgment_log)) {
  for (auto& t : read_manifest(manifest_path_)) {
    by_id_[t.id] = items_.size();
    items_.push_back({std::move(t), {}, {}});
  }
  for (const auto& j : read_judgments(log_path_)) apply(j, true);
  for (auto& item : items_) {
    const Triplet& t = item.triplet;
    if (t.source == TripletSource::kUnlabeled || !item.judgments.empty()) {
      clip_id_for(t.a);
      clip_id_for(t.b);
      clip_id_for(t.ref);
    }
  }
}

std::string AnnotationService::clip_id_for(const fs::path& dir) {
  auto it = clip_ids_.find(dir);
  if (it != clip_ids_.end()) return it->second;
  std::string id = "c" + std::to_string(clip_ids_.size());
  clip_ids_[dir] = id;
  clip_dirs_[id] = dir;
  return id;
}

void AnnotationService::apply(const Judgment& j, bool from_log) {
  auto it = by_id_.find(j.triplet_id);
  if (it == by_id_.end()) {
    throw NotFoundError("unknown triplet '" + j.triplet_id + "'");
  }
  Item& item = items_[it->second];
  for (const auto& prior : item.judgments) {
    if (prior.annotator_id == j.annotator_id) {
      throw ConflictError("annotator '" + j.annotator_id +
                          "' already judged triplet '" + j.triplet_id + "'");
    }
  }
  if (static_cast<int>(item.judgments.size()) >= kJudgesPerTriplet) {
    throw ConflictError("triplet '" + j.triplet_id + "' already has " +
                        std::to_string(kJudgesPerTriplet) + " judgments");
  }
  if (from_log) sessions_.try_emplace(j.annotator_id);
  item.judgments.push_back(j);
  if (static_cast<int>(item.judgments.size()) == kJudgesPerTriplet) {
    const double h = quantize_h(aggregate_judgments(item.judgments));
    const bool changed = item.triplet.h != h ||
                         item.triplet.source != TripletSource::kHuman;
    item.triplet.h = h;
    item.triplet.source = TripletSource::kHuman;
    if (changed) persist_manifest();
  }
}

void AnnotationService::persist_manifest() const {
  std::vector<Triplet> all;
  all.reserve(items_.size());
  for (const auto& item : items_) all.push_back(item.triplet);
  write_manifest(manifest_path_, all);
}

TripletDescriptor AnnotationService::describe(const Item& item) const {
  TripletDescriptor d;
  d.id = item.triplet.id;
  d.clip_a = clip_ids_.at(item.triplet.a);
  d.clip_b = clip_ids_.at(item.triplet.b);
  d.clip_ref = clip_ids_.at(item.triplet.ref);
  auto urls = [&](const std::string& clip) {
    std::vector<std::string> out;
    for (int n = 0; n < d.playback.frames; ++n) {
      out.push_back("/clips/" + clip + "/" + frame_filename(n));
    }
    return out;
  };
  d.urls_a = urls(d.clip_a);
  d.urls_b = urls(d.clip_b);
  d.urls_ref = urls(d.clip_ref);
  return d;
}

std::optional<TripletDescriptor> AnnotationService::next_triplet(
    const std::string& annotator) {
  if (annotator.empty()) throw AuthError("empty annotator id");
  std::lock_guard<std::mutex> lock(mu_);
  auto& current = sessions_[annotator];
  if (current) return describe(items_[*current]);

  auto eligible = [&](const Item& item) {
    if (item.triplet.source != TripletSource::kUnlabeled) return false;
    const int load = static_cast<int>(item.judgments.size() +
                                      item.in_flight.size());
    if (load >= kJudgesPerTriplet) return false;
    return std::none_of(item.judgments.begin(), item.judgments.end(),
                        [&](const Judgment& j) {
                          return j.annotator_id == annotator;
                        });
  };
  std::optional<size_t> best;
  size_t best_load = 0;
  const size_t n = items_.size();
  for (size_t k = 0; k < n; ++k) {
    const size_t i = (cursor_ + k) % n;
    if (!eligible(items_[i])) continue;
    const size_t load = items_[i].judgments.size() + items_[i].in_flight.size();
    if (!best || load < best_load) {
      best = i;
      best_load = load;
    }
  }
  if (!best) return std::nullopt;
  cursor_ = (*best + 1) % n;
  items_[*best].in_flight.insert(annotator);
  current = *best;
  return describe(items_[*best]);
}

JudgmentAck AnnotationService::record_judgment(const std::string& annotator,
                                               const std::string& triplet_id,
                                               Choice choice) {
  std::lock_guard<std::mutex> lock(mu_);
  auto session = sessions_.find(annotator);
  if (session == sessions_.end()) {
    throw AuthError("unknown session '" + annotator + "'");
  }
  auto it = by_id_.find(triplet_id);
  if (it == by_id_.end()) {
    throw NotFoundError("unknown triplet '" + triplet_id + "'");
  }
  Item& item = items_[it->second];
  for (const auto& prior : item.judgments) {
    if (prior.annotator_id == annotator) {
      throw ConflictError("annotator '" + annotator +
                          "' already judged triplet '" + triplet_id + "'");
    }
  }
  if (session->second != it->second) {
    throw ConflictError("triplet '" + triplet_id +
                        "' is not in flight for annotator '" + annotator +
                        "'");
  }
  Judgment j{triplet_id, annotator, choice, utc_timestamp()};
  append_judgment(log_path_, j);
  item.in_flight.erase(annotator);
  session->second.reset();
  apply(j, false);
  JudgmentAck ack;
  if (static_cast<int>(item.judgments.size()) == kJudgesPerTriplet) {
    ack.finalized = true;
    ack.h = item.triplet.h;
  }
  return ack;
}

fs::path AnnotationService::frame_path(const std::string& clip_id,
                                       int64_t index) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = clip_dirs_.find(clip_id);
  if (it == clip_dirs_.end()) {
    throw NotFoundError("unknown clip '" + clip_id + "'");
  }
  fs::path p = it->second / frame_filename(index);
  if (index < 0 || !fs::is_regular_file(p)) {
    throw NotFoundError("clip '" + clip_id + "' has no frame " +
                        std::to_string(index));
  }
  return p;
}

std::map<std::string, QueueEntry> AnnotationService::queue_state() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::map<std::string, QueueEntry> out;
  for (const auto& item : items_) {
    if (item.triplet.source == TripletSource::kUnlabeled ||
        !item.judgments.empty()) {
      const int n = static_cast<int>(item.judgments.size());
      out[item.triplet.id] = {n, n == kJudgesPerTriplet};
    }
  }
  return out;
}

std::vector<Triplet> AnnotationService::triplets() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<Triplet> out;
  for (const auto& item : items_) out.push_back(item.triplet);
  return out;
}

}  // namespace vfiqa
