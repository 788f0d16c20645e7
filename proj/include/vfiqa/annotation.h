#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "vfiqa/dataset.h"

namespace vfiqa {

struct Playback {
  int fps = 2;
  int frames = 12;
};

struct TripletDescriptor {
  std::string id;
  std::string clip_a, clip_b, clip_ref;  // ids usable under /clips/
  std::vector<std::string> urls_a, urls_b, urls_ref;
  Playback playback;
};

struct JudgmentAck {
  bool finalized = false;
  std::optional<double> h;  // stored (quantized) value once finalized
};

struct QueueEntry {
  int judged = 0;
  bool finalized = false;
};

// Error kinds surfaced as distinct HTTP statuses.
class AuthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ConflictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Serves unlabeled triplets from a manifest to annotators. A session is the
// annotator id; it exists from that annotator's first next_triplet call.
// Judgments go to an append-only log, which is replayed on construction.
class AnnotationService {
 public:
  AnnotationService(std::filesystem::path manifest,
                    std::filesystem::path judgment_log);

  // Returns the annotator's current in-flight triplet if any, else the
  // least-judged eligible one (rotating among ties), or nullopt.
  std::optional<TripletDescriptor> next_triplet(const std::string& annotator);

  JudgmentAck record_judgment(const std::string& annotator,
                              const std::string& triplet_id, Choice choice);

  // Path of frame `index` of a served clip; throws NotFoundError.
  std::filesystem::path frame_path(const std::string& clip_id,
                                   int64_t index) const;

  std::map<std::string, QueueEntry> queue_state() const;
  std::vector<Triplet> triplets() const;

 private:
  struct Item {
    Triplet triplet;
    std::vector<Judgment> judgments;
    std::set<std::string> in_flight;  // annotators currently holding it
  };

  void apply(const Judgment& j, bool from_log);
  TripletDescriptor describe(const Item& item) const;
  std::string clip_id_for(const std::filesystem::path& dir);
  void persist_manifest() const;

  std::filesystem::path manifest_path_;
  std::filesystem::path log_path_;
  mutable std::mutex mu_;
  std::vector<Item> items_;
  std::map<std::string, size_t> by_id_;
  std::map<std::string, std::optional<size_t>> sessions_;  // -> in-flight item
  std::map<std::string, std::filesystem::path> clip_dirs_;
  std::map<std::filesystem::path, std::string> clip_ids_;
  size_t cursor_ = 0;
};

inline constexpr int kJudgesPerTriplet = 3;

}  // namespace vfiqa
