#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "vfiqa/tensor.h"

namespace vfiqa {

// Ordered frames [N,3,H,W], values in [-1, 1].
struct VideoClip {
  std::string id;
  TensorF frames;
  std::optional<double> fps_hint;

  int64_t frame_count() const { return frames.dim(0); }
  int64_t height() const { return frames.dim(2); }
  int64_t width() const { return frames.dim(3); }

  // Throws ShapeError / std::domain_error when the invariants do not hold.
  void validate() const;
  // Frames [start, start + count) as a new clip.
  VideoClip subclip(int64_t start, int64_t count) const;
  bool same_geometry(const VideoClip& other) const;
};

// Error raised for unreadable or malformed clip directories.
class ClipIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kClipIndexDigits = 3;

std::string frame_filename(int64_t index);

// Reads frame_000.png ... frame_{N-1}.png (8-bit RGB) in index order.
VideoClip load_clip(const std::filesystem::path& dir);
// Writes the frames quantized to 8 bits, creating `dir` if needed.
void store_clip(const VideoClip& clip, const std::filesystem::path& dir);

// Bilinear resampling with half-pixel centres (edge-clamped).
VideoClip resize_clip(const VideoClip& clip, int64_t height, int64_t width);

inline float to_unit_range(uint8_t v) { return v / 127.5f - 1.0f; }
uint8_t to_byte(float v);

}  // namespace vfiqa
