#include "vfiqa/clip.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <memory>
#include <regex>
#include <sstream>
#include <vector>

namespace vfiqa {

void VideoClip::validate() const {
  if (!frames.defined() || frames.rank() != 4 || frames.dim(1) != 3) {
    throw ShapeError("clip '" + id + "': frames must be [N,3,H,W]" +
                     (frames.defined() ? ", got " + shape_str(frames.shape())
                                       : std::string()));
  }
  for (float v : frames.data()) {
    if (!(v >= -1.0f && v <= 1.0f)) {
      throw std::domain_error("clip '" + id + "': value outside [-1, 1]");
    }
  }
}

VideoClip VideoClip::subclip(int64_t start, int64_t count) const {
  if (start < 0 || count < 1 || start + count > frame_count()) {
    throw ShapeError("clip '" + id + "': frame range out of bounds");
  }
  const int64_t per_frame = 3 * height() * width();
  auto first = frames.data().begin() + start * per_frame;
  VideoClip out{id, TensorF::from_vector(
                        {count, 3, height(), width()},
                        std::vector<float>(first, first + count * per_frame)),
                fps_hint};
  return out;
}

bool VideoClip::same_geometry(const VideoClip& other) const {
  return frames.shape() == other.frames.shape();
}

std::string frame_filename(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%0*lld.png", kClipIndexDigits,
                static_cast<long long>(index));
  return buf;
}

uint8_t to_byte(float v) {
  const float scaled = std::round((v + 1.0f) * 127.5f);
  return static_cast<uint8_t>(std::clamp(scaled, 0.0f, 255.0f));
}

namespace {

struct ImageDeleter {
  void operator()(png_image* image) const {
    png_image_free(image);
    delete image;
  }
};

std::vector<uint8_t> read_png_rgb(const std::filesystem::path& path,
                                  int64_t* height, int64_t* width) {
  std::unique_ptr<png_image, ImageDeleter> image(new png_image{});
  image->version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(image.get(), path.c_str())) {
    throw ClipIoError("cannot read " + path.string() + ": " + image->message);
  }
  image->format = PNG_FORMAT_RGB;
  std::vector<uint8_t> pixels(PNG_IMAGE_SIZE(*image));
  if (!png_image_finish_read(image.get(), nullptr, pixels.data(), 0,
                             nullptr)) {
    throw ClipIoError("cannot decode " + path.string() + ": " +
                      image->message);
  }
  *height = image->height;
  *width = image->width;
  return pixels;
}

void write_png_rgb(const std::filesystem::path& path,
                   const std::vector<uint8_t>& pixels, int64_t height,
                   int64_t width) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0,
                               nullptr)) {
    std::string message = image.message;
    png_image_free(&image);
    throw ClipIoError("cannot write " + path.string() + ": " + message);
  }
}

}  // namespace

VideoClip load_clip(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) {
    throw ClipIoError("clip directory not found: " + dir.string());
  }
  static const std::regex kPattern(R"(frame_(\d+)\.png)");
  std::map<int64_t, fs::path> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    std::smatch m;
    if (!std::regex_match(name, m, kPattern)) continue;
    found.emplace(std::stoll(m[1].str()), entry.path());
  }
  if (found.empty()) {
    throw ClipIoError("no frame_*.png files in " + dir.string());
  }
  int64_t expected = 0;
  std::vector<int64_t> missing;
  for (const auto& [index, path] : found) {
    while (expected < index) missing.push_back(expected++);
    ++expected;
  }
  if (!missing.empty()) {
    std::ostringstream os;
    os << "clip " << dir.string() << " has gaps: missing";
    for (int64_t i : missing) os << ' ' << frame_filename(i);
    throw ClipIoError(os.str());
  }

  const int64_t n = static_cast<int64_t>(found.size());
  int64_t height = 0, width = 0;
  std::vector<float> values;
  for (const auto& [index, path] : found) {
    int64_t h = 0, w = 0;
    std::vector<uint8_t> rgb = read_png_rgb(path, &h, &w);
    if (index == 0) {
      height = h;
      width = w;
      values.resize(static_cast<size_t>(n * 3 * h * w));
    } else if (h != height || w != width) {
      throw ClipIoError(path.string() + " is " + std::to_string(w) + "x" +
                        std::to_string(h) + ", expected " +
                        std::to_string(width) + "x" + std::to_string(height));
    }
    float* dst = values.data() + index * 3 * height * width;
    const int64_t plane = height * width;
    for (int64_t p = 0; p < plane; ++p) {
      for (int c = 0; c < 3; ++c) dst[c * plane + p] = to_unit_range(rgb[p * 3 + c]);
    }
  }
  VideoClip clip{dir.filename().string(),
                 TensorF::from_vector({n, 3, height, width}, std::move(values)),
                 std::nullopt};
  return clip;
}

void store_clip(const VideoClip& clip, const std::filesystem::path& dir) {
  clip.validate();
  std::filesystem::create_directories(dir);
  const int64_t plane = clip.height() * clip.width();
  std::vector<uint8_t> rgb(static_cast<size_t>(plane * 3));
  for (int64_t n = 0; n < clip.frame_count(); ++n) {
    const float* src = clip.frames.data().data() + n * 3 * plane;
    for (int64_t p = 0; p < plane; ++p) {
      for (int c = 0; c < 3; ++c) rgb[p * 3 + c] = to_byte(src[c * plane + p]);
    }
    write_png_rgb(dir / frame_filename(n), rgb, clip.height(), clip.width());
  }
}

VideoClip resize_clip(const VideoClip& clip, int64_t height, int64_t width) {
  if (height < 1 || width < 1) throw ShapeError("resize_clip: empty target");
  if (height == clip.height() && width == clip.width()) {
    return {clip.id, clip.frames.clone(), clip.fps_hint};
  }
  const int64_t in_h = clip.height(), in_w = clip.width();
  const int64_t planes = clip.frame_count() * 3;
  std::vector<float> out(static_cast<size_t>(planes * height * width));
  const double sy = static_cast<double>(in_h) / height;
  const double sx = static_cast<double>(in_w) / width;

  struct Tap {
    int64_t i0, i1;
    float w1;
  };
  auto taps = [](int64_t n_out, int64_t n_in, double s) {
    std::vector<Tap> t(n_out);
    for (int64_t o = 0; o < n_out; ++o) {
      double src = (o + 0.5) * s - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
      const int64_t i0 = static_cast<int64_t>(std::floor(src));
      const int64_t i1 = std::min(i0 + 1, n_in - 1);
      t[o] = {i0, i1, static_cast<float>(src - i0)};
    }
    return t;
  };
  const auto ty = taps(height, in_h, sy);
  const auto tx = taps(width, in_w, sx);
  auto in = clip.frames.data();
  for (int64_t p = 0; p < planes; ++p) {
    const float* src = in.data() + p * in_h * in_w;
    float* dst = out.data() + p * height * width;
    for (int64_t y = 0; y < height; ++y) {
      const float* r0 = src + ty[y].i0 * in_w;
      const float* r1 = src + ty[y].i1 * in_w;
      const float wy = ty[y].w1;
      for (int64_t x = 0; x < width; ++x) {
        const float top = r0[tx[x].i0] + tx[x].w1 * (r0[tx[x].i1] - r0[tx[x].i0]);
        const float bot = r1[tx[x].i0] + tx[x].w1 * (r1[tx[x].i1] - r1[tx[x].i0]);
        dst[y * width + x] = std::clamp(top + wy * (bot - top), -1.0f, 1.0f);
      }
    }
  }
  return {clip.id,
          TensorF::from_vector({clip.frame_count(), 3, height, width},
                               std::move(out)),
          clip.fps_hint};
}

}  // namespace vfiqa
