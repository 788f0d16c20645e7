#include "vfiqa/metric_model.h"

#include <cmath>
#include <cstring>
#include <map>
#include <random>
#include <stdexcept>

#include "vfiqa/ops.h"
#include "vfiqa/weights_io.h"

namespace vfiqa {

void ModelConfig::validate() const {
  if (frames < 1) throw ConfigError("model: frames must be >= 1");
  pyramid.validate();
  st.validate();
}

MetricModel::MetricModel(ModelConfig config, uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  pyramid_ = init_pyramid<float>(config_.pyramid, rng);
  for (int c : config_.pyramid.channels) {
    heads_.push_back(init_st_level<float>(config_.frames * c, config_.st, rng));
  }
}

std::vector<NamedTensor> MetricModel::named_parameters() const {
  std::vector<NamedTensor> out;
  auto conv = [&out](const std::string& prefix, const ConvWeights<float>& w) {
    out.emplace_back(prefix + ".weight", w.weight);
    out.emplace_back(prefix + ".bias", w.bias);
  };
  for (size_t l = 0; l < pyramid_.levels.size(); ++l) {
    const std::string p = "pyramid." + std::to_string(l);
    conv(p + ".conv1", pyramid_.levels[l].conv1);
    conv(p + ".conv2", pyramid_.levels[l].conv2);
  }
  for (size_t l = 0; l < heads_.size(); ++l) {
    const std::string p = "st." + std::to_string(l);
    conv(p + ".embed", heads_[l].embed);
    for (size_t b = 0; b < heads_[l].blocks.size(); ++b) {
      const auto& blk = heads_[l].blocks[b];
      const std::string q = p + ".block." + std::to_string(b);
      if (config_.st.use_layer_norm) {
        out.emplace_back(q + ".norm1.gamma", blk.norm1_gamma);
        out.emplace_back(q + ".norm1.beta", blk.norm1_beta);
      }
      out.emplace_back(q + ".attn.qkv.weight", blk.attn.qkv_weight);
      out.emplace_back(q + ".attn.qkv.bias", blk.attn.qkv_bias);
      out.emplace_back(q + ".attn.proj.weight", blk.attn.proj_weight);
      out.emplace_back(q + ".attn.proj.bias", blk.attn.proj_bias);
      if (config_.st.use_layer_norm) {
        out.emplace_back(q + ".norm2.gamma", blk.norm2_gamma);
        out.emplace_back(q + ".norm2.beta", blk.norm2_beta);
      }
      conv(q + ".mlp.fc1", blk.fc1);
      conv(q + ".mlp.fc2", blk.fc2);
    }
  }
  return out;
}

std::vector<TensorF> MetricModel::parameters() const {
  std::vector<TensorF> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

DistanceOutput<float> MetricModel::distances(
    std::span<const VideoClip> candidates, const VideoClip& reference) const {
  if (candidates.empty()) throw ShapeError("distances: no candidate clips");
  reference.validate();
  const int64_t n = reference.frame_count();
  if (n != config_.frames) {
    throw ShapeError("distances: clip has " + std::to_string(n) +
                     " frames, model expects " +
                     std::to_string(config_.frames));
  }
  for (const auto& c : candidates) {
    if (!c.same_geometry(reference)) {
      throw ShapeError("distances: clip '" + c.id + "' " +
                       shape_str(c.frames.shape()) +
                       " does not match reference " +
                       shape_str(reference.frames.shape()));
    }
  }
  const int64_t k = static_cast<int64_t>(candidates.size());
  const size_t per_clip = reference.frames.data().size();
  std::vector<float> stacked;
  stacked.reserve(per_clip * (k + 1));
  for (const auto& c : candidates) {
    stacked.insert(stacked.end(), c.frames.data().begin(),
                   c.frames.data().end());
  }
  stacked.insert(stacked.end(), reference.frames.data().begin(),
                 reference.frames.data().end());
  TensorF frames = TensorF::from_vector(
      {(k + 1) * n, 3, reference.height(), reference.width()},
      std::move(stacked));

  const std::vector<TensorF> levels =
      extract(frames, pyramid_, config_.pyramid);
  std::vector<TensorF> outputs;
  for (size_t l = 0; l < levels.size(); ++l) {
    TensorF folded = fold_frames(levels[l], n);
    TensorF feats = ops::slice(folded, 0, 0, k);
    TensorF ref = ops::slice(folded, 0, k, 1);
    if (k > 1) ref = ops::concat(std::vector<TensorF>(k, ref), 0);
    outputs.push_back(st_level(feats, ref, heads_[l], config_.st));
  }
  return pool_distance(outputs);
}

double score(const VideoClip& clip, const VideoClip& reference,
             const MetricModel& model) {
  NoGradGuard no_grad;
  return model.distances(std::span<const VideoClip>(&clip, 1), reference)
      .d.data()[0];
}

double preference_prob(double d_a, double d_b) {
  const double x = d_a - d_b;
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double bce_loss(double p, double h) {
  if (!(h >= 0.0 && h <= 1.0)) {
    throw std::domain_error("bce_loss: judgment " + std::to_string(h) +
                            " outside [0, 1]");
  }
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return -(h * std::log(q) + (1.0 - h) * std::log(1.0 - q));
}

TensorF siamese_loss(const TensorF& d_a, const TensorF& d_b, double h) {
  if (!(h >= 0.0 && h <= 1.0)) {
    throw std::domain_error("siamese_loss: judgment " + std::to_string(h) +
                            " outside [0, 1]");
  }
  // Clamping the logit is the probability clamp; log p and log(1 - p) are
  // both taken as log-sigmoids so a swapped pair evaluates the same terms.
  const float bound =
      static_cast<float>(std::log((1.0 - kProbClamp) / kProbClamp));
  TensorF x = ops::clamp(ops::sub(d_a, d_b), -bound, bound);
  TensorF log_p = ops::log(ops::sigmoid(x));
  TensorF log_q = ops::log(ops::sigmoid(ops::scale(x, -1.0f)));
  TensorF mixed = ops::add(ops::scale(log_p, static_cast<float>(h)),
                           ops::scale(log_q, static_cast<float>(1.0 - h)));
  return ops::scale(mixed, -1.0f);
}

namespace {

constexpr const char* kMetaConfig = "meta.config";
constexpr const char* kMetaSlope = "meta.leaky_slope";

template <typename T>
WeightRecord make_record(const std::string& name, DType dtype,
                         const std::vector<uint32_t>& dims,
                         std::span<const T> values) {
  WeightRecord r;
  r.name = name;
  r.dtype = dtype;
  r.dims = dims;
  r.bytes.resize(values.size_bytes());
  std::memcpy(r.bytes.data(), values.data(), values.size_bytes());
  return r;
}

}  // namespace

void save_model(const MetricModel& model, const std::filesystem::path& path) {
  const ModelConfig& c = model.config();
  std::vector<int32_t> meta = {c.frames,
                               c.st.embed_dim,
                               c.st.heads,
                               c.st.window,
                               c.st.use_layer_norm ? 1 : 0,
                               c.st.blocks_per_level,
                               c.st.mlp_ratio};
  for (int ch : c.pyramid.channels) meta.push_back(ch);
  std::vector<WeightRecord> records;
  records.push_back(make_record<int32_t>(
      kMetaConfig, DType::kInt32, {static_cast<uint32_t>(meta.size())}, meta));
  const float slope = c.pyramid.slope;
  records.push_back(make_record<float>(kMetaSlope, DType::kFloat32, {1},
                                       std::span<const float>(&slope, 1)));
  for (const auto& [name, t] : model.named_parameters()) {
    std::vector<uint32_t> dims;
    for (int64_t d : t.shape()) dims.push_back(static_cast<uint32_t>(d));
    records.push_back(make_record<float>(name, DType::kFloat32, dims, t.data()));
  }
  write_weights_file(path, records, kWeightsFormatVersion);
}

MetricModel load_model(const std::filesystem::path& path) {
  uint16_t version = 0;
  std::vector<WeightRecord> records = read_weights_file(path, &version);
  if (version != kWeightsFormatVersion) {
    throw WeightsFormatError("unsupported weights format version " +
                             std::to_string(version));
  }
  std::map<std::string, const WeightRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  auto find = [&](const std::string& name) -> const WeightRecord& {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw WeightsFormatError("weights file lacks tensor '" + name + "'");
    }
    return *it->second;
  };

  const std::vector<int32_t> meta = find(kMetaConfig).values<int32_t>();
  if (meta.size() < 8) throw WeightsFormatError("malformed model config");
  ModelConfig config;
  config.frames = meta[0];
  config.st.embed_dim = meta[1];
  config.st.heads = meta[2];
  config.st.window = meta[3];
  config.st.use_layer_norm = meta[4] != 0;
  config.st.blocks_per_level = meta[5];
  config.st.mlp_ratio = meta[6];
  config.pyramid.channels.assign(meta.begin() + 7, meta.end());
  config.pyramid.slope = find(kMetaSlope).values<float>().at(0);

  MetricModel model(config, 0);
  for (auto& [name, t] : model.named_parameters()) {
    const WeightRecord& r = find(name);
    std::vector<float> values = r.values<float>();
    Shape dims(r.dims.begin(), r.dims.end());
    if (dims != t.shape()) {
      throw WeightsFormatError("tensor '" + name + "' has shape " +
                               shape_str(dims) + ", expected " +
                               shape_str(t.shape()));
    }
    TensorF handle = t;
    std::copy(values.begin(), values.end(), handle.mutable_data().begin());
  }
  return model;
}

}  // namespace vfiqa
