#include <fstream>
#include <iostream>
#include <limits>
#include <string>

#include "CLI11.hpp"
#include "httplib.h"
#include "vfiqa/annotation.h"
#include "vfiqa/dataset.h"
#include "vfiqa/eval.h"
#include "vfiqa/metric_model.h"
#include "vfiqa/server.h"
#include "vfiqa/training.h"

using namespace vfiqa;

namespace {

double distance_with(const std::string& metric, const VideoClip& clip,
                     const VideoClip& ref, const MetricModel* model) {
  if (metric == "psnr") return -psnr(clip, ref);
  if (metric == "ssim") return 1.0 - ssim(clip, ref);
  const int64_t frames = model->config().frames;
  if (clip.frame_count() == frames) return score(clip, ref, *model);
  return sliding_window_score(clip, ref, *model, frames, 1);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vfiqa: perceptual quality metric for interpolated video"};
  app.require_subcommand(1);

  std::string a_dir, b_dir, ref_dir, model_path, manifest, out_path, csv;
  int64_t stride = 1, patch = 256;
  double threshold = kAutoThreshold;
  int port = 8080;
  std::string host = "127.0.0.1", log_path, metric = "model";
  TrainConfig tc;
  int frames = 12;

  auto* score_cmd = app.add_subcommand("score", "distance of a clip to its reference");
  score_cmd->add_option("--a", a_dir, "clip directory")->required();
  score_cmd->add_option("--ref", ref_dir, "reference clip directory")->required();
  score_cmd->add_option("--model", model_path, "weights file")->required();
  score_cmd->add_option("--stride", stride, "sliding-window stride for long clips");

  auto* train_cmd = app.add_subcommand("train", "train on a labeled manifest");
  train_cmd->add_option("--manifest", manifest)->required();
  train_cmd->add_option("--out", out_path, "weights file to write")->required();
  train_cmd->add_option("--seed", tc.seed);
  train_cmd->add_option("--epochs", tc.epochs);
  train_cmd->add_option("--batch", tc.batch);
  train_cmd->add_option("--lr", tc.lr);
  train_cmd->add_option("--frames", frames, "frames per clip");
  train_cmd->add_option("--init", model_path, "start from these weights");

  auto* eval_cmd = app.add_subcommand("eval", "2AFC over a labeled manifest");
  eval_cmd->add_option("--manifest", manifest)->required();
  eval_cmd->add_option("--model", model_path);
  eval_cmd->add_option("--metric", metric, "model, psnr or ssim")
      ->check(CLI::IsMember({"model", "psnr", "ssim"}));
  eval_cmd->add_option("--json", out_path, "also write results here");

  auto* corr_cmd = app.add_subcommand("corr", "SROCC/PLCC/KROCC from a MOS CSV");
  corr_cmd->add_option("--csv", csv)->required();
  corr_cmd->add_option("--json", out_path, "also write results here");

  auto* auto_cmd = app.add_subcommand("annotate-auto",
                                      "label unlabeled triplets by a reference metric");
  auto_cmd->add_option("--manifest", manifest)->required();
  auto_cmd->add_option("--threshold", threshold);
  auto_cmd->add_option("--out", out_path, "output manifest (default: in place)");

  auto* patch_cmd = app.add_subcommand("select-patch", "highest-error patch location");
  patch_cmd->add_option("--a", a_dir)->required();
  patch_cmd->add_option("--b", b_dir)->required();
  patch_cmd->add_option("--size", patch);
  patch_cmd->add_option("--stride", stride);

  auto* serve_cmd = app.add_subcommand("serve", "annotation HTTP service");
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--manifest", manifest)->required();
  serve_cmd->add_option("--log", log_path, "judgment log (default: <manifest>.judgments.jsonl)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*score_cmd) {
      const MetricModel model = load_model(model_path);
      const VideoClip a = load_clip(a_dir), ref = load_clip(ref_dir);
      const int64_t n = model.config().frames;
      const double d = a.frame_count() == n
                           ? score(a, ref, model)
                           : sliding_window_score(a, ref, model, n, stride);
      std::cout.precision(std::numeric_limits<double>::max_digits10);
      std::cout << d << "\n";
    } else if (*train_cmd) {
      tc.log = &std::cerr;
      const auto triplets = read_manifest(manifest);
      const auto examples = load_examples(triplets, frames, &std::cerr);
      if (examples.empty()) {
        std::cerr << "error: no usable labeled triplets in " << manifest << "\n";
        return 1;
      }
      ModelConfig mc;
      mc.frames = frames;
      MetricModel model =
          model_path.empty() ? MetricModel(mc, tc.seed) : load_model(model_path);
      const TrainReport report = train(model, examples, tc);
      save_model(model, out_path);
      std::cerr << "trained " << report.steps << " steps on "
                << examples.size() << " triplets; wrote " << out_path << "\n";
    } else if (*eval_cmd) {
      std::optional<MetricModel> model;
      if (metric == "model") {
        if (model_path.empty()) {
          std::cerr << "error: --model is required for --metric model\n";
          return 1;
        }
        model = load_model(model_path);
      }
      std::vector<PairedResult> results;
      for (const auto& t : read_manifest(manifest)) {
        if (!t.h) continue;
        try {
          const MetricModel* m = model ? &*model : nullptr;
          const VideoClip a = load_clip(t.a), b = load_clip(t.b),
                          ref = load_clip(t.ref);
          results.push_back({t.id, distance_with(metric, a, ref, m),
                             distance_with(metric, b, ref, m), *t.h});
        } catch (const std::exception& e) {
          std::cerr << "warning: skipping triplet '" << t.id << "': " << e.what()
                    << "\n";
        }
      }
      EvalResults r;
      if (!results.empty()) r.two_afc = two_afc(results);
      const std::string json = results_json(r);
      std::cout << json << "\n";
      if (!out_path.empty()) std::ofstream(out_path) << json << "\n";
      if (results.empty()) {
        std::cerr << "error: no labeled triplets could be scored\n";
        return 1;
      }
    } else if (*corr_cmd) {
      const auto report = rank_correlations(read_mos_csv(csv), &std::cerr);
      EvalResults r;
      r.srocc = report.mean.srocc;
      r.plcc = report.mean.plcc;
      r.krocc = report.mean.krocc;
      r.groups = report.groups.size();
      const std::string json = results_json(r);
      std::cout << json << "\n";
      if (!out_path.empty()) std::ofstream(out_path) << json << "\n";
    } else if (*auto_cmd) {
      auto triplets = read_manifest(manifest);
      const BlurPyramidMetric ref_metric;
      int labeled = 0, deferred = 0;
      for (auto& t : triplets) {
        if (t.source != TripletSource::kUnlabeled) continue;
        const auto h = auto_annotate(load_clip(t.a), load_clip(t.b),
                                     load_clip(t.ref), ref_metric, threshold);
        if (h) {
          t.h = *h;
          t.source = TripletSource::kAuto;
          ++labeled;
        } else {
          ++deferred;
        }
      }
      write_manifest(out_path.empty() ? manifest : out_path, triplets);
      std::cout << "{\"labeled\": " << labeled << ", \"deferred\": " << deferred
                << "}\n";
    } else if (*patch_cmd) {
      const PatchLocation p =
          select_patch(load_clip(a_dir), load_clip(b_dir), patch, stride);
      std::cout << "{\"row\": " << p.row << ", \"col\": " << p.col << "}\n";
    } else if (*serve_cmd) {
      if (log_path.empty()) log_path = manifest + ".judgments.jsonl";
      AnnotationService service(manifest, log_path);
      httplib::Server server;
      install_routes(server, service);
      std::cerr << "serving " << manifest << " on http://" << host << ":"
                << port << "\n";
      if (!server.listen(host, port)) {
        std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
