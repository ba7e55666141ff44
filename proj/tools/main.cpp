// Command-line front end: anonymize | evaluate | synth | inspect.
// Exit codes: 0 success, 1 config/parse error, 2 run finished with
// per-frame errors recorded in the manifest.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "mvanon/errors.hpp"
#include "mvanon/pipeline.hpp"
#include "mvanon/synth.hpp"
#include "vendor/CLI11.hpp"

namespace {

int cmd_anonymize(const std::string& config_path, bool faithful, int workers) {
  namespace pl = mvanon::pipeline;
  pl::PipelineConfig cfg = pl::load_config(config_path);
  if (faithful) cfg.faithful = true;
  if (workers > 0) cfg.workers = workers;
  const pl::RunManifest manifest = pl::run_anonymize(cfg);

  int faces = 0;
  for (const auto& frame : manifest.frames) faces += static_cast<int>(frame.faces.size());
  const int errors = manifest.error_count();
  std::printf("processed %zu frames, %d face-camera records, %d errors\n",
              manifest.frames.size(), faces, errors);
  if (errors > 0) {
    std::printf("degradations recorded in %s\n",
                (cfg.output_root / "manifest.json").string().c_str());
    return 2;
  }
  return 0;
}

int cmd_evaluate(const std::string& detections, const std::string& annotations,
                 double iou, const std::string& out_path, bool faithful) {
  namespace pl = mvanon::pipeline;
  const pl::EvalReport report =
      pl::run_evaluate(detections, annotations, iou, /*ignore_occluded=*/!faithful);
  const std::string text = pl::format_report(report);
  std::fputs(text.c_str(), stdout);
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw mvanon::IoError("cannot write report to " + out_path);
    out << text;
  }
  return 0;
}

int cmd_synth(const mvanon::synth::SynthSpec& spec, const std::string& config_out) {
  mvanon::synth::generate(spec);
  std::printf("fixture written to %s\n", spec.out_root.string().c_str());
  if (!config_out.empty()) {
    namespace pl = mvanon::pipeline;
    pl::PipelineConfig cfg;
    cfg.calibration = spec.out_root / "calibration.json";
    cfg.color_root = spec.out_root / "color";
    cfg.depth_root = spec.out_root / "depth";
    cfg.keypoints_root = spec.out_root / "keypoints";
    cfg.output_root = spec.out_root / "out";
    pl::save_config(cfg, config_out);
    std::printf("pipeline config written to %s\n", config_out.c_str());
  }
  return 0;
}

int cmd_inspect(const std::string& config_path, int frame, const std::string& out_dir) {
  namespace pl = mvanon::pipeline;
  const pl::PipelineConfig cfg = pl::load_config(config_path);
  pl::run_inspect(cfg, frame, out_dir);
  std::printf("diagnostics written to %s\n", out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-camera rgb-d face anonymization toolkit"};
  app.require_subcommand(1);

  // anonymize
  std::string config_path;
  bool faithful = false;
  int workers_override = 0;
  CLI::App* anonymize = app.add_subcommand("anonymize", "run the anonymization pipeline");
  anonymize->add_option("--config", config_path, "pipeline config JSON")->required();
  anonymize->add_flag("--faithful", faithful,
                      "ablation mode: disable the per-pixel depth clip");
  anonymize->add_option("--workers", workers_override, "override worker count");

  // evaluate
  std::string detections, annotations, report_out;
  double iou_threshold = 0.4;
  bool eval_faithful = false;
  CLI::App* evaluate = app.add_subcommand("evaluate", "score detections against ground truth");
  evaluate->add_option("--detections", detections, "detections file")->required();
  evaluate->add_option("--annotations", annotations, "annotations file")->required();
  evaluate->add_option("--iou", iou_threshold, "IoU threshold (default 0.4)");
  evaluate->add_option("--out", report_out, "also write the report to this file");
  evaluate->add_flag("--faithful", eval_faithful,
                     "ablation mode: score fully_occluded annotations as ordinary ones");

  // synth
  mvanon::synth::SynthSpec spec;
  std::string synth_out, synth_config_out;
  bool no_occluder = false;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic fixture");
  synth->add_option("--out", synth_out, "output tree root")->required();
  synth->add_option("--seed", spec.seed, "random seed (default 1)");
  synth->add_option("--cameras", spec.cameras, "camera count (default 4)");
  synth->add_option("--width", spec.width, "image width (default 640)");
  synth->add_option("--height", spec.height, "image height (default 480)");
  synth->add_option("--persons", spec.persons, "person count (default 3)");
  synth->add_option("--frames", spec.frames, "frame count (default 50)");
  synth->add_option("--noise", spec.keypoint_noise_px, "keypoint noise stddev, px");
  synth->add_option("--occluder-camera", spec.occluder_camera,
                    "camera index the occluder slides in front of (default 1)");
  synth->add_flag("--no-occluder", no_occluder, "disable the moving occluder plane");
  synth->add_option("--config-out", synth_config_out,
                    "write a ready pipeline config for the tree");

  // inspect
  std::string inspect_config, inspect_out;
  int inspect_frame = 0;
  CLI::App* inspect = app.add_subcommand("inspect", "dump single-frame diagnostics");
  inspect->add_option("--config", inspect_config, "pipeline config JSON")->required();
  inspect->add_option("--frame", inspect_frame, "frame index")->required();
  inspect->add_option("--out", inspect_out, "diagnostics output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (anonymize->parsed()) return cmd_anonymize(config_path, faithful, workers_override);
    if (evaluate->parsed())
      return cmd_evaluate(detections, annotations, iou_threshold, report_out,
                          eval_faithful);
    if (synth->parsed()) {
      spec.occluder = !no_occluder;
      spec.out_root = synth_out;
      return cmd_synth(spec, synth_config_out);
    }
    if (inspect->parsed()) return cmd_inspect(inspect_config, inspect_frame, inspect_out);
  } catch (const mvanon::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
  return 1;
}
