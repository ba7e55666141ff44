#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mvanon/eval.hpp"
#include "mvanon/registration.hpp"
#include "mvanon/render.hpp"

namespace mvanon::pipeline {

// Full run description. Loaded from a JSON file; every field except the
// input/output roots has a default matching the module documentation.
struct PipelineConfig {
    std::filesystem::path calibration;
    std::filesystem::path color_root;
    std::filesystem::path depth_root;
    std::filesystem::path keypoints_root;  // exactly one of these two
    std::filesystem::path poses3d_root;    // pose sources must be set
    std::filesystem::path template_obj;       // both empty: built-in template
    std::filesystem::path template_manifest;
    std::string texture = "masked";        // masked | maskless
    std::string backend = "mesh_poisson";  // | blacken | pixelate_8 | blur_61
    std::filesystem::path output_root;

    // pose
    double epipolar_gate_px = 20.0;
    double min_confidence = 0.3;
    double track_gate_m = 0.5;
    int track_max_gap = 15;
    int smooth_window = 11;
    int max_interp_gap = 15;

    // fusion + registration; the refinement stage defaults to point-to-plane
    int fuse_stride = 2;
    double crop_radius = 0.25;
    RegistrationConfig em;
    RegistrationConfig icp{.metric = RegistrationMetric::point_to_plane};

    // visibility + render + blend
    double tau = 0.05;
    double quorum = 0.5;
    BlendConfig blend;

    int first_frame = 0;
    int frame_count = -1;  // -1: every frame found under color_root
    int workers = 1;
    std::uint64_t seed = 0;
    bool faithful = false;  // ablation: no per-pixel depth clip, no ignore-regions

    void validate() const;  // throws ConfigInvalid; checks referenced paths exist
};

PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const PipelineConfig& cfg, const std::filesystem::path& path);

struct FaceRecord {
    int person_id = -1;
    std::string camera_id;
    std::string verdict;  // visibility verdict, or "skipped"/"degenerate"
    std::optional<BBox2D> box;
    double registration_residual = 0.0;
    bool registration_converged = false;
    bool solver_diverged = false;
};

struct FrameRecord {
    int frame_index = -1;
    std::vector<std::string> inputs;  // files consumed
    std::vector<FaceRecord> faces;
    std::vector<std::string> errors;  // degradations, frame kept
};

// Wall-clock stage split for one frame, seconds. The four stages tile the
// whole frame body, so their sum tracks the frame wall time within 5%.
struct StageTimings {
    int frame_index = -1;
    double pose_s = 0, registration_s = 0, render_s = 0, blend_s = 0;
    double wall_s = 0;
};

struct RunManifest {
    std::vector<FrameRecord> frames;
    std::vector<StageTimings> timings;  // parallel to frames

    int error_count() const;
};

// Two passes: (1) ingest poses for the whole sequence, associate, lift,
// track, smooth; (2) per frame — fuse depth, anchor + refine + extract per
// person, visibility + render + blend per camera, write outputs. A frame's
// failure is recorded and the run continues. Writes anonymized color trees,
// detections.txt, manifest.json and timings.json under output_root.
RunManifest run_anonymize(const PipelineConfig& cfg);

// Single-frame diagnostics dump into out_dir: lifted 3D poses (poses.txt),
// registration residuals (registration.txt), per-camera visibility verdicts
// (verdicts.txt), and per-camera overlay images with probe projections and
// face boxes drawn on the original frames.
void run_inspect(const PipelineConfig& cfg, int frame_index,
                 const std::filesystem::path& out_dir);

struct EvalReport {
    MatchOutcome matching;
    HolisticResult holistic;
    int detection_count = 0;
    int annotation_count = 0;
    bool no_detections = false;  // precision reported as 0 by convention
    double iou_threshold = 0.0;
};

// Pure scoring: parses both files, matches, and aggregates. Parse failures
// throw; metric values never do. ignore_occluded off treats fully_occluded
// annotations as ordinary ones (the faithful-mode ablation).
EvalReport run_evaluate(const std::filesystem::path& detections_path,
                        const std::filesystem::path& annotations_path,
                        double iou_threshold = 0.4, bool ignore_occluded = true);

std::string format_report(const EvalReport& report);

}  // namespace mvanon::pipeline
