#include "mvanon/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mvanon/errors.hpp"
#include "mvanon/facemesh.hpp"
#include "mvanon/io.hpp"
#include "mvanon/parallel.hpp"
#include "mvanon/pointcloud.hpp"
#include "mvanon/pose.hpp"
#include "vendor/json.hpp"

namespace mvanon::pipeline {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

[[noreturn]] void config_fail(const std::string& what) { throw ConfigInvalid(what); }

// Unknown keys are configuration mistakes, not extensions.
void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& scope) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      config_fail("unknown key '" + key + "' in " + scope);
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj[key].get<T>();
  } catch (const json::exception&) {
    config_fail(std::string("bad value for '") + key + "'");
  }
}

void read_path(const json& obj, const char* key, std::filesystem::path& out) {
  std::string s = out.string();
  read_field(obj, key, s);
  out = s;
}

void read_registration_block(const json& obj, const char* key, RegistrationConfig& cfg) {
  if (!obj.contains(key)) return;
  const json& block = obj[key];
  check_keys(block,
             {"max_iterations", "sigma_init", "sigma_min", "sigma_decay",
              "outlier_weight", "convergence_tol_translation",
              "convergence_tol_rotation_deg", "metric"},
             std::string("registration.") + key);
  read_field(block, "max_iterations", cfg.max_iterations);
  read_field(block, "sigma_init", cfg.sigma_init);
  read_field(block, "sigma_min", cfg.sigma_min);
  read_field(block, "sigma_decay", cfg.sigma_decay);
  read_field(block, "outlier_weight", cfg.outlier_weight);
  read_field(block, "convergence_tol_translation", cfg.convergence_tol_translation);
  if (block.contains("convergence_tol_rotation_deg")) {
    double deg = 0;
    read_field(block, "convergence_tol_rotation_deg", deg);
    cfg.convergence_tol_rotation = deg * kPi / 180.0;
  }
  if (block.contains("metric")) {
    std::string metric;
    read_field(block, "metric", metric);
    if (metric == "point_to_point")
      cfg.metric = RegistrationMetric::point_to_point;
    else if (metric == "point_to_plane")
      cfg.metric = RegistrationMetric::point_to_plane;
    else
      config_fail("unknown registration metric '" + metric + "'");
  }
}

}  // namespace

void PipelineConfig::validate() const {
  const auto must_exist = [](const std::filesystem::path& p, const char* what) {
    if (p.empty()) config_fail(std::string(what) + " not set");
    if (!std::filesystem::exists(p))
      config_fail(std::string(what) + " does not exist: " + p.string());
  };
  must_exist(calibration, "calibration");
  must_exist(color_root, "color_root");
  must_exist(depth_root, "depth_root");
  if (keypoints_root.empty() == poses3d_root.empty())
    config_fail("exactly one of keypoints_root / poses3d_root must be set");
  must_exist(keypoints_root.empty() ? poses3d_root : keypoints_root, "pose source root");
  if (template_obj.empty() != template_manifest.empty())
    config_fail("template_obj and template_manifest must be set together");
  if (!template_obj.empty()) {
    must_exist(template_obj, "template_obj");
    must_exist(template_manifest, "template_manifest");
  }
  if (texture != "masked" && texture != "maskless")
    config_fail("texture must be 'masked' or 'maskless'");
  if (backend != "mesh_poisson" && backend != "blacken" && backend != "pixelate_8" &&
      backend != "blur_61")
    config_fail("unknown backend '" + backend + "'");
  if (output_root.empty()) config_fail("output_root not set");

  if (epipolar_gate_px <= 0) config_fail("epipolar_gate_px must be positive");
  if (min_confidence < 0 || min_confidence > 1)
    config_fail("min_confidence must be in [0, 1]");
  if (track_gate_m <= 0) config_fail("track_gate_m must be positive");
  if (track_max_gap < 0) config_fail("track_max_gap must be non-negative");
  if (smooth_window < 1) config_fail("smooth_window must be at least 1");
  if (max_interp_gap < 0) config_fail("max_interp_gap must be non-negative");
  if (fuse_stride < 1) config_fail("fuse_stride must be at least 1");
  if (crop_radius <= 0) config_fail("crop_radius must be positive");
  em.validate();
  icp.validate();
  if (tau <= 0) config_fail("tau must be positive");
  if (quorum <= 0 || quorum > 1) config_fail("quorum must be in (0, 1]");
  if (blend.alpha < 0 || blend.alpha > 1) config_fail("blend alpha must be in [0, 1]");
  if (blend.target_preblur < 0 ||
      (blend.target_preblur > 0 && blend.target_preblur % 2 == 0))
    config_fail("target_preblur must be 0 or an odd kernel size");
  if (blend.solver_tol <= 0) config_fail("solver_tol must be positive");
  if (blend.solver_max_iters < 1) config_fail("solver_max_iters must be at least 1");
  if (first_frame < 0) config_fail("first_frame must be non-negative");
  if (frame_count < -1) config_fail("frame_count must be -1 or non-negative");
  if (workers < 1) config_fail("workers must be at least 1");
}

PipelineConfig load_config(const std::filesystem::path& path) {
  json doc;
  {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string() + ": cannot open");
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }
  check_keys(doc,
             {"calibration", "color_root", "depth_root", "keypoints_root",
              "poses3d_root", "template_obj", "template_manifest", "texture",
              "backend", "output_root", "pose", "fusion", "registration",
              "visibility", "blend", "first_frame", "frame_count", "workers",
              "seed", "faithful"},
             "config");

  PipelineConfig cfg;
  read_path(doc, "calibration", cfg.calibration);
  read_path(doc, "color_root", cfg.color_root);
  read_path(doc, "depth_root", cfg.depth_root);
  read_path(doc, "keypoints_root", cfg.keypoints_root);
  read_path(doc, "poses3d_root", cfg.poses3d_root);
  read_path(doc, "template_obj", cfg.template_obj);
  read_path(doc, "template_manifest", cfg.template_manifest);
  read_field(doc, "texture", cfg.texture);
  read_field(doc, "backend", cfg.backend);
  read_path(doc, "output_root", cfg.output_root);
  read_field(doc, "first_frame", cfg.first_frame);
  read_field(doc, "frame_count", cfg.frame_count);
  read_field(doc, "workers", cfg.workers);
  read_field(doc, "seed", cfg.seed);
  read_field(doc, "faithful", cfg.faithful);

  if (doc.contains("pose")) {
    const json& block = doc["pose"];
    check_keys(block,
               {"epipolar_gate_px", "min_confidence", "track_gate_m", "track_max_gap",
                "smooth_window", "max_interp_gap"},
               "pose");
    read_field(block, "epipolar_gate_px", cfg.epipolar_gate_px);
    read_field(block, "min_confidence", cfg.min_confidence);
    read_field(block, "track_gate_m", cfg.track_gate_m);
    read_field(block, "track_max_gap", cfg.track_max_gap);
    read_field(block, "smooth_window", cfg.smooth_window);
    read_field(block, "max_interp_gap", cfg.max_interp_gap);
  }
  if (doc.contains("fusion")) {
    check_keys(doc["fusion"], {"stride"}, "fusion");
    read_field(doc["fusion"], "stride", cfg.fuse_stride);
  }
  if (doc.contains("registration")) {
    const json& block = doc["registration"];
    check_keys(block, {"crop_radius", "em", "icp"}, "registration");
    read_field(block, "crop_radius", cfg.crop_radius);
    read_registration_block(block, "em", cfg.em);
    read_registration_block(block, "icp", cfg.icp);
  }
  if (doc.contains("visibility")) {
    const json& block = doc["visibility"];
    check_keys(block, {"tau", "quorum"}, "visibility");
    read_field(block, "tau", cfg.tau);
    read_field(block, "quorum", cfg.quorum);
  }
  if (doc.contains("blend")) {
    const json& block = doc["blend"];
    check_keys(block, {"alpha", "target_preblur", "solver_tol", "solver_max_iters"},
               "blend");
    read_field(block, "alpha", cfg.blend.alpha);
    read_field(block, "target_preblur", cfg.blend.target_preblur);
    read_field(block, "solver_tol", cfg.blend.solver_tol);
    read_field(block, "solver_max_iters", cfg.blend.solver_max_iters);
  }
  return cfg;
}

void save_config(const PipelineConfig& cfg, const std::filesystem::path& path) {
  json doc;
  doc["calibration"] = cfg.calibration.string();
  doc["color_root"] = cfg.color_root.string();
  doc["depth_root"] = cfg.depth_root.string();
  if (!cfg.keypoints_root.empty()) doc["keypoints_root"] = cfg.keypoints_root.string();
  if (!cfg.poses3d_root.empty()) doc["poses3d_root"] = cfg.poses3d_root.string();
  if (!cfg.template_obj.empty()) {
    doc["template_obj"] = cfg.template_obj.string();
    doc["template_manifest"] = cfg.template_manifest.string();
  }
  doc["texture"] = cfg.texture;
  doc["backend"] = cfg.backend;
  doc["output_root"] = cfg.output_root.string();
  doc["pose"] = {{"epipolar_gate_px", cfg.epipolar_gate_px},
                 {"min_confidence", cfg.min_confidence},
                 {"track_gate_m", cfg.track_gate_m},
                 {"track_max_gap", cfg.track_max_gap},
                 {"smooth_window", cfg.smooth_window},
                 {"max_interp_gap", cfg.max_interp_gap}};
  doc["fusion"] = {{"stride", cfg.fuse_stride}};
  const auto reg_block = [](const RegistrationConfig& r) {
    return json{{"max_iterations", r.max_iterations},
                {"sigma_init", r.sigma_init},
                {"sigma_min", r.sigma_min},
                {"sigma_decay", r.sigma_decay},
                {"outlier_weight", r.outlier_weight},
                {"convergence_tol_translation", r.convergence_tol_translation},
                {"convergence_tol_rotation_deg",
                 r.convergence_tol_rotation * 180.0 / kPi},
                {"metric", r.metric == RegistrationMetric::point_to_point
                               ? "point_to_point"
                               : "point_to_plane"}};
  };
  doc["registration"] = {{"crop_radius", cfg.crop_radius},
                         {"em", reg_block(cfg.em)},
                         {"icp", reg_block(cfg.icp)}};
  doc["visibility"] = {{"tau", cfg.tau}, {"quorum", cfg.quorum}};
  doc["blend"] = {{"alpha", cfg.blend.alpha},
                  {"target_preblur", cfg.blend.target_preblur},
                  {"solver_tol", cfg.blend.solver_tol},
                  {"solver_max_iters", cfg.blend.solver_max_iters}};
  doc["first_frame"] = cfg.first_frame;
  doc["frame_count"] = cfg.frame_count;
  doc["workers"] = cfg.workers;
  doc["seed"] = cfg.seed;
  doc["faithful"] = cfg.faithful;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError(path.string() + ": cannot open for writing");
  out << doc.dump(2) << "\n";
}

int RunManifest::error_count() const {
  int n = 0;
  for (const FrameRecord& f : frames) n += static_cast<int>(f.errors.size());
  return n;
}

namespace {

// Frame indices present under color_root/<first camera>, clipped to the
// configured range. The slot list is contiguous: holes become frames whose
// missing inputs get recorded as errors rather than silently skipped.
std::vector<int> discover_frames(const PipelineConfig& cfg, const CameraRig& rig) {
  const std::filesystem::path dir = cfg.color_root / rig.cameras.front().id;
  std::set<int> found;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    const std::string stem = entry.path().stem().string();
    if (entry.path().extension() != ".ppm" || stem.size() != 6) continue;
    if (stem.find_first_not_of("0123456789") != std::string::npos) continue;
    const int idx = std::stoi(stem);
    if (idx >= cfg.first_frame) found.insert(idx);
  }
  if (ec) config_fail("cannot list " + dir.string() + ": " + ec.message());
  if (found.empty())
    config_fail("no frames found under " + dir.string() + " at or after frame " +
                std::to_string(cfg.first_frame));
  const int lo = *found.begin();
  int hi = *found.rbegin();
  if (cfg.frame_count >= 0) hi = std::min(hi, lo + cfg.frame_count - 1);
  std::vector<int> frames;
  for (int i = lo; i <= hi; ++i) frames.push_back(i);
  return frames;
}

struct PersonInFrame {
  int person_id = -1;
  Pose3D pose;
};

json box_json(const std::optional<BBox2D>& box) {
  if (!box) return nullptr;
  return json::array({box->x_min, box->y_min, box->width(), box->height()});
}

void write_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
  json doc;
  doc["frames"] = json::array();
  for (const FrameRecord& rec : manifest.frames) {
    json f;
    f["frame"] = rec.frame_index;
    f["inputs"] = rec.inputs;
    f["errors"] = rec.errors;
    f["faces"] = json::array();
    for (const FaceRecord& face : rec.faces) {
      f["faces"].push_back({{"person", face.person_id},
                            {"camera", face.camera_id},
                            {"verdict", face.verdict},
                            {"box", box_json(face.box)},
                            {"registration_residual", face.registration_residual},
                            {"registration_converged", face.registration_converged},
                            {"solver_diverged", face.solver_diverged}});
    }
    doc["frames"].push_back(std::move(f));
  }
  std::ofstream out(path, std::ios::trunc);
  out << doc.dump(2) << "\n";
}

void write_timings(const RunManifest& manifest, const std::filesystem::path& path) {
  json doc;
  doc["frames"] = json::array();
  for (const StageTimings& tm : manifest.timings) {
    doc["frames"].push_back({{"frame", tm.frame_index},
                             {"pose_s", tm.pose_s},
                             {"registration_s", tm.registration_s},
                             {"render_s", tm.render_s},
                             {"blend_s", tm.blend_s},
                             {"wall_s", tm.wall_s}});
  }
  std::ofstream out(path, std::ios::trunc);
  out << doc.dump(2) << "\n";
}

// Pass 1: per-frame 3D poses. Sets per-frame pose timings as a side effect.
std::vector<std::vector<Pose3D>> ingest_poses(const PipelineConfig& cfg,
                                              const CameraRig& rig,
                                              const std::vector<int>& frames,
                                              RunManifest& manifest) {
  std::vector<std::vector<Pose3D>> per_frame(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto t0 = Clock::now();
    FrameRecord& rec = manifest.frames[i];
    const std::string fname = io::frame_name(frames[i]);
    if (!cfg.keypoints_root.empty()) {
      std::vector<std::vector<Pose2D>> dets(rig.cameras.size());
      for (std::size_t c = 0; c < rig.cameras.size(); ++c) {
        const std::filesystem::path path =
            cfg.keypoints_root / rig.cameras[c].id / (fname + ".txt");
        if (!std::filesystem::exists(path)) {
          rec.errors.push_back("missing keypoints: " + rig.cameras[c].id + "/" +
                               fname + ".txt");
          continue;
        }
        try {
          dets[c] = io::load_keypoints(path, rig.cameras[c]);
          rec.inputs.push_back("keypoints/" + rig.cameras[c].id + "/" + fname + ".txt");
        } catch (const Error& e) {
          rec.errors.push_back(std::string("keypoints parse: ") + e.what());
        }
      }
      const auto groups =
          associate_across_views(dets, rig, cfg.epipolar_gate_px, cfg.min_confidence);
      for (const auto& group : groups) {
        Pose3D pose = lift_to_3d(group, cfg.min_confidence);
        pose.frame_index = frames[i];
        if (pose.valid_count() > 0) per_frame[i].push_back(pose);
      }
    } else {
      const std::filesystem::path path = cfg.poses3d_root / (fname + ".txt");
      if (!std::filesystem::exists(path)) {
        rec.errors.push_back("missing 3d poses: " + fname + ".txt");
      } else {
        try {
          per_frame[i] = io::load_poses3d(path, frames[i]);
          rec.inputs.push_back("poses3d/" + fname + ".txt");
        } catch (const Error& e) {
          rec.errors.push_back(std::string("poses3d parse: ") + e.what());
        }
      }
    }
    manifest.timings[i].pose_s = seconds_between(t0, Clock::now());
  }
  return per_frame;
}

}  // namespace

RunManifest run_anonymize(const PipelineConfig& cfg) {
  cfg.validate();
  const CameraRig rig = io::load_calibration(cfg.calibration);
  TemplateMesh mesh = cfg.template_obj.empty()
                          ? build_canonical_head()
                          : load_template(cfg.template_obj.string(),
                                          cfg.template_manifest.string());
  mesh.validate();
  const Image8 face_texture = build_face_texture(cfg.texture == "masked");

  const std::vector<int> frames = discover_frames(cfg, rig);
  RunManifest manifest;
  manifest.frames.resize(frames.size());
  manifest.timings.resize(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    manifest.frames[i].frame_index = frames[i];
    manifest.timings[i].frame_index = frames[i];
  }

  // Pass 1: sequence-level pose work.
  const auto pass1_start = Clock::now();
  const auto per_frame_poses = ingest_poses(cfg, rig, frames, manifest);
  std::vector<Track> tracks =
      track_people(per_frame_poses, cfg.track_gate_m, cfg.track_max_gap, frames.front());
  for (Track& track : tracks)
    track = smooth_track(track, cfg.smooth_window, cfg.max_interp_gap);

  std::vector<std::vector<PersonInFrame>> people(frames.size());
  for (const Track& track : tracks)
    for (const Pose3D& pose : track.poses) {
      const std::size_t slot = static_cast<std::size_t>(pose.frame_index - frames.front());
      if (slot < people.size()) people[slot].push_back({track.person_id, pose});
    }
  for (auto& slot : people)
    std::sort(slot.begin(), slot.end(),
              [](const PersonInFrame& a, const PersonInFrame& b) {
                return a.person_id < b.person_id;
              });

  // Tracking + smoothing cost, attributed evenly across frames.
  {
    double pass1_total = seconds_between(pass1_start, Clock::now());
    for (const StageTimings& tm : manifest.timings) pass1_total -= tm.pose_s;
    const double share = std::max(0.0, pass1_total) / static_cast<double>(frames.size());
    for (StageTimings& tm : manifest.timings) tm.pose_s += share;
  }

  io::ensure_dir(cfg.output_root);
  for (const Camera& cam : rig.cameras)
    io::ensure_dir(cfg.output_root / "color" / cam.id);

  std::vector<std::vector<FaceBox>> detections_per_frame(frames.size());

  // Pass 2: per-frame anonymization. Frames are independent; shared state
  // (rig, mesh, texture, people) is read-only from here on.
  parallel_for(frames.size(), cfg.workers, [&](std::size_t i) {
    FrameRecord& rec = manifest.frames[i];
    StageTimings& tm = manifest.timings[i];
    const std::string fname = io::frame_name(frames[i]);
    const auto t_start = Clock::now();
    try {
      // --- registration stage: depth ingest, fusion, per-person alignment.
      std::vector<std::optional<DepthFrame>> depths(rig.cameras.size());
      std::vector<PointCloud> clouds;
      for (std::size_t c = 0; c < rig.cameras.size(); ++c) {
        const std::filesystem::path path =
            cfg.depth_root / rig.cameras[c].id / (fname + ".pgm");
        if (!std::filesystem::exists(path)) {
          rec.errors.push_back("missing depth: " + rig.cameras[c].id + "/" + fname +
                               ".pgm; camera skipped");
          continue;
        }
        try {
          depths[c] = io::load_depth_pgm(path);
          rec.inputs.push_back("depth/" + rig.cameras[c].id + "/" + fname + ".pgm");
          clouds.push_back(
              unproject_depth(rig.cameras[c], *depths[c], cfg.fuse_stride));
        } catch (const Error& e) {
          depths[c].reset();
          rec.errors.push_back(std::string("depth: ") + e.what() + "; camera skipped");
        }
      }
      const PointCloud fused = fuse(clouds);

      struct AlignedFace {
        int person_id;
        FaceInstance face;
        RegistrationResult registration;
      };
      std::vector<AlignedFace> faces;
      for (const PersonInFrame& person : people[i]) {
        try {
          const SimilarityTransform anchor = anchor_template(mesh, person.pose);
          const auto [pose, reg] =
              refine_alignment(mesh, anchor, fused, cfg.crop_radius, cfg.em, cfg.icp);
          FaceInstance face =
              extract_face(mesh, pose, anchor.scale, person.person_id, frames[i]);
          face.registration = reg;
          faces.push_back({person.person_id, std::move(face), reg});
        } catch (const Error& e) {
          rec.errors.push_back("person " + std::to_string(person.person_id) +
                               " skipped: " + e.what());
          FaceRecord fr;
          fr.person_id = person.person_id;
          fr.verdict = "skipped";
          rec.faces.push_back(fr);
        }
      }
      const auto t_registration = Clock::now();

      // --- render stage: color ingest, visibility, rasterization.
      std::vector<std::optional<Image8>> colors(rig.cameras.size());
      for (std::size_t c = 0; c < rig.cameras.size(); ++c) {
        if (!depths[c]) continue;  // camera already skipped this frame
        const std::filesystem::path path =
            cfg.color_root / rig.cameras[c].id / (fname + ".ppm");
        if (!std::filesystem::exists(path)) {
          rec.errors.push_back("missing color: " + rig.cameras[c].id + "/" + fname +
                               ".ppm; camera skipped");
          continue;
        }
        try {
          colors[c] = io::load_ppm(path);
          rec.inputs.push_back("color/" + rig.cameras[c].id + "/" + fname + ".ppm");
        } catch (const Error& e) {
          rec.errors.push_back(std::string("color: ") + e.what() + "; camera skipped");
        }
      }

      RenderOptions ropts;
      ropts.tau = cfg.tau;
      ropts.depth_clip = !cfg.faithful;

      struct RenderJob {
        std::size_t cam;
        int person_id;
        RenderedFace rendered;
      };
      std::vector<RenderJob> jobs;
      for (AlignedFace& af : faces) {
        for (std::size_t c = 0; c < rig.cameras.size(); ++c) {
          if (!depths[c] || !colors[c]) continue;
          const Camera& cam = rig.cameras[c];
          const Visibility verdict =
              check_visibility(af.face, cam, *depths[c], cfg.tau, cfg.quorum);
          af.face.visibility[cam.id] = verdict;

          FaceRecord fr;
          fr.person_id = af.person_id;
          fr.camera_id = cam.id;
          fr.verdict = to_string(verdict);
          fr.registration_residual = af.registration.final_residual;
          fr.registration_converged = af.registration.converged;

          if (verdict == Visibility::visible || verdict == Visibility::unknown_depth) {
            RenderedFace rendered =
                rasterize_face(af.face, face_texture, cam, *depths[c], ropts);
            if (rendered.degenerate_pose) fr.verdict = "degenerate_pose";
            if (rendered.bbox) {
              fr.box = rendered.bbox;
              jobs.push_back({c, af.person_id, std::move(rendered)});
            }
          }
          rec.faces.push_back(std::move(fr));
        }
      }
      const auto t_render = Clock::now();

      // --- blend stage: composite in person order, then write.
      for (RenderJob& job : jobs) {
        Image8& frame_img = *colors[job.cam];
        if (cfg.backend == "mesh_poisson") {
          const BlendResult blended = poisson_blend(frame_img, job.rendered, cfg.blend);
          if (blended.solver_diverged) {
            for (FaceRecord& fr : rec.faces)
              if (fr.person_id == job.person_id &&
                  fr.camera_id == rig.cameras[job.cam].id)
                fr.solver_diverged = true;
            rec.errors.push_back("poisson solver diverged: person " +
                                 std::to_string(job.person_id) + " in " +
                                 rig.cameras[job.cam].id);
          }
        } else if (cfg.backend == "blacken") {
          fill_rect(frame_img, *job.rendered.bbox, 0, 0, 0);
        } else if (cfg.backend == "pixelate_8") {
          pixelate_rect(frame_img, *job.rendered.bbox, 8);
        } else {
          blur_rect(frame_img, *job.rendered.bbox, 61);
        }
        FaceBox det;
        det.frame_index = frames[i];
        det.camera_id = rig.cameras[job.cam].id;
        det.person_id = job.person_id;
        det.box = *job.rendered.bbox;
        detections_per_frame[i].push_back(det);
      }
      for (std::size_t c = 0; c < rig.cameras.size(); ++c) {
        if (!colors[c]) continue;
        io::save_ppm(*colors[c],
                     cfg.output_root / "color" / rig.cameras[c].id / (fname + ".ppm"));
      }
      const auto t_end = Clock::now();

      tm.registration_s = seconds_between(t_start, t_registration);
      tm.render_s = seconds_between(t_registration, t_render);
      tm.blend_s = seconds_between(t_render, t_end);
      tm.wall_s = tm.pose_s + seconds_between(t_start, t_end);
    } catch (const std::exception& e) {
      rec.errors.push_back(std::string("frame failed: ") + e.what());
      tm.wall_s = tm.pose_s + seconds_between(t_start, Clock::now());
    }
  });

  // Detections sorted by frame; cameras follow rig order within a frame
  // because pass 2 appended them that way person-by-person.
  std::vector<FaceBox> detections;
  for (auto& slot : detections_per_frame) {
    std::stable_sort(slot.begin(), slot.end(), [](const FaceBox& a, const FaceBox& b) {
      if (a.camera_id != b.camera_id) return a.camera_id < b.camera_id;
      return a.person_id < b.person_id;
    });
    detections.insert(detections.end(), slot.begin(), slot.end());
  }
  io::save_face_boxes(detections, /*with_flag=*/false, cfg.output_root / "detections.txt");
  write_manifest(manifest, cfg.output_root / "manifest.json");
  write_timings(manifest, cfg.output_root / "timings.json");
  return manifest;
}

namespace {

void draw_dot(Image8& img, int x, int y, const Color3& c) {
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if (img.in_bounds(x + dx, y + dy)) img.set(x + dx, y + dy, c[0], c[1], c[2]);
}

void draw_box(Image8& img, const BBox2D& box, const Color3& c) {
  const int x0 = static_cast<int>(std::floor(box.x_min));
  const int y0 = static_cast<int>(std::floor(box.y_min));
  const int x1 = static_cast<int>(std::ceil(box.x_max)) - 1;
  const int y1 = static_cast<int>(std::ceil(box.y_max)) - 1;
  for (int x = x0; x <= x1; ++x) {
    if (img.in_bounds(x, y0)) img.set(x, y0, c[0], c[1], c[2]);
    if (img.in_bounds(x, y1)) img.set(x, y1, c[0], c[1], c[2]);
  }
  for (int y = y0; y <= y1; ++y) {
    if (img.in_bounds(x0, y)) img.set(x0, y, c[0], c[1], c[2]);
    if (img.in_bounds(x1, y)) img.set(x1, y, c[0], c[1], c[2]);
  }
}

Color3 verdict_color(Visibility v) {
  switch (v) {
    case Visibility::visible: return {40, 220, 60};
    case Visibility::occluded: return {230, 40, 40};
    case Visibility::out_of_frame: return {150, 150, 150};
    case Visibility::unknown_depth: return {240, 200, 40};
  }
  return {255, 255, 255};
}

}  // namespace

void run_inspect(const PipelineConfig& cfg, int frame_index,
                 const std::filesystem::path& out_dir) {
  cfg.validate();
  const CameraRig rig = io::load_calibration(cfg.calibration);
  TemplateMesh mesh = cfg.template_obj.empty()
                          ? build_canonical_head()
                          : load_template(cfg.template_obj.string(),
                                          cfg.template_manifest.string());
  mesh.validate();
  const Image8 face_texture = build_face_texture(cfg.texture == "masked");

  const std::vector<int> frames = discover_frames(cfg, rig);
  if (std::find(frames.begin(), frames.end(), frame_index) == frames.end())
    config_fail("frame " + std::to_string(frame_index) + " not in the discovered range");

  RunManifest scratch;
  scratch.frames.resize(frames.size());
  scratch.timings.resize(frames.size());
  const auto per_frame_poses = ingest_poses(cfg, rig, frames, scratch);
  std::vector<Track> tracks =
      track_people(per_frame_poses, cfg.track_gate_m, cfg.track_max_gap, frames.front());
  for (Track& track : tracks)
    track = smooth_track(track, cfg.smooth_window, cfg.max_interp_gap);

  std::vector<PersonInFrame> people;
  for (const Track& track : tracks)
    for (const Pose3D& pose : track.poses)
      if (pose.frame_index == frame_index) people.push_back({track.person_id, pose});
  std::sort(people.begin(), people.end(),
            [](const PersonInFrame& a, const PersonInFrame& b) {
              return a.person_id < b.person_id;
            });

  io::ensure_dir(out_dir);
  const std::string fname = io::frame_name(frame_index);

  std::ofstream poses_out(out_dir / "poses.txt", std::ios::trunc);
  poses_out.setf(std::ios::fixed);
  poses_out.precision(6);
  for (const PersonInFrame& person : people) {
    poses_out << "person " << person.person_id << "\n";
    for (int j = 0; j < kJointCount; ++j) {
      const Vec3& p = person.pose.joints[j];
      poses_out << "  joint " << j << ": ";
      if (person.pose.valid[j])
        poses_out << p.x() << " " << p.y() << " " << p.z() << "\n";
      else
        poses_out << "invalid\n";
    }
  }
  poses_out.close();

  std::vector<std::optional<DepthFrame>> depths(rig.cameras.size());
  std::vector<PointCloud> clouds;
  for (std::size_t c = 0; c < rig.cameras.size(); ++c) {
    const std::filesystem::path path = cfg.depth_root / rig.cameras[c].id / (fname + ".pgm");
    if (!std::filesystem::exists(path)) continue;
    depths[c] = io::load_depth_pgm(path);
    clouds.push_back(unproject_depth(rig.cameras[c], *depths[c], cfg.fuse_stride));
  }
  const PointCloud fused = fuse(clouds);

  std::ofstream reg_out(out_dir / "registration.txt", std::ios::trunc);
  std::ofstream verdict_out(out_dir / "verdicts.txt", std::ios::trunc);
  struct InspectFace {
    int person_id;
    FaceInstance face;
  };
  std::vector<InspectFace> faces;
  for (const PersonInFrame& person : people) {
    try {
      const SimilarityTransform anchor = anchor_template(mesh, person.pose);
      const auto [pose, reg] =
          refine_alignment(mesh, anchor, fused, cfg.crop_radius, cfg.em, cfg.icp);
      reg_out << "person " << person.person_id << ": residual " << reg.final_residual
              << " m, iterations " << reg.iterations << ", converged "
              << (reg.converged ? "yes" : "no") << ", scale " << anchor.scale << "\n";
      faces.push_back(
          {person.person_id,
           extract_face(mesh, pose, anchor.scale, person.person_id, frame_index)});
    } catch (const Error& e) {
      reg_out << "person " << person.person_id << ": skipped (" << e.what() << ")\n";
    }
  }

  for (std::size_t c = 0; c < rig.cameras.size(); ++c) {
    const Camera& cam = rig.cameras[c];
    const std::filesystem::path color_path =
        cfg.color_root / cam.id / (fname + ".ppm");
    if (!depths[c] || !std::filesystem::exists(color_path)) continue;
    Image8 overlay = io::load_ppm(color_path);
    const RigidTransform cam_from_world = cam.camera_from_world();
    for (const InspectFace& inf : faces) {
      const Visibility verdict =
          check_visibility(inf.face, cam, *depths[c], cfg.tau, cfg.quorum);
      verdict_out << "person " << inf.person_id << " " << cam.id << ": "
                  << to_string(verdict) << "\n";
      const Color3 color = verdict_color(verdict);
      for (const Vec3& probe : inf.face.probe_points) {
        const auto proj = try_project(cam.intrinsics, cam_from_world, probe);
        if (proj)
          draw_dot(overlay, static_cast<int>(std::lround(proj->pixel.x())),
                   static_cast<int>(std::lround(proj->pixel.y())), color);
      }
      if (verdict == Visibility::visible || verdict == Visibility::unknown_depth) {
        RenderOptions ropts;
        ropts.tau = cfg.tau;
        ropts.depth_clip = !cfg.faithful;
        const RenderedFace rendered =
            rasterize_face(inf.face, face_texture, cam, *depths[c], ropts);
        if (rendered.bbox) draw_box(overlay, *rendered.bbox, color);
      }
    }
    io::save_ppm(overlay, out_dir / ("overlay_" + cam.id + ".ppm"));
  }
}

EvalReport run_evaluate(const std::filesystem::path& detections_path,
                        const std::filesystem::path& annotations_path,
                        double iou_threshold, bool ignore_occluded) {
  std::vector<FaceBox> dets = io::load_face_boxes(detections_path, /*with_flag=*/false);
  std::vector<FaceBox> anns = io::load_face_boxes(annotations_path, /*with_flag=*/true);
  if (!ignore_occluded)
    for (FaceBox& a : anns) a.fully_occluded = false;

  EvalReport report;
  report.iou_threshold = iou_threshold;
  report.detection_count = static_cast<int>(dets.size());
  report.annotation_count = static_cast<int>(anns.size());
  report.no_detections = dets.empty() && !anns.empty();
  report.matching = match_and_score(dets, anns, iou_threshold);
  report.holistic = holistic_recall(dets, anns, iou_threshold);
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "face anonymization evaluation (IoU@" << report.iou_threshold << ")\n";
  out << "detections: " << report.detection_count
      << "  annotations: " << report.annotation_count << "\n";
  if (report.no_detections)
    out << "note: no detections; precision reported as 0 by convention\n";
  out << "\ncamera        tp    fp    fn  precision  recall      f1\n";
  const auto row = [&](const std::string& name, const CameraScore& s) {
    out << name;
    for (std::size_t pad = name.size(); pad < 12; ++pad) out << ' ';
    char buf[80];
    std::snprintf(buf, sizeof buf, "%6d%6d%6d%11.4f%8.4f%8.4f\n", s.tp, s.fp, s.fn,
                  s.precision(), s.recall(), s.f1());
    out << buf;
  };
  for (const auto& [camera, score] : report.matching.per_camera) row(camera, score);
  row("overall", report.matching.overall);
  out << "\nholistic recall: " << report.holistic.recall << " ("
      << report.holistic.detected << "/" << report.holistic.total << " person-frames)\n";
  for (const auto& [person, counts] : report.holistic.per_person)
    out << "  person " << person << ": " << counts.first << "/" << counts.second << "\n";
  return std::move(out).str();
}

}  // namespace mvanon::pipeline
