#include "mvanon/synth.hpp"

#include <cmath>

#include "mvanon/canonical_head.hpp"
#include "mvanon/errors.hpp"
#include "mvanon/facemesh.hpp"
#include "mvanon/geometry.hpp"
#include "mvanon/io.hpp"
#include "mvanon/pose.hpp"
#include "mvanon/render.hpp"
#include "mvanon/rng.hpp"

namespace mvanon::synth {
namespace {

constexpr double kDeg = kPi / 180.0;

Mat3 rot_y(double a) {
    Mat3 r;
    r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
    return r;
}

// World frame: y up, floor at y = 0, cameras clustered on the +z side.
// Heads stay inside a band every camera sees at < ~51 degrees off the face
// normal, so all face probes stay front-facing for every camera: visibility
// transitions then come only from the occluder, never from grazing angles.
struct PersonMotion {
    double xb = 0, zb = 0, h = 1.6;
    double ax = 0, tx = 1, px = 0;
    double az = 0, tz = 1, pz = 0;
    double yaw_amp = 0, ty = 1, py = 0;

    Vec3 center(int t) const {
        return {xb + ax * std::sin(2.0 * kPi * t / tx + px), h,
                zb + az * std::sin(2.0 * kPi * t / tz + pz)};
    }
    double yaw(int t) const { return yaw_amp * std::sin(2.0 * kPi * t / ty + py); }
    RigidTransform head_pose(int t) const { return {rot_y(yaw(t)), center(t)}; }
};

PersonMotion make_motion(const SynthSpec& spec, int i) {
    Rng rng(spec.seed, 100 + static_cast<std::uint64_t>(i));
    PersonMotion m;
    m.xb = (i - (spec.persons - 1) / 2.0) * 0.9;
    m.zb = 0.15 * ((i % 3) - 1);
    m.h = 1.56 + 0.04 * (i % 4);
    m.ax = 0.25 * rng.uniform(0.7, 1.0);
    m.tx = rng.uniform(44.0, 60.0);
    m.px = rng.uniform(0.0, 2.0 * kPi);
    m.az = 0.20 * rng.uniform(0.7, 1.0);
    m.tz = rng.uniform(40.0, 56.0);
    m.pz = rng.uniform(0.0, 2.0 * kPi);
    m.yaw_amp = 8.0 * kDeg * rng.uniform(0.6, 1.0);
    m.ty = rng.uniform(36.0, 52.0);
    m.py = rng.uniform(0.0, 2.0 * kPi);
    return m;
}

CameraRig make_rig(const SynthSpec& spec) {
    const double heights[4] = {2.00, 1.85, 2.10, 1.95};
    const Vec3 target(0.0, 1.5, 0.0);
    const Vec3 world_up(0.0, 1.0, 0.0);
    CameraRig rig;
    for (int i = 0; i < spec.cameras; ++i) {
        const double alpha =
            spec.cameras == 1
                ? 0.0
                : (-18.0 + 36.0 * i / (spec.cameras - 1.0)) * kDeg;
        const Vec3 pos(3.4 * std::sin(alpha), heights[i % 4], 3.4 * std::cos(alpha));
        const Vec3 fwd = (target - pos).normalized();
        const Vec3 right = fwd.cross(world_up).normalized();
        const Vec3 down = fwd.cross(right);  // camera y points down in a y-up world
        Camera cam;
        cam.id = "cam" + std::to_string(i);
        cam.role = i == 0 ? CameraRole::surgical : CameraRole::workflow;
        cam.intrinsics.width = spec.width;
        cam.intrinsics.height = spec.height;
        cam.intrinsics.fx = cam.intrinsics.fy = 525.0 * spec.width / 640.0;
        cam.intrinsics.cx = spec.width / 2.0;
        cam.intrinsics.cy = spec.height / 2.0;
        cam.world_from_camera.rotation.col(0) = right;
        cam.world_from_camera.rotation.col(1) = down;
        cam.world_from_camera.rotation.col(2) = fwd;
        cam.world_from_camera.translation = pos;
        rig.cameras.push_back(std::move(cam));
    }
    return rig;
}

// Lateral occluder offset along the camera x axis. The tanh saturates at
// every integer frame time (zero crossings sit on half-integers), so sampled
// frames only ever see the two terminal states: fully covering the frustum
// or fully out of it. No frame catches the plane half-way.
double occluder_offset(int t) {
    return 0.4 + 0.4 * std::tanh(25.0 * std::sin(2.0 * kPi * (t - 0.5) / 24.0));
}

SceneMesh make_occluder(const Camera& cam, int t) {
    const Mat3& r = cam.world_from_camera.rotation;
    const Vec3 cam_x = r.col(0), cam_y = r.col(1), cam_z = r.col(2);
    const double dist = 0.5;
    const double hw = dist * (cam.intrinsics.width / 2.0) / cam.intrinsics.fx + 0.045;
    const double hh = dist * (cam.intrinsics.height / 2.0) / cam.intrinsics.fy + 0.030;
    const Vec3 c = cam.world_from_camera.translation + dist * cam_z +
                   occluder_offset(t) * cam_x;
    SceneMesh mesh;
    mesh.vertices = {c - hw * cam_x - hh * cam_y, c + hw * cam_x - hh * cam_y,
                     c + hw * cam_x + hh * cam_y, c - hw * cam_x + hh * cam_y};
    mesh.triangles = {{0, 1, 2}, {0, 2, 3}};
    mesh.color = {58, 60, 66};
    return mesh;
}

SceneMesh make_floor() {
    SceneMesh mesh;
    mesh.vertices = {{-4, 0, -4}, {4, 0, -4}, {4, 0, 4}, {-4, 0, 4}};
    mesh.triangles = {{0, 1, 2}, {0, 2, 3}};
    mesh.color = {110, 112, 118};
    return mesh;
}

// Rigid skeleton hung under the head, in the head frame (+x = subject's
// anatomical right). Left-side joints therefore sit at -x.
std::array<Vec3, kJointCount> joint_offsets() {
    std::array<Vec3, kJointCount> j{};
    j[kNose] = canonical::nose_tip();
    j[kLeftEye] = canonical::eye_center(false);
    j[kRightEye] = canonical::eye_center(true);
    j[kLeftEar] = canonical::ear_center(false);
    j[kRightEar] = canonical::ear_center(true);
    j[kLeftShoulder] = {-0.19, -0.30, 0.01};
    j[kRightShoulder] = {0.19, -0.30, 0.01};
    j[kLeftElbow] = {-0.26, -0.58, 0.03};
    j[kRightElbow] = {0.26, -0.58, 0.03};
    j[kLeftWrist] = {-0.28, -0.85, 0.07};
    j[kRightWrist] = {0.28, -0.85, 0.07};
    j[kLeftHip] = {-0.11, -0.76, 0.0};
    j[kRightHip] = {0.11, -0.76, 0.0};
    j[kLeftKnee] = {-0.12, -1.13, 0.02};
    j[kRightKnee] = {0.12, -1.13, 0.02};
    j[kLeftAnkle] = {-0.13, -1.53, 0.04};
    j[kRightAnkle] = {0.13, -1.53, 0.04};
    return j;
}

}  // namespace

void SynthSpec::validate() const {
    if (cameras < 1) throw SpecInvalid("need at least one camera");
    if (width < 32 || height < 32) throw SpecInvalid("resolution below 32x32");
    if (persons < 1) throw SpecInvalid("need at least one person");
    if (frames < 1) throw SpecInvalid("need at least one frame");
    if (keypoint_noise_px < 0) throw SpecInvalid("negative keypoint noise");
    if (occluder && (occluder_camera < 0 || occluder_camera >= cameras))
        throw SpecInvalid("occluder camera index out of range");
    if (out_root.empty()) throw SpecInvalid("empty output root");
}

void generate(const SynthSpec& spec) {
    spec.validate();

    const CameraRig rig = make_rig(spec);
    const TemplateMesh head = build_canonical_head();
    const Image8 face_tex = build_face_texture(false);
    const auto offsets = joint_offsets();

    std::vector<PersonMotion> motions;
    for (int i = 0; i < spec.persons; ++i) motions.push_back(make_motion(spec, i));

    io::ensure_dir(spec.out_root);
    io::save_calibration(rig, spec.out_root / "calibration.json");
    io::ensure_dir(spec.out_root / "poses3d");
    for (const Camera& cam : rig.cameras) {
        io::ensure_dir(spec.out_root / "color" / cam.id);
        io::ensure_dir(spec.out_root / "depth" / cam.id);
        io::ensure_dir(spec.out_root / "keypoints" / cam.id);
    }

    const SceneMesh floor = make_floor();
    std::vector<FaceBox> annotations;

    for (int t = 0; t < spec.frames; ++t) {
        const std::string fname = io::frame_name(t);

        std::vector<RigidTransform> poses;
        std::vector<std::array<Vec3, kJointCount>> joints(spec.persons);
        for (int p = 0; p < spec.persons; ++p) {
            poses.push_back(motions[p].head_pose(t));
            for (int j = 0; j < kJointCount; ++j)
                joints[p][j] = poses[p].apply(offsets[j]);
        }

        {
            std::vector<Pose3D> gt3d(spec.persons);
            for (int p = 0; p < spec.persons; ++p) {
                gt3d[p].frame_index = t;
                gt3d[p].joints = joints[p];
                gt3d[p].valid.fill(true);
            }
            io::save_poses3d(gt3d, spec.out_root / "poses3d" / (fname + ".txt"));
        }

        std::vector<SceneMesh> heads(spec.persons);
        for (int p = 0; p < spec.persons; ++p) {
            SceneMesh& m = heads[p];
            m.vertices.resize(head.vertices.size());
            for (std::size_t v = 0; v < head.vertices.size(); ++v)
                m.vertices[v] = poses[p].apply(head.vertices[v]);
            m.triangles = head.triangles;
            m.uvs = head.uvs;
            m.texture = &face_tex;
        }

        for (int ci = 0; ci < spec.cameras; ++ci) {
            const Camera& cam = rig.cameras[ci];
            std::vector<SceneMesh> scene = heads;
            scene.push_back(floor);
            if (spec.occluder && ci == spec.occluder_camera)
                scene.push_back(make_occluder(cam, t));

            Image8 color;
            DepthFrame depth;
            render_scene(scene, cam, Color3{35, 38, 42}, color, depth);
            io::save_ppm(color, spec.out_root / "color" / cam.id / (fname + ".ppm"));
            io::save_depth_pgm(depth, spec.out_root / "depth" / cam.id / (fname + ".pgm"));

            // Idealized keypoint detector: exact projections, confidence 1,
            // even through the occluder. The io loader zeroes out-of-frame ones.
            std::vector<Pose2D> dets(spec.persons);
            const RigidTransform cam_from_world = cam.camera_from_world();
            for (int p = 0; p < spec.persons; ++p) {
                Rng noise_rng(spec.seed,
                              5000 + (static_cast<std::uint64_t>(t) * 64 + ci) * 64 + p);
                dets[p].camera = &cam;
                for (int j = 0; j < kJointCount; ++j) {
                    Keypoint2D& kp = dets[p].joints[j];
                    kp.joint_id = j;
                    const auto proj = try_project(cam.intrinsics, cam_from_world, joints[p][j]);
                    if (!proj) {
                        kp.pixel = Vec2(-1, -1);
                        kp.confidence = 0.0;
                        continue;
                    }
                    kp.pixel = proj->pixel;
                    if (spec.keypoint_noise_px > 0.0) {
                        kp.pixel.x() += noise_rng.normal(0.0, spec.keypoint_noise_px);
                        kp.pixel.y() += noise_rng.normal(0.0, spec.keypoint_noise_px);
                    }
                    kp.confidence = 1.0;
                }
            }
            io::save_keypoints(dets, spec.out_root / "keypoints" / cam.id / (fname + ".txt"));

            // GT boxes from the rendered face submesh, z-tested against the
            // full scene depth (2 mm covers the millimeter quantization).
            for (int p = 0; p < spec.persons; ++p) {
                const FaceInstance face = extract_face(head, poses[p], 1.0, p, t);
                RenderOptions gt_opts;
                gt_opts.tau = 0.002;
                gt_opts.bilinear = false;
                const RenderedFace visible = rasterize_face(face, face_tex, cam, depth, gt_opts);
                FaceBox fb;
                fb.frame_index = t;
                fb.camera_id = cam.id;
                fb.person_id = p;
                if (visible.bbox) {
                    fb.box = *visible.bbox;
                    fb.fully_occluded = false;
                } else {
                    RenderOptions unclipped = gt_opts;
                    unclipped.depth_clip = false;
                    const RenderedFace full =
                        rasterize_face(face, face_tex, cam, depth, unclipped);
                    if (!full.bbox) continue;  // face fully outside the frame
                    fb.box = *full.bbox;
                    fb.fully_occluded = true;
                }
                annotations.push_back(fb);
            }
        }
    }

    io::save_face_boxes(annotations, /*with_flag=*/true, spec.out_root / "annotations.txt");
}

}  // namespace mvanon::synth
