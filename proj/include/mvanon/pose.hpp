#pragma once

#include <Eigen/Dense>
#include <array>
#include <span>
#include <vector>

#include "mvanon/geometry.hpp"

namespace mvanon {

// 17-joint layout, fixed order.
enum Joint : int {
    kNose = 0,
    kLeftEye, kRightEye,
    kLeftEar, kRightEar,
    kLeftShoulder, kRightShoulder,
    kLeftElbow, kRightElbow,
    kLeftWrist, kRightWrist,
    kLeftHip, kRightHip,
    kLeftKnee, kRightKnee,
    kLeftAnkle, kRightAnkle,
};
inline constexpr int kJointCount = 17;

struct Keypoint2D {
    int joint_id = 0;
    Vec2 pixel = Vec2::Zero();
    double confidence = 0.0;  // 0 marks an unusable detection
};

// One person-agnostic 2D detection in one camera.
struct Pose2D {
    const Camera* camera = nullptr;
    std::array<Keypoint2D, kJointCount> joints;
};

struct Pose3D {
    std::array<Vec3, kJointCount> joints{};
    std::array<bool, kJointCount> valid{};
    int frame_index = -1;

    int valid_count() const;
    // Mean of valid hip/shoulder joints; falls back to all valid joints.
    Vec3 torso_center() const;
};

struct Track {
    int person_id = -1;
    std::vector<Pose3D> poses;  // frame indices strictly increasing
    int texture_id = 0;
};

struct HeadFrame {
    RigidTransform pose;            // world-from-head
    std::vector<int> used_joints;   // joint ids the anchor was derived from
};

// Exact min-cost one-to-one assignment. Entry >= forbidden_cost means the
// pairing is disallowed; rows left unmatched map to -1.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost, double forbidden_cost);

// Greedy agglomerative grouping of per-camera detections by mean symmetric
// epipolar distance over shared confident joints. Groups never hold two
// detections from the same camera; singletons are dropped.
std::vector<std::vector<const Pose2D*>> associate_across_views(
    std::span<const std::vector<Pose2D>> detections_per_camera, const CameraRig& rig,
    double epipolar_gate_px, double min_confidence = 0.3);

// Per-joint confidence-weighted triangulation over views with confidence >=
// min_confidence; joints seen in fewer than two cameras stay invalid.
Pose3D lift_to_3d(std::span<const Pose2D* const> group, double min_confidence);

// Frame-to-frame optimal assignment on torso-center distance; pairings
// beyond `gate` meters are forbidden. A track missing for more than max_gap
// frames is closed and a reappearance gets a fresh id.
std::vector<Track> track_people(std::span<const std::vector<Pose3D>> frames, double gate,
                                int max_gap, int first_frame_index = 0);

// Gaussian-weighted moving average (kernel sigma = window / 6) over valid
// samples, after filling gaps of at most max_interp_gap frames by linear
// interpolation. Longer gaps stay invalid.
Track smooth_track(const Track& track, int window, int max_interp_gap);

// Head anchor from face joints. Needs nose plus both eyes, or nose plus both
// ears; orientation comes from the eye/ear line and the facing direction,
// position from the joint centroid pulled back to the head center.
HeadFrame head_frame(const Pose3D& pose);

}  // namespace mvanon
