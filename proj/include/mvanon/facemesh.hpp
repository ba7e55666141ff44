#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mvanon/geometry.hpp"
#include "mvanon/image.hpp"
#include "mvanon/pointcloud.hpp"
#include "mvanon/pose.hpp"
#include "mvanon/registration.hpp"

namespace mvanon {

// Canonical head mesh in its own frame: +z out of the face, +y up, +x toward
// the subject's right, origin at the head center.
struct TemplateMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Vec2> uvs;  // per vertex, [0,1]^2

    struct Landmarks {
        int nose_tip = -1;
        int left_eye = -1, right_eye = -1;
        int left_ear = -1, right_ear = -1;
    } landmarks;

    std::vector<int> face_submesh;     // vertex ids of the face region
    std::vector<int> probe_vertices;   // exactly 20, subset of face_submesh

    void validate() const;  // throws SpecInvalid
};

enum class Visibility { visible, occluded, out_of_frame, unknown_depth };
std::string to_string(Visibility v);

// Face submesh posed in world space for one person in one frame.
struct FaceInstance {
    int person_id = -1;
    int frame_index = -1;
    RigidTransform world_pose;
    double scale = 1.0;
    std::vector<Vec3> vertices;                  // world frame
    std::vector<Vec2> uvs;                       // parallel to vertices
    std::vector<std::array<int, 3>> triangles;   // into the submesh vertices
    std::vector<Vec3> probe_points;              // world frame
    std::map<std::string, Visibility> visibility;  // camera id -> verdict
    RegistrationResult registration;
};

// Procedural template: ellipsoid head shell with a nose bump, equatorial
// landmarks, a rectangular face patch and 20 probe vertices on it.
TemplateMesh build_canonical_head();

// 256x256 replacement texture; the masked variant covers the lower face.
Image8 build_face_texture(bool masked);

void save_template(const TemplateMesh& mesh, const std::string& obj_path,
                   const std::string& manifest_path);
TemplateMesh load_template(const std::string& obj_path, const std::string& manifest_path);

// Similarity fit of template landmarks onto the pose's valid head joints
// (needs at least 3 of nose/eyes/ears); scale clamped to [0.8, 1.25].
SimilarityTransform anchor_template(const TemplateMesh& mesh, const Pose3D& pose);

// Crops the scene around the anchor and runs the EM stage then ICP on the
// template vertices. Falls back to the anchor pose (converged = false) on an
// empty crop, non-convergence, or a refined center farther than crop_radius
// from the anchor.
std::pair<RigidTransform, RegistrationResult> refine_alignment(
    const TemplateMesh& mesh, const SimilarityTransform& anchor, const PointCloud& scene,
    double crop_radius, const RegistrationConfig& em_cfg, const RegistrationConfig& icp_cfg);

// Face submesh to world space; triangles re-indexed to the submesh. Throws
// MissingFaceSubmesh when the template has no face index list.
FaceInstance extract_face(const TemplateMesh& mesh, const RigidTransform& pose, double scale,
                          int person_id, int frame_index);

// Depth-disparity test on the probe vertices: a probe agrees when the
// depth-map point at its projection lies within tau meters of the probe.
// Visible iff the agreeing fraction over depth-valid in-frame probes reaches
// the quorum.
Visibility check_visibility(const FaceInstance& face, const Camera& camera,
                            const DepthFrame& depth, double tau, double quorum);

}  // namespace mvanon
