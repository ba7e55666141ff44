#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvanon/errors.hpp"
#include "mvanon/mathutil.hpp"

namespace mvanon {

// Right-handed coordinates, camera looks down +z, pixel origin top-left.
// These conventions hold everywhere in the library.

struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    RigidTransform inverse() const;
    Mat4 matrix() const;
    static RigidTransform from_matrix(const Mat4& m);
};

// Composition: (a * b).apply(p) == a.apply(b.apply(p))
RigidTransform operator*(const RigidTransform& a, const RigidTransform& b);

struct SimilarityTransform {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
    SimilarityTransform inverse() const;
    RigidTransform rigid() const { return {rotation, translation}; }
};

// rigid ∘ similarity, keeping the similarity's scale.
SimilarityTransform compose(const RigidTransform& a, const SimilarityTransform& b);

struct CameraIntrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    bool contains(const Vec2& px) const {
        return px.x() >= 0.0 && px.x() < width && px.y() >= 0.0 && px.y() < height;
    }
};

enum class CameraRole { surgical, workflow };

const char* to_string(CameraRole role);
CameraRole camera_role_from_string(const std::string& s);

struct Camera {
    std::string id;
    CameraIntrinsics intrinsics;
    RigidTransform world_from_camera;
    CameraRole role = CameraRole::workflow;

    RigidTransform camera_from_world() const { return world_from_camera.inverse(); }
};

struct CameraRig {
    std::vector<Camera> cameras;

    const Camera* find(const std::string& id) const;
    bool empty() const { return cameras.empty(); }
};

// Half-open on the max edges: a pixel (x, y) is inside iff
// x_min <= x < x_max and y_min <= y < y_max.
struct BBox2D {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    bool valid() const { return x_min < x_max && y_min < y_max; }
};

struct ProjectedPoint {
    Vec2 pixel;
    double depth = 0.0;  // z in camera frame, meters
};

// Pinhole projection of a world point. Throws BehindCamera when the point
// maps to z <= 0 in the camera frame.
ProjectedPoint project_point(const Camera& camera, const Vec3& p_world);

// Non-throwing variant with a precomputed camera-from-world pose, for inner loops.
std::optional<ProjectedPoint> try_project(const CameraIntrinsics& k,
                                          const RigidTransform& camera_from_world,
                                          const Vec3& p_world);

// Inverse of project_point. Throws InvalidDepth when depth <= 0.
Vec3 backproject(const Camera& camera, const Vec2& pixel, double depth);

// Ray direction in camera frame for a pixel, z normalized to 1.
Vec3 pixel_ray(const CameraIntrinsics& k, const Vec2& pixel);

struct Observation {
    const Camera* camera = nullptr;
    Vec2 pixel = Vec2::Zero();
    double weight = 1.0;
};

struct TriangulationResult {
    Vec3 point = Vec3::Zero();
    double rms_reprojection_error = 0.0;  // pixels, over all observations
};

// Homogeneous linear least squares (DLT) over calibrated views.
// Throws InsufficientViews when fewer than min_views distinct cameras
// observe the point, DegenerateGeometry when the design matrix is
// rank-deficient (identical rays) or the solution lies at infinity.
TriangulationResult triangulate_dlt(std::span<const Observation> observations,
                                    int min_views = 2);

// Closed-form least-squares similarity (or rigid, when with_scale is off)
// mapping source onto target. Throws TooFewPoints (<3 correspondences) and
// DegenerateConfiguration (collinear sources).
SimilarityTransform umeyama_align(std::span<const Vec3> source,
                                  std::span<const Vec3> target,
                                  bool with_scale);

// Weighted rigid alignment, scale fixed to 1. With all weights equal this
// matches umeyama_align(source, target, false) exactly.
RigidTransform weighted_rigid_align(std::span<const Vec3> source,
                                    std::span<const Vec3> target,
                                    std::span<const double> weights);

}  // namespace mvanon
