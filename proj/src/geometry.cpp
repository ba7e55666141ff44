#include "mvanon/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <set>

namespace mvanon {

RigidTransform RigidTransform::inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
}

Mat4 RigidTransform::matrix() const {
    Mat4 m = Mat4::Identity();
    m.block<3, 3>(0, 0) = rotation;
    m.block<3, 1>(0, 3) = translation;
    return m;
}

RigidTransform RigidTransform::from_matrix(const Mat4& m) {
    return {m.block<3, 3>(0, 0), m.block<3, 1>(0, 3)};
}

RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

SimilarityTransform SimilarityTransform::inverse() const {
    SimilarityTransform inv;
    inv.scale = 1.0 / scale;
    inv.rotation = rotation.transpose();
    inv.translation = -inv.scale * (inv.rotation * translation);
    return inv;
}

SimilarityTransform compose(const RigidTransform& a, const SimilarityTransform& b) {
    SimilarityTransform out;
    out.scale = b.scale;
    out.rotation = a.rotation * b.rotation;
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

const char* to_string(CameraRole role) {
    return role == CameraRole::surgical ? "surgical" : "workflow";
}

CameraRole camera_role_from_string(const std::string& s) {
    if (s == "surgical") return CameraRole::surgical;
    if (s == "workflow") return CameraRole::workflow;
    throw ParseError("unknown camera role: " + s);
}

const Camera* CameraRig::find(const std::string& id) const {
    for (const auto& cam : cameras)
        if (cam.id == id) return &cam;
    return nullptr;
}

std::optional<ProjectedPoint> try_project(const CameraIntrinsics& k,
                                          const RigidTransform& camera_from_world,
                                          const Vec3& p_world) {
    const Vec3 pc = camera_from_world.apply(p_world);
    if (pc.z() <= 0.0) return std::nullopt;
    const double inv_z = 1.0 / pc.z();
    return ProjectedPoint{Vec2(k.fx * pc.x() * inv_z + k.cx, k.fy * pc.y() * inv_z + k.cy),
                          pc.z()};
}

ProjectedPoint project_point(const Camera& camera, const Vec3& p_world) {
    auto p = try_project(camera.intrinsics, camera.camera_from_world(), p_world);
    if (!p) throw BehindCamera();
    return *p;
}

Vec3 pixel_ray(const CameraIntrinsics& k, const Vec2& pixel) {
    return Vec3((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0);
}

Vec3 backproject(const Camera& camera, const Vec2& pixel, double depth) {
    if (!(depth > 0.0)) throw InvalidDepth();
    const Vec3 pc = pixel_ray(camera.intrinsics, pixel) * depth;
    return camera.world_from_camera.apply(pc);
}

TriangulationResult triangulate_dlt(std::span<const Observation> observations,
                                    int min_views) {
    std::set<std::string> distinct;
    for (const auto& obs : observations)
        if (obs.camera) distinct.insert(obs.camera->id);
    if (static_cast<int>(distinct.size()) < min_views)
        throw InsufficientViews();

    Eigen::Matrix<double, Eigen::Dynamic, 4> a(2 * observations.size(), 4);
    int row = 0;
    for (const auto& obs : observations) {
        const auto& k = obs.camera->intrinsics;
        const RigidTransform cfw = obs.camera->camera_from_world();
        Eigen::Matrix<double, 3, 4> p;
        Mat3 kmat;
        kmat << k.fx, 0, k.cx, 0, k.fy, k.cy, 0, 0, 1;
        p.block<3, 3>(0, 0) = kmat * cfw.rotation;
        p.block<3, 1>(0, 3) = kmat * cfw.translation;
        const double w = std::max(obs.weight, 0.0);
        a.row(row++) = w * (obs.pixel.x() * p.row(2) - p.row(0));
        a.row(row++) = w * (obs.pixel.y() * p.row(2) - p.row(1));
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv(0) <= 0.0 || sv(2) <= 1e-10 * sv(0))
        throw DegenerateGeometry("rank-deficient triangulation system");

    Eigen::Vector4d x = svd.matrixV().col(3);
    if (std::abs(x(3)) <= 1e-12 * x.head<3>().norm())
        throw DegenerateGeometry("triangulated point at infinity");
    const Vec3 point = x.head<3>() / x(3);

    double sq_sum = 0.0;
    for (const auto& obs : observations) {
        const auto proj = try_project(obs.camera->intrinsics,
                                      obs.camera->camera_from_world(), point);
        const double d = proj ? (proj->pixel - obs.pixel).norm() : 1e9;
        sq_sum += d * d;
    }
    const double rms = std::sqrt(sq_sum / static_cast<double>(observations.size()));
    return {point, rms};
}

SimilarityTransform umeyama_align(std::span<const Vec3> source,
                                  std::span<const Vec3> target,
                                  bool with_scale) {
    if (source.size() != target.size())
        throw TooFewPoints("source/target size mismatch");
    const std::size_t n = source.size();
    if (n < 3) throw TooFewPoints();

    Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        mu_s += source[i];
        mu_t += target[i];
    }
    mu_s /= static_cast<double>(n);
    mu_t /= static_cast<double>(n);

    Mat3 cov = Mat3::Zero();  // target x source
    double var_s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 ds = source[i] - mu_s;
        const Vec3 dt = target[i] - mu_t;
        cov += dt * ds.transpose();
        var_s += ds.squaredNorm();
    }
    cov /= static_cast<double>(n);
    var_s /= static_cast<double>(n);

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    // Collinear (or coincident) sources leave the covariance with rank < 2.
    if (sv(0) <= 0.0 || sv(1) <= 1e-9 * sv(0))
        throw DegenerateConfiguration();

    Mat3 s = Mat3::Identity();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0)
        s(2, 2) = -1.0;

    SimilarityTransform t;
    t.rotation = svd.matrixU() * s * svd.matrixV().transpose();
    t.scale = with_scale ? (sv.dot(s.diagonal()) / var_s) : 1.0;
    t.translation = mu_t - t.scale * (t.rotation * mu_s);
    return t;
}

RigidTransform weighted_rigid_align(std::span<const Vec3> source,
                                    std::span<const Vec3> target,
                                    std::span<const double> weights) {
    if (source.size() != target.size() || source.size() != weights.size())
        throw TooFewPoints("source/target/weight size mismatch");
    if (source.empty()) throw TooFewPoints();

    double wsum = 0.0;
    Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
    for (std::size_t i = 0; i < source.size(); ++i) {
        wsum += weights[i];
        mu_s += weights[i] * source[i];
        mu_t += weights[i] * target[i];
    }
    if (wsum <= 0.0) throw TooFewPoints("all weights zero");
    mu_s /= wsum;
    mu_t /= wsum;

    Mat3 cov = Mat3::Zero();
    for (std::size_t i = 0; i < source.size(); ++i)
        cov += weights[i] * (target[i] - mu_t) * (source[i] - mu_s).transpose();
    cov /= wsum;

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 s = Mat3::Identity();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0)
        s(2, 2) = -1.0;

    RigidTransform t;
    t.rotation = svd.matrixU() * s * svd.matrixV().transpose();
    t.translation = mu_t - t.rotation * mu_s;
    return t;
}

}  // namespace mvanon
