#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace mvanon {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

// Rodrigues formula. Zero axis yields identity.
inline Mat3 axis_angle(const Vec3& axis, double angle) {
    const double n = axis.norm();
    if (n < 1e-300) return Mat3::Identity();
    const Vec3 u = axis / n;
    Mat3 k;
    k << 0, -u.z(), u.y(),
         u.z(), 0, -u.x(),
         -u.y(), u.x(), 0;
    return Mat3::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * k * k;
}

// Geodesic distance on SO(3), in radians.
inline double rotation_angle(const Mat3& r) {
    const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
    return std::acos(c);
}

inline double rotation_distance(const Mat3& a, const Mat3& b) {
    return rotation_angle(Mat3(a.transpose() * b));
}

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
    return (r.transpose() * r - Mat3::Identity()).norm() <= tol &&
           std::abs(r.determinant() - 1.0) <= tol;
}

// Projects an arbitrary matrix onto SO(3) via SVD with sign correction.
inline Mat3 closest_rotation(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    Mat3 v = svd.matrixV();
    Mat3 d = Mat3::Identity();
    if ((u * v.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
    return u * d * v.transpose();
}

}  // namespace mvanon
