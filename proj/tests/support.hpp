#pragma once

// Shared fixtures for the unit and acceptance binaries.

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvanon/geometry.hpp"
#include "mvanon/rng.hpp"

namespace testsupport {

using namespace mvanon;

// World +y is up. Columns of world_from_camera are [right, down, forward].
inline RigidTransform look_at(const Vec3& eye, const Vec3& target) {
    const Vec3 fwd = (target - eye).normalized();
    Vec3 down(0, -1, 0);
    Vec3 right = down.cross(fwd);
    if (right.norm() < 1e-9) right = Vec3(1, 0, 0);  // looking straight up/down
    right.normalize();
    down = fwd.cross(right);
    Mat3 r;
    r.col(0) = right;
    r.col(1) = down;
    r.col(2) = fwd;
    return {r, eye};
}

inline Camera make_camera(const std::string& id, const Vec3& eye, const Vec3& target,
                          double focal = 500.0, int w = 640, int h = 480) {
    Camera cam;
    cam.id = id;
    cam.intrinsics = {focal, focal, w / 2.0, h / 2.0, w, h};
    cam.world_from_camera = look_at(eye, target);
    return cam;
}

// n cameras on a circle of given radius around `center`, all aimed at it.
inline CameraRig ring_rig(int n, double radius, double height, const Vec3& center) {
    CameraRig rig;
    for (int i = 0; i < n; ++i) {
        const double a = 2.0 * kPi * i / n;
        const Vec3 eye(center.x() + radius * std::sin(a), height,
                       center.z() + radius * std::cos(a));
        rig.cameras.push_back(make_camera("cam" + std::to_string(i), eye, center));
    }
    return rig;
}

inline Mat3 random_rotation(Rng& rng, double max_angle) {
    return axis_angle(rng.unit_vector(), rng.uniform(-max_angle, max_angle));
}

// Unique scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& stem) {
        static std::uint64_t counter = 0;
        path = std::filesystem::temp_directory_path() /
               (stem + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testsupport
