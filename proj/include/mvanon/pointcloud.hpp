#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mvanon/geometry.hpp"

namespace mvanon {

struct Image8;

// Single-channel 16-bit depth raster, millimeters. 0 marks a sensor hole,
// never a valid measurement.
struct DepthFrame {
    int width = 0, height = 0;
    std::vector<std::uint16_t> values;

    static constexpr std::uint16_t kMissing = 0;

    DepthFrame() = default;
    DepthFrame(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0) {}

    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
    std::uint16_t at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    std::uint16_t& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }

    // Meters; nullopt for holes and out-of-bounds pixels.
    std::optional<double> depth_m(int x, int y) const {
        if (!in_bounds(x, y)) return std::nullopt;
        const std::uint16_t v = at(x, y);
        if (v == kMissing) return std::nullopt;
        return v * 1e-3;
    }
};

using Color3 = std::array<std::uint8_t, 3>;

// World-frame points with optional per-point colors and unit normals.
// Optional attributes are either empty or exactly parallel to points.
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Color3> colors;
    std::vector<Vec3> normals;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool has_colors() const { return !colors.empty(); }
    bool has_normals() const { return !normals.empty(); }
};

// Immutable k-d tree over a snapshot of the cloud's points.
class SpatialIndex {
public:
    explicit SpatialIndex(const PointCloud& cloud) : SpatialIndex(cloud.points) {}
    explicit SpatialIndex(std::span<const Vec3> points);

    std::size_t size() const { return points_.size(); }
    const Vec3& point(int i) const { return points_[i]; }

    // Index of the nearest point, -1 on an empty index.
    int nearest(const Vec3& query, double* dist_sq_out = nullptr) const;

    // Indices of all points with ||p - query|| <= radius, unordered.
    std::vector<int> radius(const Vec3& query, double r) const;

    // Indices of the k nearest points, ascending by distance.
    std::vector<int> k_nearest(const Vec3& query, int k) const;

private:
    struct Node {
        int axis = -1;          // -1 marks a leaf
        double split = 0.0;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf payload range in order_
    };

    int build(int begin, int end);
    void search_nearest(int node, const Vec3& q, int& best, double& best_sq) const;
    void search_radius(int node, const Vec3& q, double r_sq, std::vector<int>& out) const;
    void search_knn(int node, const Vec3& q, int k,
                    std::vector<std::pair<double, int>>& heap) const;

    std::vector<Vec3> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

// Backprojects every valid depth pixel on the stride grid to a world-space
// point. Colors are attached when a color frame is supplied.
PointCloud unproject_depth(const Camera& camera, const DepthFrame& depth, int stride,
                           const Image8* color = nullptr);

// Concatenation of world-frame clouds. Throws AttributeMismatch when some
// inputs carry an optional attribute and others do not.
PointCloud fuse(std::span<const PointCloud> clouds);

// Exactly the points with ||p - center|| <= radius, attributes preserved.
PointCloud crop_sphere(const PointCloud& cloud, const Vec3& center, double radius);

// Normal = smallest eigenvector of the k-NN covariance, oriented toward the
// viewpoint. Throws TooFewPoints when cloud size < k or k < 3.
PointCloud estimate_normals(const PointCloud& cloud, int k, const Vec3& viewpoint);

}  // namespace mvanon
