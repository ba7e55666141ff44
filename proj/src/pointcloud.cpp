#include "mvanon/pointcloud.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "mvanon/errors.hpp"
#include "mvanon/image.hpp"

namespace mvanon {

namespace {
constexpr int kLeafSize = 8;
}

SpatialIndex::SpatialIndex(std::span<const Vec3> points)
    : points_(points.begin(), points.end()) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (!points_.empty()) {
        nodes_.reserve(2 * points_.size() / kLeafSize + 2);
        root_ = build(0, static_cast<int>(points_.size()));
    }
}

int SpatialIndex::build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    if (end - begin <= kLeafSize) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }
    Vec3 lo = points_[order_[begin]], hi = lo;
    for (int i = begin + 1; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return points_[a](axis) < points_[b](axis); });
    nodes_[id].axis = axis;
    nodes_[id].split = points_[order_[mid]](axis);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

void SpatialIndex::search_nearest(int node, const Vec3& q, int& best, double& best_sq) const {
    const Node& n = nodes_[node];
    if (n.axis < 0) {
        for (int i = n.begin; i < n.end; ++i) {
            const int idx = order_[i];
            const double d = (points_[idx] - q).squaredNorm();
            if (d < best_sq || (d == best_sq && (best < 0 || idx < best))) {
                best_sq = d;
                best = idx;
            }
        }
        return;
    }
    const double delta = q(n.axis) - n.split;
    const int near = delta < 0 ? n.left : n.right;
    const int far = delta < 0 ? n.right : n.left;
    search_nearest(near, q, best, best_sq);
    if (delta * delta <= best_sq) search_nearest(far, q, best, best_sq);
}

int SpatialIndex::nearest(const Vec3& query, double* dist_sq_out) const {
    if (root_ < 0) return -1;
    int best = -1;
    double best_sq = std::numeric_limits<double>::infinity();
    search_nearest(root_, query, best, best_sq);
    if (dist_sq_out) *dist_sq_out = best_sq;
    return best;
}

void SpatialIndex::search_radius(int node, const Vec3& q, double r_sq,
                                 std::vector<int>& out) const {
    const Node& n = nodes_[node];
    if (n.axis < 0) {
        for (int i = n.begin; i < n.end; ++i) {
            const int idx = order_[i];
            if ((points_[idx] - q).squaredNorm() <= r_sq) out.push_back(idx);
        }
        return;
    }
    const double delta = q(n.axis) - n.split;
    const int near = delta < 0 ? n.left : n.right;
    const int far = delta < 0 ? n.right : n.left;
    search_radius(near, q, r_sq, out);
    if (delta * delta <= r_sq) search_radius(far, q, r_sq, out);
}

std::vector<int> SpatialIndex::radius(const Vec3& query, double r) const {
    std::vector<int> out;
    if (root_ < 0 || r < 0) return out;
    search_radius(root_, query, r * r, out);
    return out;
}

void SpatialIndex::search_knn(int node, const Vec3& q, int k,
                              std::vector<std::pair<double, int>>& heap) const {
    const Node& n = nodes_[node];
    if (n.axis < 0) {
        for (int i = n.begin; i < n.end; ++i) {
            const int idx = order_[i];
            const double d = (points_[idx] - q).squaredNorm();
            // Ties break toward the lower index so queries are deterministic.
            const std::pair<double, int> cand{d, idx};
            if (static_cast<int>(heap.size()) < k) {
                heap.push_back(cand);
                std::push_heap(heap.begin(), heap.end());
            } else if (cand < heap.front()) {
                std::pop_heap(heap.begin(), heap.end());
                heap.back() = cand;
                std::push_heap(heap.begin(), heap.end());
            }
        }
        return;
    }
    const double delta = q(n.axis) - n.split;
    const int near = delta < 0 ? n.left : n.right;
    const int far = delta < 0 ? n.right : n.left;
    search_knn(near, q, k, heap);
    if (static_cast<int>(heap.size()) < k || delta * delta <= heap.front().first)
        search_knn(far, q, k, heap);
}

std::vector<int> SpatialIndex::k_nearest(const Vec3& query, int k) const {
    std::vector<int> out;
    if (root_ < 0 || k <= 0) return out;
    std::vector<std::pair<double, int>> heap;
    heap.reserve(k);
    search_knn(root_, query, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    out.reserve(heap.size());
    for (const auto& [d, idx] : heap) out.push_back(idx);
    return out;
}

PointCloud unproject_depth(const Camera& camera, const DepthFrame& depth, int stride,
                           const Image8* color) {
    if (stride < 1) throw ConfigInvalid("unproject stride must be >= 1");
    PointCloud cloud;
    const RigidTransform& world_from_cam = camera.world_from_camera;
    for (int y = 0; y < depth.height; y += stride) {
        for (int x = 0; x < depth.width; x += stride) {
            const auto z = depth.depth_m(x, y);
            if (!z) continue;
            const Vec3 ray = pixel_ray(camera.intrinsics, Vec2(x, y));
            cloud.points.push_back(world_from_cam.apply(ray * *z));
            if (color && color->in_bounds(x, y)) {
                const auto* p = color->px(x, y);
                cloud.colors.push_back({p[0], p[1], p[2]});
            }
        }
    }
    if (color && cloud.colors.size() != cloud.points.size())
        cloud.colors.clear();  // color frame smaller than depth: drop rather than misalign
    return cloud;
}

PointCloud fuse(std::span<const PointCloud> clouds) {
    PointCloud out;
    bool any_colors = false, any_normals = false, all_colors = true, all_normals = true;
    std::size_t total = 0;
    for (const auto& c : clouds) {
        if (c.empty()) continue;
        total += c.size();
        any_colors |= c.has_colors();
        any_normals |= c.has_normals();
        all_colors &= c.has_colors();
        all_normals &= c.has_normals();
    }
    if (total == 0) return out;
    if ((any_colors && !all_colors) || (any_normals && !all_normals))
        throw AttributeMismatch();
    out.points.reserve(total);
    if (any_colors) out.colors.reserve(total);
    if (any_normals) out.normals.reserve(total);
    for (const auto& c : clouds) {
        out.points.insert(out.points.end(), c.points.begin(), c.points.end());
        if (any_colors) out.colors.insert(out.colors.end(), c.colors.begin(), c.colors.end());
        if (any_normals) out.normals.insert(out.normals.end(), c.normals.begin(), c.normals.end());
    }
    return out;
}

PointCloud crop_sphere(const PointCloud& cloud, const Vec3& center, double radius) {
    PointCloud out;
    const double r_sq = radius * radius;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if ((cloud.points[i] - center).squaredNorm() > r_sq) continue;
        out.points.push_back(cloud.points[i]);
        if (cloud.has_colors()) out.colors.push_back(cloud.colors[i]);
        if (cloud.has_normals()) out.normals.push_back(cloud.normals[i]);
    }
    return out;
}

PointCloud estimate_normals(const PointCloud& cloud, int k, const Vec3& viewpoint) {
    if (k < 3 || cloud.size() < static_cast<std::size_t>(k)) throw TooFewPoints();
    PointCloud out = cloud;
    out.normals.assign(cloud.size(), Vec3::UnitZ());
    const SpatialIndex index(cloud);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto nn = index.k_nearest(cloud.points[i], k);
        Vec3 mean = Vec3::Zero();
        for (int j : nn) mean += cloud.points[j];
        mean /= static_cast<double>(nn.size());
        Mat3 cov = Mat3::Zero();
        for (int j : nn) {
            const Vec3 d = cloud.points[j] - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
        Vec3 n = eig.eigenvectors().col(0);  // smallest eigenvalue first
        const double len = n.norm();
        n = len > 0 ? Vec3(n / len) : Vec3::UnitZ();
        if (n.dot(viewpoint - cloud.points[i]) < 0) n = -n;
        out.normals[i] = n;
    }
    return out;
}

}  // namespace mvanon
