#include "mvanon/pose.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mvanon/canonical_head.hpp"
#include "mvanon/errors.hpp"
#include "mvanon/mathutil.hpp"

namespace mvanon {

int Pose3D::valid_count() const {
    return static_cast<int>(std::count(valid.begin(), valid.end(), true));
}

Vec3 Pose3D::torso_center() const {
    static constexpr int torso[] = {kLeftHip, kRightHip, kLeftShoulder, kRightShoulder};
    Vec3 acc = Vec3::Zero();
    int n = 0;
    for (int j : torso)
        if (valid[j]) {
            acc += joints[j];
            ++n;
        }
    if (n == 0) {
        for (int j = 0; j < kJointCount; ++j)
            if (valid[j]) {
                acc += joints[j];
                ++n;
            }
    }
    return n > 0 ? Vec3(acc / n) : Vec3::Zero();
}

// Hungarian algorithm with row/column potentials, O(n^2 m).
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost, double forbidden_cost) {
    const int rows = static_cast<int>(cost.rows());
    const int cols = static_cast<int>(cost.cols());
    if (rows == 0 || cols == 0) return std::vector<int>(rows, -1);
    if (rows > cols) {
        const std::vector<int> col_to_row = solve_assignment(cost.transpose(), forbidden_cost);
        std::vector<int> out(rows, -1);
        for (int c = 0; c < cols; ++c)
            if (col_to_row[c] >= 0) out[col_to_row[c]] = c;
        return out;
    }

    constexpr double kInf = std::numeric_limits<double>::infinity();
    const int n = rows, m = cols;
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> match(m + 1, 0), way(m + 1, 0);  // 1-based; match[j] = row at column j
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = match[j0];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> out(rows, -1);
    for (int j = 1; j <= m; ++j) {
        if (match[j] == 0) continue;
        const int r = match[j] - 1;
        if (cost(r, j - 1) < forbidden_cost) out[r] = j - 1;
    }
    return out;
}

namespace {

Mat3 intrinsics_inverse(const CameraIntrinsics& k) {
    Mat3 inv = Mat3::Identity();
    inv(0, 0) = 1.0 / k.fx;
    inv(1, 1) = 1.0 / k.fy;
    inv(0, 2) = -k.cx / k.fx;
    inv(1, 2) = -k.cy / k.fy;
    return inv;
}

// Maps pixels of camera a to epipolar lines in camera b.
Mat3 fundamental_matrix(const Camera& a, const Camera& b) {
    const RigidTransform b_from_a = b.camera_from_world() * a.world_from_camera;
    const Vec3& t = b_from_a.translation;
    Mat3 tx;
    tx << 0, -t.z(), t.y(), t.z(), 0, -t.x(), -t.y(), t.x(), 0;
    const Mat3 essential = tx * b_from_a.rotation;
    return intrinsics_inverse(b.intrinsics).transpose() * essential * intrinsics_inverse(a.intrinsics);
}

double point_line_distance(const Vec3& line, const Vec2& x) {
    const double norm = std::hypot(line(0), line(1));
    if (norm < 1e-12) return std::numeric_limits<double>::infinity();
    return std::abs(line(0) * x(0) + line(1) * x(1) + line(2)) / norm;
}

double symmetric_epipolar_distance(const Mat3& f_ab, const Vec2& xa, const Vec2& xb) {
    const Vec3 line_b = f_ab * xa.homogeneous();
    const Vec3 line_a = f_ab.transpose() * xb.homogeneous();
    return 0.5 * (point_line_distance(line_b, xb) + point_line_distance(line_a, xa));
}

}  // namespace

std::vector<std::vector<const Pose2D*>> associate_across_views(
    std::span<const std::vector<Pose2D>> detections_per_camera, const CameraRig& rig,
    double epipolar_gate_px, double min_confidence) {
    struct Item {
        int cam;
        const Pose2D* pose;
    };
    std::vector<Item> items;
    for (std::size_t c = 0; c < detections_per_camera.size(); ++c)
        for (const Pose2D& p : detections_per_camera[c])
            items.push_back({static_cast<int>(c), &p});
    const int n = static_cast<int>(items.size());
    if (n == 0) return {};

    // Pairwise mean symmetric epipolar distance over shared confident joints.
    struct Edge {
        double dist;
        int a, b;
    };
    std::vector<Edge> edges;
    std::vector<std::vector<Mat3>> fmat(detections_per_camera.size());
    for (std::size_t a = 0; a < detections_per_camera.size(); ++a) {
        fmat[a].resize(detections_per_camera.size());
        for (std::size_t b = 0; b < detections_per_camera.size(); ++b) {
            if (a == b || detections_per_camera[a].empty() || detections_per_camera[b].empty())
                continue;
            fmat[a][b] = fundamental_matrix(rig.cameras[a], rig.cameras[b]);
        }
    }
    for (int ia = 0; ia < n; ++ia) {
        for (int ib = ia + 1; ib < n; ++ib) {
            if (items[ia].cam == items[ib].cam) continue;
            const Pose2D& pa = *items[ia].pose;
            const Pose2D& pb = *items[ib].pose;
            const Mat3& f = fmat[items[ia].cam][items[ib].cam];
            double sum = 0.0;
            int shared = 0;
            for (int j = 0; j < kJointCount; ++j) {
                if (pa.joints[j].confidence < min_confidence ||
                    pb.joints[j].confidence < min_confidence)
                    continue;
                const double d =
                    symmetric_epipolar_distance(f, pa.joints[j].pixel, pb.joints[j].pixel);
                if (!std::isfinite(d)) continue;
                sum += d;
                ++shared;
            }
            if (shared == 0) continue;
            const double mean = sum / shared;
            if (mean <= epipolar_gate_px) edges.push_back({mean, ia, ib});
        }
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
        if (x.dist != y.dist) return x.dist < y.dist;
        if (x.a != y.a) return x.a < y.a;
        return x.b < y.b;
    });

    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::vector<std::uint64_t> cams(n);
    for (int i = 0; i < n; ++i) cams[i] = std::uint64_t{1} << items[i].cam;
    const auto find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const Edge& e : edges) {
        const int ra = find(e.a), rb = find(e.b);
        if (ra == rb || (cams[ra] & cams[rb])) continue;  // same-camera clash
        parent[rb] = ra;
        cams[ra] |= cams[rb];
    }

    std::vector<std::vector<const Pose2D*>> groups;
    std::vector<int> root_to_group(n, -1);
    for (int i = 0; i < n; ++i) {
        const int r = find(i);
        if (root_to_group[r] < 0) {
            root_to_group[r] = static_cast<int>(groups.size());
            groups.emplace_back();
        }
        groups[root_to_group[r]].push_back(items[i].pose);
    }
    std::erase_if(groups, [](const auto& g) { return g.size() < 2; });
    return groups;
}

Pose3D lift_to_3d(std::span<const Pose2D* const> group, double min_confidence) {
    Pose3D out;
    for (int j = 0; j < kJointCount; ++j) {
        std::vector<Observation> obs;
        for (const Pose2D* p : group) {
            const Keypoint2D& kp = p->joints[j];
            if (kp.confidence <= 0.0 || kp.confidence < min_confidence) continue;
            obs.push_back({p->camera, kp.pixel, kp.confidence});
        }
        if (obs.size() < 2) continue;
        try {
            out.joints[j] = triangulate_dlt(obs).point;
            out.valid[j] = true;
        } catch (const Error&) {
            // degenerate or behind-camera geometry: leave the joint invalid
        }
    }
    return out;
}

std::vector<Track> track_people(std::span<const std::vector<Pose3D>> frames, double gate,
                                int max_gap, int first_frame_index) {
    constexpr double kForbidden = 1e9;
    struct Active {
        int track;
        int last_frame;
        Vec3 center;
    };
    std::vector<Track> tracks;
    std::vector<Active> active;
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const int frame_index = first_frame_index + static_cast<int>(t);
        std::erase_if(active, [&](const Active& a) {
            return frame_index - a.last_frame - 1 > max_gap;
        });
        std::vector<const Pose3D*> dets;
        for (const Pose3D& p : frames[t])
            if (p.valid_count() > 0) dets.push_back(&p);
        std::vector<int> det_track(dets.size(), -1);
        if (!active.empty() && !dets.empty()) {
            Eigen::MatrixXd cost(active.size(), dets.size());
            for (std::size_t r = 0; r < active.size(); ++r)
                for (std::size_t c = 0; c < dets.size(); ++c) {
                    const double d = (active[r].center - dets[c]->torso_center()).norm();
                    cost(r, c) = d <= gate ? d : kForbidden;
                }
            const auto assignment = solve_assignment(cost, kForbidden);
            for (std::size_t r = 0; r < active.size(); ++r)
                if (assignment[r] >= 0) det_track[assignment[r]] = static_cast<int>(r);
        }
        for (std::size_t c = 0; c < dets.size(); ++c) {
            Pose3D pose = *dets[c];
            pose.frame_index = frame_index;
            if (det_track[c] >= 0) {
                Active& a = active[det_track[c]];
                tracks[a.track].poses.push_back(pose);
                a.last_frame = frame_index;
                a.center = pose.torso_center();
            } else {
                const int id = static_cast<int>(tracks.size());
                Track trk;
                trk.person_id = id;
                trk.texture_id = id;
                trk.poses.push_back(pose);
                tracks.push_back(std::move(trk));
                active.push_back({id, frame_index, pose.torso_center()});
            }
        }
    }
    return tracks;
}

Track smooth_track(const Track& track, int window, int max_interp_gap) {
    if (window < 1 || window % 2 == 0) throw ConfigInvalid("smoothing window must be odd and >= 1");
    if (track.poses.empty()) return track;
    const int first = track.poses.front().frame_index;
    const int last = track.poses.back().frame_index;
    const int len = last - first + 1;
    std::vector<const Pose3D*> slot(len, nullptr);
    for (const Pose3D& p : track.poses) slot[p.frame_index - first] = &p;

    std::vector<std::array<Vec3, kJointCount>> value(len);
    std::vector<std::array<bool, kJointCount>> ok(len);
    for (int s = 0; s < len; ++s) ok[s].fill(false);

    for (int j = 0; j < kJointCount; ++j) {
        for (int s = 0; s < len; ++s) {
            if (slot[s] && slot[s]->valid[j]) {
                value[s][j] = slot[s]->joints[j];
                ok[s][j] = true;
            }
        }
        // Linear fill across interior gaps of at most max_interp_gap frames.
        int prev = -1;
        for (int s = 0; s < len; ++s) {
            if (!ok[s][j]) continue;
            if (prev >= 0 && s - prev > 1 && s - prev - 1 <= max_interp_gap) {
                for (int g = prev + 1; g < s; ++g) {
                    const double f = static_cast<double>(g - prev) / (s - prev);
                    value[g][j] = (1.0 - f) * value[prev][j] + f * value[s][j];
                    ok[g][j] = true;
                }
            }
            prev = s;
        }
    }

    const int half = window / 2;
    const double sigma = window / 6.0;
    std::vector<double> kernel(window);
    for (int d = -half; d <= half; ++d)
        kernel[d + half] = std::exp(-0.5 * d * d / (sigma * sigma));

    Track out;
    out.person_id = track.person_id;
    out.texture_id = track.texture_id;
    for (int s = 0; s < len; ++s) {
        Pose3D pose;
        pose.frame_index = first + s;
        bool any = false;
        for (int j = 0; j < kJointCount; ++j) {
            if (!ok[s][j]) continue;
            Vec3 acc = Vec3::Zero();
            double wsum = 0.0;
            for (int d = -half; d <= half; ++d) {
                const int s2 = s + d;
                if (s2 < 0 || s2 >= len || !ok[s2][j]) continue;
                acc += kernel[d + half] * value[s2][j];
                wsum += kernel[d + half];
            }
            pose.joints[j] = acc / wsum;
            pose.valid[j] = true;
            any = true;
        }
        if (any) out.poses.push_back(pose);
    }
    return out;
}

HeadFrame head_frame(const Pose3D& pose) {
    const bool eyes_ok = pose.valid[kNose] && pose.valid[kLeftEye] && pose.valid[kRightEye];
    const bool ears_ok = pose.valid[kNose] && pose.valid[kLeftEar] && pose.valid[kRightEar];
    if (!eyes_ok && !ears_ok) throw InsufficientHeadJoints();

    // Subject's right: left-joint -> right-joint line.
    const Vec3 right_raw = eyes_ok ? Vec3(pose.joints[kRightEye] - pose.joints[kLeftEye])
                                   : Vec3(pose.joints[kRightEar] - pose.joints[kLeftEar]);
    const Vec3 forward_raw =
        ears_ok ? Vec3(pose.joints[kNose] -
                       0.5 * (pose.joints[kLeftEar] + pose.joints[kRightEar]))
                : Vec3(pose.joints[kNose] -
                       0.5 * (pose.joints[kLeftEye] + pose.joints[kRightEye]));
    if (forward_raw.norm() < 1e-9 || right_raw.norm() < 1e-9) throw InsufficientHeadJoints();

    const Vec3 forward = forward_raw.normalized();
    Vec3 right = right_raw - right_raw.dot(forward) * forward;
    if (right.norm() < 1e-9) throw InsufficientHeadJoints();
    right.normalize();
    const Vec3 up = forward.cross(right);

    HeadFrame out;
    out.pose.rotation.col(0) = right;
    out.pose.rotation.col(1) = up;
    out.pose.rotation.col(2) = forward;

    const std::pair<int, Vec3> landmarks[] = {
        {kNose, canonical::nose_tip()},
        {kLeftEye, canonical::eye_center(false)},
        {kRightEye, canonical::eye_center(true)},
        {kLeftEar, canonical::ear_center(false)},
        {kRightEar, canonical::ear_center(true)},
    };
    Vec3 mean_world = Vec3::Zero(), mean_template = Vec3::Zero();
    int n = 0;
    for (const auto& [joint, tpl] : landmarks) {
        if (!pose.valid[joint]) continue;
        mean_world += pose.joints[joint];
        mean_template += tpl;
        out.used_joints.push_back(joint);
        ++n;
    }
    mean_world /= n;
    mean_template /= n;
    out.pose.translation = mean_world - out.pose.rotation * mean_template;
    return out;
}

}  // namespace mvanon
