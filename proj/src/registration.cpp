#include "mvanon/registration.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

#include "mvanon/errors.hpp"
#include "mvanon/mathutil.hpp"

namespace mvanon {

void RegistrationConfig::validate() const {
    if (max_iterations < 1) throw ConfigInvalid("max_iterations must be >= 1");
    if (!(sigma_min > 0.0) || sigma_init < sigma_min)
        throw ConfigInvalid("requires sigma_init >= sigma_min > 0");
    if (!(sigma_decay > 0.0) || sigma_decay > 1.0)
        throw ConfigInvalid("sigma_decay must be in (0,1]");
    if (outlier_weight < 0.0 || outlier_weight >= 1.0)
        throw ConfigInvalid("outlier_weight must be in [0,1)");
    if (!(convergence_tol_translation > 0.0) || !(convergence_tol_rotation > 0.0))
        throw ConfigInvalid("convergence tolerances must be positive");
}

namespace {

bool pose_step_below(const RigidTransform& a, const RigidTransform& b,
                     const RegistrationConfig& cfg) {
    return (a.translation - b.translation).norm() < cfg.convergence_tol_translation &&
           rotation_distance(a.rotation, b.rotation) < cfg.convergence_tol_rotation;
}

// Weighted point-to-plane step linearized about `current`: solves for a twist
// (omega, dt) applied on the left of the current pose.
RigidTransform solve_point_to_plane(const std::vector<Vec3>& moved,
                                    const std::vector<Vec3>& targets,
                                    const std::vector<Vec3>& normals,
                                    const std::vector<double>& weights,
                                    const RigidTransform& current) {
    Eigen::Matrix<double, 6, 6> ata = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> atb = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t i = 0; i < moved.size(); ++i) {
        const Vec3& n = normals[i];
        Eigen::Matrix<double, 6, 1> a;
        a << moved[i].cross(n), n;
        const double b = n.dot(targets[i] - moved[i]);
        ata.noalias() += weights[i] * a * a.transpose();
        atb.noalias() += weights[i] * a * b;
    }
    // Tiny Tikhonov term keeps sliding-direction nullspaces harmless.
    ata.diagonal().array() += 1e-12 * (1.0 + ata.trace());
    const Eigen::Matrix<double, 6, 1> xi = ata.ldlt().solve(atb);
    const Vec3 omega = xi.head<3>();
    const Vec3 dt = xi.tail<3>();
    const double angle = omega.norm();
    const Mat3 delta_r =
        angle > 0 ? axis_angle(omega / angle, angle) : Mat3::Identity();
    RigidTransform next;
    next.rotation = delta_r * current.rotation;
    next.translation = delta_r * current.translation + dt;
    return next;
}

}  // namespace

RegistrationResult filterreg_rigid(const PointCloud& source, const PointCloud& target,
                                   const SpatialIndex& target_index, const RigidTransform& init,
                                   const RegistrationConfig& cfg) {
    cfg.validate();
    if (source.empty() || target.empty()) throw EmptyInput();
    if (cfg.metric == RegistrationMetric::point_to_plane && !target.has_normals())
        throw MissingNormals();

    // Uniform outlier density ~ 1/V over the target's bounding box.
    Vec3 lo = target.points.front(), hi = lo;
    for (const Vec3& p : target.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vec3 extent = (hi - lo).cwiseMax(1e-3);
    const double volume = extent.prod();
    const double m_count = static_cast<double>(target.size());

    RegistrationResult result;
    result.pose = init;
    double sigma = cfg.sigma_init;

    const std::size_t n = source.size();
    // Zero-weight slots still reach the weighted solve; keep them finite.
    std::vector<Vec3> virt(n, Vec3::Zero()), vnorm(n, Vec3::Zero());
    std::vector<double> weight(n);

    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
        const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
        // Constant that turns the uniform component into the same scale as
        // the un-normalized Gaussian responsibilities.
        const double outlier_c =
            cfg.outlier_weight > 0.0
                ? std::pow(2.0 * kPi * sigma * sigma, 1.5) *
                      (cfg.outlier_weight / (1.0 - cfg.outlier_weight)) * (m_count / volume)
                : 0.0;

        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
            weight[i] = 0.0;
            const Vec3 x = result.pose.apply(source.points[i]);
            const auto nn = target_index.radius(x, 3.0 * sigma);
            if (nn.empty()) continue;
            double g_sum = 0.0;
            Vec3 m_acc = Vec3::Zero(), n_acc = Vec3::Zero();
            for (int j : nn) {
                const double g =
                    std::exp(-(target.points[j] - x).squaredNorm() * inv_two_sigma_sq);
                g_sum += g;
                m_acc += g * target.points[j];
                if (cfg.metric == RegistrationMetric::point_to_plane)
                    n_acc += g * target.normals[j];
            }
            if (g_sum <= 0.0) continue;
            virt[i] = m_acc / g_sum;
            weight[i] = g_sum / (g_sum + outlier_c);
            if (cfg.metric == RegistrationMetric::point_to_plane) {
                const double len = n_acc.norm();
                if (len <= 1e-12) {
                    weight[i] = 0.0;
                    continue;
                }
                vnorm[i] = n_acc / len;
            }
            any = true;
        }
        if (!any) {
            if (iter == 0) result.status = RegistrationStatus::no_correspondences;
            break;
        }

        RigidTransform next;
        if (cfg.metric == RegistrationMetric::point_to_point) {
            next = weighted_rigid_align(source.points, virt, weight);
        } else {
            std::vector<Vec3> moved, tgt, nrm;
            std::vector<double> w;
            for (std::size_t i = 0; i < n; ++i) {
                if (weight[i] <= 0.0) continue;
                moved.push_back(result.pose.apply(source.points[i]));
                tgt.push_back(virt[i]);
                nrm.push_back(vnorm[i]);
                w.push_back(weight[i]);
            }
            next = solve_point_to_plane(moved, tgt, nrm, w, result.pose);
        }

        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (weight[i] <= 0.0) continue;
            num += weight[i] * (next.apply(source.points[i]) - virt[i]).squaredNorm();
            den += weight[i];
        }
        result.final_residual = den > 0.0 ? std::sqrt(num / den) : 0.0;
        result.residual_history.push_back(result.final_residual);

        const bool small_step = pose_step_below(next, result.pose, cfg);
        result.pose = next;
        ++result.iterations;
        if (small_step) {
            result.converged = true;
            break;
        }
        sigma = std::max(cfg.sigma_min, sigma * cfg.sigma_decay);
    }
    return result;
}

RegistrationResult icp_rigid(const PointCloud& source, const PointCloud& target,
                             const SpatialIndex& target_index, const RigidTransform& init,
                             const RegistrationConfig& cfg) {
    cfg.validate();
    if (source.empty() || target.empty()) throw EmptyInput();
    if (cfg.metric == RegistrationMetric::point_to_plane && !target.has_normals())
        throw MissingNormals();

    const double gate = 3.0 * cfg.sigma_min;
    const double gate_sq = gate * gate;

    RegistrationResult result;
    result.pose = init;
    double prev_residual = std::numeric_limits<double>::infinity();
    RigidTransform prev_pose = init;

    while (result.iterations < cfg.max_iterations) {
        std::vector<Vec3> src, tgt, nrm, moved;
        std::vector<double> w;
        double sum_sq = 0.0;
        for (const Vec3& s : source.points) {
            const Vec3 x = result.pose.apply(s);
            double dist_sq = 0.0;
            const int j = target_index.nearest(x, &dist_sq);
            if (j < 0 || dist_sq > gate_sq) continue;
            src.push_back(s);
            moved.push_back(x);
            tgt.push_back(target.points[j]);
            if (cfg.metric == RegistrationMetric::point_to_plane)
                nrm.push_back(target.normals[j]);
            w.push_back(1.0);
            sum_sq += dist_sq;
        }
        if (src.empty()) {
            if (result.residual_history.empty())
                result.status = RegistrationStatus::no_correspondences;
            break;
        }
        const double residual = std::sqrt(sum_sq / static_cast<double>(src.size()));
        if (residual > prev_residual + 1e-12) {
            result.pose = prev_pose;  // the update made things worse: keep the better pose
            break;
        }
        result.residual_history.push_back(residual);
        result.final_residual = residual;
        prev_residual = residual;
        prev_pose = result.pose;
        if (residual == 0.0) {
            result.converged = true;
            break;
        }

        RigidTransform next;
        if (cfg.metric == RegistrationMetric::point_to_point) {
            next = weighted_rigid_align(src, tgt, w);
        } else {
            next = solve_point_to_plane(moved, tgt, nrm, w, result.pose);
        }
        ++result.iterations;
        if (pose_step_below(next, result.pose, cfg)) {
            result.pose = next;
            result.converged = true;
            break;
        }
        result.pose = next;
    }
    return result;
}

}  // namespace mvanon
