#pragma once

#include <vector>

#include "mvanon/geometry.hpp"
#include "mvanon/pointcloud.hpp"

namespace mvanon {

enum class RegistrationMetric { point_to_point, point_to_plane };

struct RegistrationConfig {
    int max_iterations = 50;
    double sigma_init = 0.03;    // m
    double sigma_min = 0.005;    // m
    double sigma_decay = 0.9;
    double outlier_weight = 0.1;
    double convergence_tol_translation = 1e-4;            // m
    double convergence_tol_rotation = 0.01 * kPi / 180.0;  // rad
    RegistrationMetric metric = RegistrationMetric::point_to_point;

    void validate() const;  // throws ConfigInvalid
};

enum class RegistrationStatus { ok, no_correspondences };

struct RegistrationResult {
    RigidTransform pose;
    int iterations = 0;
    double final_residual = 0.0;  // RMS weighted correspondence distance, m
    bool converged = false;
    RegistrationStatus status = RegistrationStatus::ok;
    std::vector<double> residual_history;
};

// EM with Gaussian soft correspondences truncated at 3 sigma plus a uniform
// outlier component; sigma annealed toward sigma_min. When every source
// point's ball is empty at sigma_init the init pose comes back unchanged with
// status no_correspondences.
RegistrationResult filterreg_rigid(const PointCloud& source, const PointCloud& target,
                                   const SpatialIndex& target_index, const RigidTransform& init,
                                   const RegistrationConfig& cfg);

// Classic ICP with hard nearest-neighbor correspondences gated at
// 3 * sigma_min. The residual sequence is non-increasing: an update that
// would raise it is reverted and iteration stops.
RegistrationResult icp_rigid(const PointCloud& source, const PointCloud& target,
                             const SpatialIndex& target_index, const RigidTransform& init,
                             const RegistrationConfig& cfg);

}  // namespace mvanon
