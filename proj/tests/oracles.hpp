#pragma once

// Independent brute-force oracles for the test suites. Everything here
// deliberately avoids the library's solver paths: distances come from a
// quaternion asin identity, barycenters from grid search plus compass-search
// refinement, kinematics from a plain matrix recursion, and synchronization
// from an O(n*m) scan.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "roshi/skeleton.hpp"
#include "roshi/so3.hpp"

namespace oracles {

/// Geodesic distance via 2*asin of the relative quaternion's vector norm.
inline double quat_angle(const roshi::Rotation& a, const roshi::Rotation& b) {
    Eigen::Quaterniond d = a.quaternion().conjugate() * b.quaternion();
    if (d.w() < 0) d.coeffs() = -d.coeffs();
    const double s = std::min(1.0, Eigen::Vector3d(d.x(), d.y(), d.z()).norm());
    return 2.0 * std::asin(s);
}

inline double weighted_objective(const roshi::Rotation& r,
                                 std::span<const roshi::Rotation> samples,
                                 std::span<const double> weights) {
    double sum = 0.0;
    for (std::size_t j = 0; j < samples.size(); ++j) {
        const double d = quat_angle(r, samples[j]);
        sum += (weights.empty() ? 1.0 : weights[j]) * d * d;
    }
    return sum;
}

/// Compass search in the tangent chart at `start`, halving the step until
/// step_min. Gradient-free, so independent of the fixed-point iteration.
inline roshi::Rotation compass_refine(const roshi::Rotation& start,
                                      std::span<const roshi::Rotation> samples,
                                      std::span<const double> weights, double step0,
                                      double step_min = 1e-8) {
    roshi::Rotation best = start;
    double best_value = weighted_objective(best, samples, weights);
    double step = step0;
    while (step > step_min) {
        bool improved = true;
        while (improved) {
            improved = false;
            for (int axis = 0; axis < 3; ++axis) {
                for (double sign : {1.0, -1.0}) {
                    Eigen::Vector3d v = Eigen::Vector3d::Zero();
                    v[axis] = sign * step;
                    const roshi::Rotation candidate = best * roshi::Rotation::exp(v);
                    const double value = weighted_objective(candidate, samples, weights);
                    if (value < best_value) {
                        best = candidate;
                        best_value = value;
                        improved = true;
                    }
                }
            }
        }
        step /= 2.0;
    }
    return best;
}

/// Grid-then-refine brute-force barycenter: dense tangent grid centered at
/// samples[0], then compass refinement of the best grid point.
inline roshi::Rotation karcher_oracle(std::span<const roshi::Rotation> samples,
                                      std::span<const double> weights = {},
                                      double grid_span = 0.7, double grid_step = 0.07) {
    const roshi::Rotation center = samples[0];
    roshi::Rotation best = center;
    double best_value = weighted_objective(best, samples, weights);
    const int n = static_cast<int>(std::ceil(grid_span / grid_step));
    for (int ix = -n; ix <= n; ++ix) {
        for (int iy = -n; iy <= n; ++iy) {
            for (int iz = -n; iz <= n; ++iz) {
                const Eigen::Vector3d v(ix * grid_step, iy * grid_step, iz * grid_step);
                const roshi::Rotation candidate = center * roshi::Rotation::exp(v);
                const double value = weighted_objective(candidate, samples, weights);
                if (value < best_value) {
                    best = candidate;
                    best_value = value;
                }
            }
        }
    }
    return compass_refine(best, samples, weights, grid_step);
}

/// 1e-4-step scan over the yaw angle, then ternary refinement around the
/// best grid point.
inline double yaw_scan_oracle(const roshi::Rotation& r, const Eigen::Vector3d& axis,
                              double coarse_step = 1e-4) {
    const auto objective = [&](double angle) {
        return quat_angle(r, roshi::Rotation::from_axis_angle(axis, angle));
    };
    double best_angle = 0.0;
    double best_value = objective(0.0);
    const double pi = std::numbers::pi;
    for (double a = -pi; a < pi; a += coarse_step) {
        const double v = objective(a);
        if (v < best_value) {
            best_value = v;
            best_angle = a;
        }
    }
    double lo = best_angle - coarse_step, hi = best_angle + coarse_step;
    while (hi - lo > 1e-10) {
        const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
        if (objective(m1) < objective(m2)) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    return (lo + hi) / 2.0;
}

/// Naive FK oracle: per-joint matrix chains, no shared accumulation.
struct MatrixFk {
    std::vector<Eigen::Matrix3d> orientation;
    std::vector<Eigen::Vector3d> position;
};

inline MatrixFk matrix_chain_fk(const roshi::SkeletonModel& skeleton,
                                const roshi::PoseFrame& pose) {
    const auto& joints = skeleton.joints();
    MatrixFk fk;
    fk.orientation.resize(joints.size());
    fk.position.resize(joints.size());
    for (std::size_t j = 0; j < joints.size(); ++j) {
        // Walk the full chain from the root for every joint.
        std::vector<int> chain;
        for (int a = static_cast<int>(j); a >= 0; a = joints[static_cast<std::size_t>(a)].parent) {
            chain.push_back(a);
        }
        std::reverse(chain.begin(), chain.end());
        Eigen::Matrix3d r = pose.root_orientation.matrix();
        Eigen::Vector3d p = pose.root_position;
        for (std::size_t c = 1; c < chain.size(); ++c) {
            const int jc = chain[c];
            p += r * joints[static_cast<std::size_t>(jc)].offset;
            r = r * pose.joint_rotations[static_cast<std::size_t>(jc - 1)].matrix();
        }
        fk.orientation[j] = r;
        fk.position[j] = p;
    }
    return fk;
}

/// Exhaustive nearest-neighbor match: for each reference timestamp, scan the
/// whole stream; ties go to the earlier sample.
struct NnMatch {
    bool valid = false;
    std::size_t index = 0;
    std::int64_t gap = 0;
};

inline std::vector<NnMatch> nn_scan(const std::vector<std::int64_t>& ref,
                                    const std::vector<std::int64_t>& stream,
                                    std::int64_t max_gap) {
    std::vector<NnMatch> out(ref.size());
    for (std::size_t k = 0; k < ref.size(); ++k) {
        if (stream.empty()) continue;
        std::size_t best = 0;
        std::int64_t best_abs = std::llabs(stream[0] - ref[k]);
        for (std::size_t i = 1; i < stream.size(); ++i) {
            const std::int64_t d = std::llabs(stream[i] - ref[k]);
            if (d < best_abs) {
                best_abs = d;
                best = i;
            }
        }
        out[k].index = best;
        out[k].gap = stream[best] - ref[k];
        out[k].valid = best_abs <= max_gap;
    }
    return out;
}

}  // namespace oracles
