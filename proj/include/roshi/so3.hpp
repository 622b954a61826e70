#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "roshi/errors.hpp"
#include "roshi/random.hpp"

namespace roshi {

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// An SO(3) element stored as a unit quaternion with canonical sign
/// (w >= 0, ties broken on the first nonzero vector component), so q and -q
/// collapse to one representative and serialization is deterministic.
class Rotation {
public:
    Rotation() : q_(1.0, 0.0, 0.0, 0.0) {}

    static Rotation identity() { return Rotation(); }

    static Rotation from_quaternion(double w, double x, double y, double z) {
        return Rotation(Eigen::Quaterniond(w, x, y, z));
    }

    static Rotation from_quaternion(const Eigen::Quaterniond& q) { return Rotation(q); }

    static Rotation from_matrix(const Eigen::Matrix3d& m) {
        return Rotation(Eigen::Quaterniond(m));
    }

    /// axis need not be normalized; angle in radians.
    static Rotation from_axis_angle(const Eigen::Vector3d& axis, double angle) {
        const double n = axis.norm();
        if (n == 0.0) throw std::invalid_argument("Rotation: zero axis");
        return Rotation(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis / n)));
    }

    /// Exponential map so(3) -> SO(3). Accepts any rotation vector.
    static Rotation exp(const Eigen::Vector3d& v) {
        const double theta = v.norm();
        double w, k;
        if (theta < 1e-8) {
            // sin(t/2)/t and cos(t/2) to second order
            w = 1.0 - theta * theta / 8.0;
            k = 0.5 - theta * theta / 48.0;
        } else {
            w = std::cos(0.5 * theta);
            k = std::sin(0.5 * theta) / theta;
        }
        return Rotation(Eigen::Quaterniond(w, k * v.x(), k * v.y(), k * v.z()));
    }

    static Rotation rot_x(double angle) { return from_axis_angle(Eigen::Vector3d::UnitX(), angle); }
    static Rotation rot_y(double angle) { return from_axis_angle(Eigen::Vector3d::UnitY(), angle); }
    static Rotation rot_z(double angle) { return from_axis_angle(Eigen::Vector3d::UnitZ(), angle); }

    /// Canonical unit quaternion view (w >= 0).
    const Eigen::Quaterniond& quaternion() const { return q_; }

    Eigen::Matrix3d matrix() const { return q_.toRotationMatrix(); }

    /// Logarithm map, principal branch: returns the rotation vector with
    /// norm in [0, pi].
    Eigen::Vector3d log() const {
        const Eigen::Vector3d v(q_.x(), q_.y(), q_.z());
        const double s = v.norm();
        const double w = std::abs(q_.w());
        if (s < 1e-12) return 2.0 * v;  // first order, w ~ 1
        const double theta = 2.0 * std::atan2(s, w);
        return v * (theta / s);
    }

    /// Rotation angle in [0, pi].
    double angle() const {
        const double s = Eigen::Vector3d(q_.x(), q_.y(), q_.z()).norm();
        return 2.0 * std::atan2(s, std::abs(q_.w()));
    }

    Rotation inverse() const {
        Rotation r;
        r.q_ = q_.conjugate();  // already canonical: w unchanged
        r.canonicalize();
        return r;
    }

    /// Frame-chain composition: (aRb) * (bRc) = aRc.
    Rotation operator*(const Rotation& other) const { return Rotation(q_ * other.q_); }

    /// Rotate a vector.
    Eigen::Vector3d operator*(const Eigen::Vector3d& v) const { return q_ * v; }

    bool is_approx(const Rotation& other, double tol_rad = 1e-9) const;

private:
    // Skips the divide when the norm is already unit to machine precision, so
    // serialize/deserialize round trips are bit-stable.
    explicit Rotation(const Eigen::Quaterniond& q) : q_(q) {
        const double n2 = q.squaredNorm();
        if (n2 <= 0.0 || !std::isfinite(n2)) {
            throw std::invalid_argument("Rotation: quaternion with zero or non-finite norm");
        }
        if (std::abs(n2 - 1.0) > 1e-12) q_.normalize();
        canonicalize();
    }

    void canonicalize() {
        if (q_.w() < 0.0) {
            q_.coeffs() = -q_.coeffs();
        } else if (q_.w() == 0.0) {
            for (int i = 0; i < 3; ++i) {
                const double c = q_.coeffs()[i];  // (x, y, z, w) order
                if (c > 0.0) break;
                if (c < 0.0) {
                    q_.coeffs() = -q_.coeffs();
                    break;
                }
            }
        }
    }

    Eigen::Quaterniond q_;
};

/// Identical to a.inverse() * b's angle: || log(a^T b) ||, in [0, pi].
inline double geodesic_distance(const Rotation& a, const Rotation& b) {
    const Eigen::Quaterniond d = a.quaternion().conjugate() * b.quaternion();
    const double s = Eigen::Vector3d(d.x(), d.y(), d.z()).norm();
    return 2.0 * std::atan2(s, std::abs(d.w()));
}

inline bool Rotation::is_approx(const Rotation& other, double tol_rad) const {
    return geodesic_distance(*this, other) <= tol_rad;
}

inline Rotation compose(const Rotation& a, const Rotation& b) { return a * b; }

struct LogResult {
    Eigen::Vector3d vector;
    /// Set when the angle is within 1e-7 of pi; the axis sign is then
    /// unreliable (log has two equally valid branches).
    bool branch_ambiguous = false;
};

inline LogResult log_checked(const Rotation& r) {
    LogResult out{r.log(), false};
    out.branch_ambiguous = std::abs(r.angle() - std::numbers::pi) < 1e-7;
    return out;
}

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d s;
    s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return s;
}

/// Inverse of the SO(3) right Jacobian at phi. Needed to differentiate
/// geodesic residuals log(A exp(d) B) with respect to d.
inline Eigen::Matrix3d right_jacobian_inverse(const Eigen::Vector3d& phi) {
    const double theta = phi.norm();
    const Eigen::Matrix3d px = skew(phi);
    double c;
    if (theta < 1e-5) {
        c = 1.0 / 12.0 + theta * theta / 720.0;
    } else {
        c = 1.0 / (theta * theta) -
            (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
    }
    return Eigen::Matrix3d::Identity() + 0.5 * px + c * px * px;
}

// --- Karcher mean -----------------------------------------------------------

struct KarcherOptions {
    /// Nonnegative per-sample weights; empty means uniform.
    std::vector<double> weights;
    /// One trim pass: samples farther than this from the converged mean are
    /// dropped and the remainder re-averaged. Disabled when unset.
    std::optional<double> trim_threshold_rad;
    double tol_rad = 1e-10;
    int max_iterations = 100;
};

struct KarcherDiagnostics {
    int iterations = 0;
    double gradient_norm = 0.0;
    double max_residual_rad = 0.0;
    int trimmed_count = 0;
};

struct KarcherResult {
    Rotation mean;
    KarcherDiagnostics diagnostics;
};

class KarcherConvergenceError : public ConvergenceError {
public:
    KarcherConvergenceError(const std::string& msg, double gradient_norm, Rotation best)
        : ConvergenceError(msg, gradient_norm), best_iterate(best) {}
    Rotation best_iterate;
};

/// Gradient of F(R) = sum_j w_j d_g(R, R_j)^2 with respect to a right
/// tangent perturbation of R: -2 sum_j w_j log(R^T R_j).
inline Eigen::Vector3d karcher_objective_gradient(const Rotation& r,
                                                  std::span<const Rotation> samples,
                                                  std::span<const double> weights = {}) {
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    const Rotation rinv = r.inverse();
    for (std::size_t j = 0; j < samples.size(); ++j) {
        const double w = weights.empty() ? 1.0 : weights[j];
        g -= 2.0 * w * (rinv * samples[j]).log();
    }
    return g;
}

namespace detail {

struct FixedPointOutcome {
    Rotation mean;
    int iterations;
    double gradient_norm;
    bool converged;
};

inline FixedPointOutcome karcher_fixed_point(std::span<const Rotation> samples,
                                             std::span<const double> weights,
                                             const Rotation& init,
                                             double tol_rad, int max_iterations) {
    double weight_sum = 0.0;
    for (double w : weights) weight_sum += w;

    Rotation mean = init;
    int it = 0;
    for (; it < max_iterations; ++it) {
        Eigen::Vector3d step = Eigen::Vector3d::Zero();
        const Rotation minv = mean.inverse();
        for (std::size_t j = 0; j < samples.size(); ++j) {
            step += weights[j] * (minv * samples[j]).log();
        }
        step /= weight_sum;
        if (step.norm() < tol_rad) {
            return {mean, it, 2.0 * weight_sum * step.norm(), true};
        }
        mean = mean * Rotation::exp(step);
    }
    // Report the gradient at the last iterate.
    const double g = karcher_objective_gradient(mean, samples, weights).norm();
    return {mean, it, g, false};
}

}  // namespace detail

/// Weighted barycenter on SO(3): the local minimizer of
/// sum_j w_j d_g(R, R_j)^2, found by fixed-point tangent-space averaging
/// initialized at the sample with least summed distance to the others.
/// Well-posed when the samples fit inside an injectivity-radius ball, which
/// calibration data does.
inline KarcherResult karcher_mean(std::span<const Rotation> samples,
                                  const KarcherOptions& options = {}) {
    if (samples.empty()) throw std::invalid_argument("karcher_mean: empty sample set");
    std::vector<double> weights = options.weights;
    if (weights.empty()) {
        weights.assign(samples.size(), 1.0);
    } else if (weights.size() != samples.size()) {
        throw std::invalid_argument("karcher_mean: weights/samples size mismatch");
    }
    double weight_sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("karcher_mean: negative weight");
        weight_sum += w;
    }
    if (weight_sum <= 0.0) throw std::invalid_argument("karcher_mean: weights sum to zero");

    KarcherResult result;
    if (samples.size() == 1) {
        result.mean = samples[0];
        result.diagnostics.max_residual_rad = 0.0;
        return result;
    }

    // Initialize at the sample with least weighted summed distance.
    std::size_t best = 0;
    double best_sum = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < samples.size(); ++j) {
            s += weights[j] * geodesic_distance(samples[i], samples[j]);
        }
        if (s < best_sum) {
            best_sum = s;
            best = i;
        }
    }

    auto outcome = detail::karcher_fixed_point(samples, weights, samples[best],
                                               options.tol_rad, options.max_iterations);
    if (!outcome.converged) {
        throw KarcherConvergenceError("karcher_mean: no convergence after " +
                                          std::to_string(options.max_iterations) + " iterations",
                                      outcome.gradient_norm, outcome.mean);
    }

    int trimmed = 0;
    if (options.trim_threshold_rad) {
        std::vector<Rotation> kept;
        std::vector<double> kept_w;
        kept.reserve(samples.size());
        kept_w.reserve(samples.size());
        for (std::size_t j = 0; j < samples.size(); ++j) {
            if (geodesic_distance(outcome.mean, samples[j]) <= *options.trim_threshold_rad) {
                kept.push_back(samples[j]);
                kept_w.push_back(weights[j]);
            }
        }
        trimmed = static_cast<int>(samples.size() - kept.size());
        if (!kept.empty() && trimmed > 0) {
            auto re = detail::karcher_fixed_point(kept, kept_w, outcome.mean,
                                                  options.tol_rad, options.max_iterations);
            if (!re.converged) {
                throw KarcherConvergenceError("karcher_mean: no convergence after trim pass",
                                              re.gradient_norm, re.mean);
            }
            re.iterations += outcome.iterations;
            outcome = re;
            // Residuals below are reported against the kept subset.
            result.mean = outcome.mean;
            double max_r = 0.0;
            for (const auto& s : kept) max_r = std::max(max_r, geodesic_distance(outcome.mean, s));
            result.diagnostics = {outcome.iterations, outcome.gradient_norm, max_r, trimmed};
            return result;
        }
        if (kept.empty()) trimmed = 0;  // refuse to trim everything
    }

    result.mean = outcome.mean;
    double max_r = 0.0;
    for (const auto& s : samples) max_r = std::max(max_r, geodesic_distance(outcome.mean, s));
    result.diagnostics = {outcome.iterations, outcome.gradient_norm, max_r, trimmed};
    return result;
}

// --- Yaw projection ---------------------------------------------------------

struct YawProjection {
    Rotation rotation;
    /// Set when r is a near-pi rotation about an axis orthogonal to gravity:
    /// every yaw is then equally close and the result (identity) is arbitrary.
    bool ambiguous = false;
};

/// The rotation about gravity_axis (unit) closest to r in geodesic distance.
inline YawProjection yaw_project(const Rotation& r, const Eigen::Vector3d& gravity_axis) {
    if (std::abs(gravity_axis.norm() - 1.0) > 1e-9) {
        throw std::invalid_argument("yaw_project: gravity axis must be unit length");
    }
    const Eigen::Quaterniond& q = r.quaternion();
    const double c1 = q.w();
    const double c2 = Eigen::Vector3d(q.x(), q.y(), q.z()).dot(gravity_axis);
    if (std::hypot(c1, c2) < 1e-8) {
        return {Rotation::identity(), true};
    }
    const double half = std::atan2(c2, c1);
    return {Rotation::from_axis_angle(gravity_axis, 2.0 * half), false};
}

// --- Random rotations (simulation and property tests) ----------------------

/// Uniform on SO(3) via a normalized 4D gaussian quaternion.
inline Rotation random_rotation(Rng& rng) {
    Eigen::Quaterniond q(rng.gaussian(), rng.gaussian(), rng.gaussian(), rng.gaussian());
    while (q.norm() < 1e-6) {
        q = Eigen::Quaterniond(rng.gaussian(), rng.gaussian(), rng.gaussian(), rng.gaussian());
    }
    return Rotation::from_quaternion(q);
}

/// A rotation within max_angle of the identity (uniform over the ball volume).
inline Rotation random_rotation_within(Rng& rng, double max_angle) {
    Eigen::Vector3d dir = rng.gaussian3(1.0);
    while (dir.norm() < 1e-9) dir = rng.gaussian3(1.0);
    dir.normalize();
    const double angle = max_angle * std::cbrt(rng.uniform());
    return Rotation::exp(angle * dir);
}

/// Isotropic tangent-space gaussian perturbation: r * exp(N(0, sigma^2 I)).
/// This is the noise model shared by the simulator and its oracles.
inline Rotation perturbed(const Rotation& r, double sigma_rad, Rng& rng) {
    if (sigma_rad <= 0.0) return r;
    return r * Rotation::exp(rng.gaussian3(sigma_rad));
}

}  // namespace roshi
