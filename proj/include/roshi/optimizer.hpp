#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Sparse>

#include "roshi/errors.hpp"
#include "roshi/fusion.hpp"
#include "roshi/skeleton.hpp"
#include "roshi/so3.hpp"

namespace roshi {

/// Weights of the guidance terms steering the windowed pose solve. The
/// smoothness term stands in for the learned motion prior and keeps joints
/// the IMUs cannot observe well-posed.
struct GuidanceWeights {
    double direct = 10.0;    // observed elbow/hip/knee bone orientations
    double relative = 5.0;   // pelvis-to-shoulder relative rotation
    double temporal = 2.0;   // pelvis-relative delta between consecutive frames
    double contact = 1.0;    // ground penetration + foot skating during contact
    double smooth = 0.01;    // joint-angle second differences

    void validate() const {
        if (direct < 0 || relative < 0 || temporal < 0 || contact < 0 || smooth < 0) {
            throw ConfigError("guidance weights must be nonnegative");
        }
        if (direct + relative + temporal + contact + smooth <= 0) {
            throw ConfigError("at least one guidance weight must be positive");
        }
    }
};

struct ContactParams {
    double height_thresh_m = 0.05;
    double speed_thresh_m_s = 0.2;
    double ground_plane_z = 0.0;
};

/// Ground plane calibration: minimum foot-joint height over the leading
/// window_s seconds of the sequence.
inline double estimate_ground_plane(const SkeletonModel& skeleton,
                                    std::span<const PoseFrame> frames, double window_s = 1.0) {
    if (frames.empty()) throw std::invalid_argument("estimate_ground_plane: no frames");
    const int lf = skeleton.bone("left_foot").distal;
    const int rf = skeleton.bone("right_foot").distal;
    const std::int64_t cutoff =
        frames.front().timestamp_ms + static_cast<std::int64_t>(std::llround(1000.0 * window_s));
    double plane = std::numeric_limits<double>::infinity();
    for (const PoseFrame& f : frames) {
        if (f.timestamp_ms > cutoff) break;
        const FkResult fk = forward_kinematics(skeleton, f);
        plane = std::min({plane, fk.joint_positions[lf].z(), fk.joint_positions[rf].z()});
    }
    return plane;
}

/// Contact iff the foot joint is within height_thresh of the ground plane
/// and moving slower than speed_thresh. Flags are deterministic.
inline std::vector<std::array<bool, 2>> detect_contact(const SkeletonModel& skeleton,
                                                       std::span<const PoseFrame> frames,
                                                       const ContactParams& params) {
    const int feet[2] = {skeleton.bone("left_foot").distal, skeleton.bone("right_foot").distal};
    std::vector<std::array<Eigen::Vector3d, 2>> pos(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const FkResult fk = forward_kinematics(skeleton, frames[t]);
        pos[t] = {fk.joint_positions[feet[0]], fk.joint_positions[feet[1]]};
    }
    std::vector<std::array<bool, 2>> flags(frames.size(), {false, false});
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const std::size_t prev = t > 0 ? t - 1 : (frames.size() > 1 ? 1 : 0);
        const double dt_s =
            std::abs(static_cast<double>(frames[t].timestamp_ms - frames[prev].timestamp_ms)) / 1000.0;
        for (int f = 0; f < 2; ++f) {
            const double h = pos[t][f].z() - params.ground_plane_z;
            double speed = 0.0;
            if (dt_s > 0) speed = (pos[t][f] - pos[prev][f]).norm() / dt_s;
            flags[t][f] = h < params.height_thresh_m && speed < params.speed_thresh_m_s;
        }
    }
    return flags;
}

inline std::vector<std::array<bool, 2>> detect_contact(const SkeletonModel& skeleton,
                                                       std::span<const PoseFrame> frames) {
    ContactParams params;
    params.ground_plane_z = estimate_ground_plane(skeleton, frames);
    return detect_contact(skeleton, frames, params);
}

// --- Windowed pose objective ------------------------------------------------------

/// Inputs of one solver frame: the fixed root pose (from the root anchor) and
/// the IMU-derived bone orientations with their staleness fade weights.
struct FrameObservations {
    std::int64_t timestamp_ms = 0;
    Rotation root_orientation;
    Eigen::Vector3d root_position = Eigen::Vector3d::Zero();
    std::array<std::optional<Rotation>, 9> tracked;
    std::array<double, 9> weight{};  // staleness fade in [0, 1]
};

inline std::vector<FrameObservations> build_observations(const TrackedBones& tracked,
                                                         const RootAnchor& anchor,
                                                         double stale_fade_ms = 500.0) {
    if (tracked.frames.size() != anchor.frames.size()) {
        throw std::invalid_argument("build_observations: tracked/anchor length mismatch");
    }
    std::vector<FrameObservations> out(tracked.frames.size());
    for (std::size_t t = 0; t < tracked.frames.size(); ++t) {
        FrameObservations& o = out[t];
        o.timestamp_ms = tracked.frames[t].timestamp_ms;
        o.root_orientation = anchor.frames[t].root_orientation;
        o.root_position = anchor.frames[t].root_position;
        for (std::size_t i = 0; i < 9; ++i) {
            const TrackedBoneSample& s = tracked.frames[t].bones[i];
            if (!s.valid) continue;
            const double fade =
                stale_fade_ms > 0 ? std::max(0.0, 1.0 - s.staleness_ms / stale_fade_ms) : 1.0;
            if (fade <= 0.0) continue;
            o.tracked[i] = s.orientation;
            o.weight[i] = fade;
        }
    }
    return out;
}

struct TermBreakdown {
    double direct = 0, relative = 0, temporal = 0, contact = 0, smooth = 0;
    double total() const { return direct + relative + temporal + contact + smooth; }
};

/// Local joint rotations per frame; frames_[t] has joint_count-1 entries.
using LocalSeq = std::vector<std::vector<Rotation>>;

/// The windowed guidance objective
///   E = w_direct  sum d_g^2(FK bone, tracked bone)        over elbow/hip/knee bones
///     + w_relative sum d_g^2(FK pelvis->upper-arm, IMU pelvis->upper-arm)
///     + w_temporal sum d_g^2(FK pelvis-relative delta, IMU delta)
///     + w_contact  sum penetration^2 + skating^2           during detected contact
///     + w_smooth   sum |joint-angle second difference|^2
/// with the root pose fixed per frame. The first fixed_prefix frames are
/// constants from the previously committed solution; they stitch windows
/// together through the temporal and smoothness terms.
class PoseObjective {
public:
    PoseObjective(const SkeletonModel& skeleton, std::span<const FrameObservations> frames,
                  const GuidanceWeights& weights, std::span<const std::array<bool, 2>> contact,
                  const ContactParams& contact_params,
                  const std::array<bool, 9>& temporal_mask = all_bones(), int fixed_prefix = 0)
        : skeleton_(&skeleton),
          frames_(frames.begin(), frames.end()),
          weights_(weights),
          contact_(contact.begin(), contact.end()),
          contact_params_(contact_params),
          temporal_mask_(temporal_mask),
          fixed_prefix_(fixed_prefix) {
        weights_.validate();
        if (frames_.size() < 2) throw std::invalid_argument("optimize_pose: window needs K >= 2 frames");
        if (contact_.size() != frames_.size()) {
            throw std::invalid_argument("optimize_pose: contact flags do not match frames");
        }
        if (fixed_prefix_ < 0 || fixed_prefix_ >= static_cast<int>(frames_.size())) {
            throw std::invalid_argument("optimize_pose: bad fixed prefix");
        }
        const auto& joints = skeleton.joints();
        joint_count_ = joints.size();
        for (std::size_t i = 0; i < 9; ++i) {
            const Bone& b = skeleton.bone(kTrackedBones[i]);
            bone_prox_[i] = b.proximal;
            bone_rest_[i] = b.rest;
            bone_chain_[i] = chain_to(b.proximal);
        }
        for (int f = 0; f < 2; ++f) {
            const Bone& b = skeleton.bone(f == 0 ? "left_foot" : "right_foot");
            foot_joint_[f] = b.distal;
            foot_chain_[f] = chain_to(joints[b.distal].parent);
        }
    }

    static constexpr std::array<bool, 9> all_bones() {
        return {true, true, true, true, true, true, true, true, true};
    }

    std::size_t frame_count() const { return frames_.size(); }
    int fixed_prefix() const { return fixed_prefix_; }
    std::size_t variable_count() const {
        return (frames_.size() - static_cast<std::size_t>(fixed_prefix_)) * (joint_count_ - 1) * 3;
    }

    double value(const LocalSeq& locals) const {
        TermBreakdown t = terms(locals);
        return t.total();
    }

    TermBreakdown terms(const LocalSeq& locals) const {
        TermBreakdown breakdown;
        std::vector<double> residuals;
        assemble(locals, residuals, nullptr, &breakdown);
        return breakdown;
    }

    double value_and_gradient(const LocalSeq& locals, Eigen::VectorXd& grad) const {
        std::vector<double> residuals;
        std::vector<Eigen::Triplet<double>> trips;
        TermBreakdown breakdown;
        assemble(locals, residuals, &trips, &breakdown);
        Eigen::SparseMatrix<double> jac(static_cast<Eigen::Index>(residuals.size()),
                                        static_cast<Eigen::Index>(variable_count()));
        jac.setFromTriplets(trips.begin(), trips.end());
        const Eigen::Map<const Eigen::VectorXd> f(residuals.data(),
                                                  static_cast<Eigen::Index>(residuals.size()));
        grad = 2.0 * (jac.transpose() * f);
        return breakdown.total();
    }

    /// Residual vector (sqrt-weighted) and optional Jacobian triplets.
    void assemble(const LocalSeq& locals, std::vector<double>& residuals,
                  std::vector<Eigen::Triplet<double>>* trips, TermBreakdown* breakdown) const {
        const std::size_t K = frames_.size();
        if (locals.size() != K) throw std::invalid_argument("pose objective: state length mismatch");

        // Per-frame FK on the current state.
        std::vector<std::vector<Rotation>> orient(K);
        std::vector<std::vector<Eigen::Vector3d>> pos(K);
        for (std::size_t t = 0; t < K; ++t) {
            fk_frame(locals[t], frames_[t], orient[t], pos[t]);
        }

        residuals.clear();
        auto row_base = [&]() { return residuals.size(); };
        auto push3 = [&](double sw, const Eigen::Vector3d& r) {
            residuals.push_back(sw * r.x());
            residuals.push_back(sw * r.y());
            residuals.push_back(sw * r.z());
        };
        auto var_col = [&](std::size_t t, int joint) {
            return ((t - static_cast<std::size_t>(fixed_prefix_)) * (joint_count_ - 1) +
                    static_cast<std::size_t>(joint - 1)) *
                   3;
        };
        auto add_block = [&](std::size_t row, std::size_t t, int joint, double sw,
                             const Eigen::Matrix3d& block) {
            if (!trips) return;
            if (static_cast<int>(t) < fixed_prefix_) return;
            const std::size_t col = var_col(t, joint);
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) {
                    const double v = sw * block(a, b);
                    if (v != 0.0) {
                        trips->emplace_back(static_cast<int>(row) + a, static_cast<int>(col) + b, v);
                    }
                }
            }
        };
        auto add_row = [&](std::size_t row, std::size_t t, int joint, double sw,
                           const Eigen::RowVector3d& block) {
            if (!trips) return;
            if (static_cast<int>(t) < fixed_prefix_) return;
            const std::size_t col = var_col(t, joint);
            for (int b = 0; b < 3; ++b) {
                const double v = sw * block(b);
                if (v != 0.0) {
                    trips->emplace_back(static_cast<int>(row), static_cast<int>(col) + b, v);
                }
            }
        };

        // Orientation residual r = log(O^T P) where P = orient[prox] * rest:
        // block for chain joint k is Jr^-1(r) * (P^T A_k).
        auto add_orientation_residual = [&](double w, const Rotation& obs, std::size_t t,
                                            std::size_t bone, double* sink) {
            const Rotation P = orient[t][static_cast<std::size_t>(bone_prox_[bone])] * bone_rest_[bone];
            const Eigen::Vector3d r = (obs.inverse() * P).log();
            const double sw = std::sqrt(w);
            const std::size_t row = row_base();
            push3(sw, r);
            if (sink) *sink += w * r.squaredNorm();
            if (!trips || static_cast<int>(t) < fixed_prefix_) return;
            const Eigen::Matrix3d jri = right_jacobian_inverse(r);
            const Eigen::Matrix3d pt = P.matrix().transpose();
            for (int k : bone_chain_[bone]) {
                add_block(row, t, k, sw, jri * (pt * orient[t][static_cast<std::size_t>(k)].matrix()));
            }
        };

        // Direct: observed elbow/hip/knee bones (forearms, thighs, shanks).
        if (weights_.direct > 0) {
            for (std::size_t t = 0; t < K; ++t) {
                for (std::size_t b : {3, 4, 5, 6, 7, 8}) {
                    if (!frames_[t].tracked[b]) continue;
                    add_orientation_residual(weights_.direct * frames_[t].weight[b],
                                             *frames_[t].tracked[b], t, b,
                                             breakdown ? &breakdown->direct : nullptr);
                }
            }
        }

        // Relative: pelvis->upper-arm, folded into an orientation residual with
        // the effective target P_pelvis * (tracked_pelvis^T tracked_arm).
        if (weights_.relative > 0) {
            for (std::size_t t = 0; t < K; ++t) {
                const auto& obs = frames_[t];
                if (!obs.tracked[kPelvisTracker]) continue;
                const Rotation pelvis_fk =
                    obs.root_orientation * bone_rest_[kPelvisTracker];  // chain is just the root
                for (std::size_t b : {1, 2}) {
                    if (!obs.tracked[b]) continue;
                    const Rotation target = pelvis_fk * (obs.tracked[kPelvisTracker]->inverse() *
                                                         *obs.tracked[b]);
                    add_orientation_residual(
                        weights_.relative * std::min(obs.weight[kPelvisTracker], obs.weight[b]),
                        target, t, b, breakdown ? &breakdown->relative : nullptr);
                }
            }
        }

        // Temporal: pelvis-relative rotation deltas across consecutive frames.
        if (weights_.temporal > 0) {
            for (std::size_t t = 0; t + 1 < K; ++t) {
                const auto& oa = frames_[t];
                const auto& ob = frames_[t + 1];
                if (!oa.tracked[kPelvisTracker] || !ob.tracked[kPelvisTracker]) continue;
                const Rotation c_t = oa.root_orientation * bone_rest_[kPelvisTracker];
                const Rotation c_n = ob.root_orientation * bone_rest_[kPelvisTracker];
                const Rotation d = c_t.inverse() * c_n;  // constant per frame pair
                for (std::size_t b = 1; b < 9; ++b) {     // pelvis delta is identically zero
                    if (!temporal_mask_[b] || !oa.tracked[b] || !ob.tracked[b]) continue;
                    const double w =
                        weights_.temporal *
                        std::min({oa.weight[b], ob.weight[b], oa.weight[kPelvisTracker],
                                  ob.weight[kPelvisTracker]});
                    if (w <= 0) continue;
                    const Rotation p_t = orient[t][static_cast<std::size_t>(bone_prox_[b])] * bone_rest_[b];
                    const Rotation p_n =
                        orient[t + 1][static_cast<std::size_t>(bone_prox_[b])] * bone_rest_[b];
                    const Rotation delta_obs =
                        (oa.tracked[kPelvisTracker]->inverse() * *oa.tracked[b]).inverse() *
                        (ob.tracked[kPelvisTracker]->inverse() * *ob.tracked[b]);
                    const Rotation m = delta_obs.inverse() * (c_t.inverse() * p_t).inverse() *
                                       (c_n.inverse() * p_n);
                    const Eigen::Vector3d r = m.log();
                    const double sw = std::sqrt(w);
                    const std::size_t row = row_base();
                    push3(sw, r);
                    if (breakdown) breakdown->temporal += w * r.squaredNorm();
                    if (!trips) continue;
                    const Eigen::Matrix3d jri = right_jacobian_inverse(r);
                    // Next-frame side: standard insertion in P(t+1).
                    if (static_cast<int>(t + 1) >= fixed_prefix_) {
                        const Eigen::Matrix3d pt = p_n.matrix().transpose();
                        for (int k : bone_chain_[b]) {
                            add_block(row, t + 1, k, sw,
                                      jri * (pt * orient[t + 1][static_cast<std::size_t>(k)].matrix()));
                        }
                    }
                    // Current-frame side enters transposed: block -Jri * Fk^T with
                    // Fk = A_k(t)^T D P(t+1), D = c_t c_n^T mapped through the pelvis.
                    if (static_cast<int>(t) >= fixed_prefix_) {
                        const Eigen::Matrix3d d_mat = (c_t * c_n.inverse()).matrix();
                        for (int k : bone_chain_[b]) {
                            const Eigen::Matrix3d fk_mat =
                                orient[t][static_cast<std::size_t>(k)].matrix().transpose() * d_mat *
                                p_n.matrix();
                            add_block(row, t, k, sw, -jri * fk_mat.transpose());
                        }
                    }
                }
            }
        }

        // Contact: penetration below the ground plane, and horizontal skating
        // past the speed threshold while a foot is flagged in contact.
        if (weights_.contact > 0) {
            const double sw = std::sqrt(weights_.contact);
            for (std::size_t t = 0; t < K; ++t) {
                for (int f = 0; f < 2; ++f) {
                    if (!contact_[t][f]) continue;
                    const Eigen::Vector3d& p = pos[t][static_cast<std::size_t>(foot_joint_[f])];
                    const double pen = contact_params_.ground_plane_z - p.z();
                    const double r = std::max(0.0, pen);
                    const std::size_t row = row_base();
                    residuals.push_back(sw * r);
                    if (breakdown) breakdown->contact += weights_.contact * r * r;
                    if (trips && r > 0 && static_cast<int>(t) >= fixed_prefix_) {
                        for (int k : foot_chain_[f]) {
                            const Eigen::Matrix3d dp = position_jacobian(orient[t], pos[t], p, k);
                            add_row(row, t, k, sw, -dp.row(2));
                        }
                    }
                }
            }
            for (std::size_t t = 0; t + 1 < K; ++t) {
                const double dt_s =
                    static_cast<double>(frames_[t + 1].timestamp_ms - frames_[t].timestamp_ms) / 1000.0;
                if (dt_s <= 0) continue;
                for (int f = 0; f < 2; ++f) {
                    if (!contact_[t][f] || !contact_[t + 1][f]) continue;
                    const Eigen::Vector3d& pa = pos[t][static_cast<std::size_t>(foot_joint_[f])];
                    const Eigen::Vector3d& pb = pos[t + 1][static_cast<std::size_t>(foot_joint_[f])];
                    const Eigen::Vector2d v = (pb - pa).head<2>() / dt_s;
                    const double speed = v.norm();
                    const double r = std::max(0.0, speed - contact_params_.speed_thresh_m_s);
                    const std::size_t row = row_base();
                    residuals.push_back(sw * r);
                    if (breakdown) breakdown->contact += weights_.contact * r * r;
                    if (trips && r > 0 && speed > 1e-12) {
                        Eigen::RowVector3d dr_dp = Eigen::RowVector3d::Zero();
                        dr_dp.head<2>() = (v / speed).transpose() / dt_s;
                        if (static_cast<int>(t + 1) >= fixed_prefix_) {
                            for (int k : foot_chain_[f]) {
                                const Eigen::RowVector3d b =
                                    dr_dp * position_jacobian(orient[t + 1], pos[t + 1], pb, k);
                                add_row(row, t + 1, k, sw, b);
                            }
                        }
                        if (static_cast<int>(t) >= fixed_prefix_) {
                            for (int k : foot_chain_[f]) {
                                const Eigen::RowVector3d b =
                                    -dr_dp * position_jacobian(orient[t], pos[t], pa, k);
                                add_row(row, t, k, sw, b);
                            }
                        }
                    }
                }
            }
        }

        // Smoothness: second differences of the joint-angle vectors.
        if (weights_.smooth > 0 && K >= 3) {
            const double sw = std::sqrt(weights_.smooth);
            for (std::size_t t = 1; t + 1 < K; ++t) {
                for (std::size_t j = 1; j < joint_count_; ++j) {
                    const Eigen::Vector3d va = locals[t - 1][j - 1].log();
                    const Eigen::Vector3d vb = locals[t][j - 1].log();
                    const Eigen::Vector3d vc = locals[t + 1][j - 1].log();
                    const Eigen::Vector3d r = va - 2.0 * vb + vc;
                    const std::size_t row = row_base();
                    push3(sw, r);
                    if (breakdown) breakdown->smooth += weights_.smooth * r.squaredNorm();
                    if (!trips) continue;
                    add_block(row, t - 1, static_cast<int>(j), sw, right_jacobian_inverse(va));
                    add_block(row, t, static_cast<int>(j), sw, -2.0 * right_jacobian_inverse(vb));
                    add_block(row, t + 1, static_cast<int>(j), sw, right_jacobian_inverse(vc));
                }
            }
        }
    }

private:
    std::vector<int> chain_to(int joint) const {
        std::vector<int> chain;
        for (int j = joint; j > 0; j = skeleton_->joints()[static_cast<std::size_t>(j)].parent) {
            chain.push_back(j);
        }
        std::reverse(chain.begin(), chain.end());
        return chain;
    }

    void fk_frame(const std::vector<Rotation>& locals, const FrameObservations& obs,
                  std::vector<Rotation>& orient, std::vector<Eigen::Vector3d>& pos) const {
        if (locals.size() + 1 != joint_count_) {
            throw std::invalid_argument("pose objective: locals do not match skeleton");
        }
        orient.resize(joint_count_);
        pos.resize(joint_count_);
        orient[0] = obs.root_orientation;
        pos[0] = obs.root_position;
        const auto& joints = skeleton_->joints();
        for (std::size_t j = 1; j < joint_count_; ++j) {
            const Joint& joint = joints[j];
            const auto parent = static_cast<std::size_t>(joint.parent);
            pos[j] = pos[parent] + orient[parent] * joint.offset;
            orient[j] = orient[parent] * locals[j - 1];
        }
    }

    /// d p_target / d delta_k for a right perturbation of joint k's local
    /// rotation: -A_k [A_k^T (p_target - p_k)]_x.
    static Eigen::Matrix3d position_jacobian(const std::vector<Rotation>& orient,
                                             const std::vector<Eigen::Vector3d>& pos,
                                             const Eigen::Vector3d& target, int k) {
        const Eigen::Matrix3d ak = orient[static_cast<std::size_t>(k)].matrix();
        const Eigen::Vector3d local = ak.transpose() * (target - pos[static_cast<std::size_t>(k)]);
        return -ak * skew(local);
    }

    const SkeletonModel* skeleton_;
    std::vector<FrameObservations> frames_;
    GuidanceWeights weights_;
    std::vector<std::array<bool, 2>> contact_;
    ContactParams contact_params_;
    std::array<bool, 9> temporal_mask_;
    int fixed_prefix_;
    std::size_t joint_count_ = 0;
    std::array<int, 9> bone_prox_{};
    std::array<Rotation, 9> bone_rest_;
    std::array<std::vector<int>, 9> bone_chain_;
    std::array<int, 2> foot_joint_{};
    std::array<std::vector<int>, 2> foot_chain_;
};

struct WindowDiagnostics {
    int iterations = 0;
    bool converged = false;
    double objective = 0.0;
    std::vector<double> objective_history;  // accepted iterates, non-increasing
    TermBreakdown terms;
};

class PoseConvergenceError : public ConvergenceError {
public:
    PoseConvergenceError(const std::string& msg, double gradient_norm,
                         std::vector<PoseFrame> best, TermBreakdown terms)
        : ConvergenceError(msg, gradient_norm), best_frames(std::move(best)), terms(terms) {}
    std::vector<PoseFrame> best_frames;
    TermBreakdown terms;
};

struct SolverOptions {
    int max_iterations = 50;
    double step_tol_rad = 1e-8;
    double relative_decrease_tol = 1e-12;
};

namespace detail {

/// Damped Gauss-Newton (Levenberg-Marquardt) on the rotation manifold with
/// right tangent retractions. Objective values of accepted iterates are
/// non-increasing by construction.
inline void solve_window(const PoseObjective& objective, LocalSeq& locals,
                         const SolverOptions& options, WindowDiagnostics& diag) {
    const std::size_t K = objective.frame_count();
    const std::size_t n = objective.variable_count();
    const std::size_t joints_minus_1 = locals.empty() ? 0 : locals[0].size();
    const int prefix = objective.fixed_prefix();

    std::vector<double> residuals;
    std::vector<Eigen::Triplet<double>> trips;
    TermBreakdown breakdown;

    const auto retract = [&](const LocalSeq& base, const Eigen::VectorXd& step) {
        LocalSeq next = base;
        for (std::size_t t = static_cast<std::size_t>(prefix); t < K; ++t) {
            const std::size_t frame_base = (t - static_cast<std::size_t>(prefix)) * joints_minus_1 * 3;
            for (std::size_t j = 0; j < joints_minus_1; ++j) {
                const Eigen::Vector3d d = step.segment<3>(static_cast<Eigen::Index>(frame_base + 3 * j));
                next[t][j] = next[t][j] * Rotation::exp(d);
            }
        }
        return next;
    };

    double value = objective.value(locals);
    diag.objective_history.push_back(value);
    double lambda = 1e-4;
    bool converged = false;
    int it = 0;
    Eigen::SparseMatrix<double> identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    identity.setIdentity();

    for (; it < options.max_iterations && !converged; ++it) {
        residuals.clear();
        trips.clear();
        objective.assemble(locals, residuals, &trips, &breakdown);
        const auto m = static_cast<Eigen::Index>(residuals.size());
        Eigen::SparseMatrix<double> jac(m, static_cast<Eigen::Index>(n));
        jac.setFromTriplets(trips.begin(), trips.end());
        const Eigen::Map<const Eigen::VectorXd> f(residuals.data(), m);
        const Eigen::VectorXd g = jac.transpose() * f;
        const Eigen::SparseMatrix<double> h = (jac.transpose() * jac).pruned();

        bool accepted = false;
        for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
            Eigen::SparseMatrix<double> damped = h + lambda * identity;
            Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
            solver.compute(damped);
            if (solver.info() != Eigen::Success) {
                lambda *= 10;
                continue;
            }
            const Eigen::VectorXd step = solver.solve(-g);
            if (solver.info() != Eigen::Success || !step.allFinite()) {
                lambda *= 10;
                continue;
            }
            const LocalSeq trial = retract(locals, step);
            const double trial_value = objective.value(trial);
            if (trial_value <= value) {
                const double decrease = value - trial_value;
                locals = trial;
                value = trial_value;
                diag.objective_history.push_back(value);
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
                const double max_step = step.size() ? step.cwiseAbs().maxCoeff() : 0.0;
                if (max_step < options.step_tol_rad ||
                    decrease <= options.relative_decrease_tol * std::max(1.0, value)) {
                    converged = true;
                }
            } else {
                lambda *= 10;
            }
        }
        if (!accepted) {
            converged = true;  // no descent direction left at numerical precision
        }
    }

    diag.iterations = it;
    diag.converged = converged;
    diag.objective = value;
    diag.terms = objective.terms(locals);
    if (!converged) {
        Eigen::VectorXd grad;
        objective.value_and_gradient(locals, grad);
        throw PoseConvergenceError(
            "optimize_pose: no convergence after " + std::to_string(options.max_iterations) +
                " iterations",
            grad.norm(), {}, diag.terms);
    }
}

}  // namespace detail

/// Analytic warm start: observed bones assigned top-down (thighs and upper
/// arms before shanks and forearms), every other joint held from the previous
/// frame. Exact at zero noise when unobserved joints rest at identity.
inline std::vector<PoseFrame> bootstrap_init(const SkeletonModel& skeleton,
                                             std::span<const FrameObservations> frames) {
    const auto& joints = skeleton.joints();
    // Assignment order pairs each tracked bone with its proximal joint.
    constexpr std::array<std::size_t, 8> order = {5, 6, 7, 8, 1, 2, 3, 4};
    std::array<int, 9> prox{};
    std::array<Rotation, 9> rest;
    for (std::size_t i = 0; i < 9; ++i) {
        const Bone& b = skeleton.bone(kTrackedBones[i]);
        prox[i] = b.proximal;
        rest[i] = b.rest;
    }
    std::vector<PoseFrame> out(frames.size());
    std::vector<Rotation> locals(joints.size() - 1, Rotation::identity());
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const FrameObservations& obs = frames[t];
        for (std::size_t b : order) {
            if (!obs.tracked[b]) continue;
            const int j = prox[b];
            // Accumulated chain above j with the current assignment.
            Rotation above = obs.root_orientation;
            std::vector<int> path;
            for (int a = joints[static_cast<std::size_t>(j)].parent; a > 0;
                 a = joints[static_cast<std::size_t>(a)].parent) {
                path.push_back(a);
            }
            for (auto it = path.rbegin(); it != path.rend(); ++it) {
                above = above * locals[static_cast<std::size_t>(*it - 1)];
            }
            locals[static_cast<std::size_t>(j - 1)] =
                above.inverse() * *obs.tracked[b] * rest[b].inverse();
        }
        PoseFrame& f = out[t];
        f.timestamp_ms = obs.timestamp_ms;
        f.root_orientation = obs.root_orientation;
        f.root_position = obs.root_position;
        f.joint_rotations = locals;
    }
    return out;
}

/// One windowed solve over K frames with the root fixed to the anchor.
struct PoseOptimizationResult {
    std::vector<PoseFrame> frames;
    WindowDiagnostics diagnostics;
};

inline PoseOptimizationResult optimize_pose(const SkeletonModel& skeleton,
                                            std::span<const TrackedFrame> tracked,
                                            std::span<const RootAnchorFrame> anchor,
                                            const GuidanceWeights& weights,
                                            std::span<const PoseFrame> init,
                                            const ContactParams& contact_params = {},
                                            const SolverOptions& solver = {},
                                            const std::array<bool, 9>& temporal_mask =
                                                PoseObjective::all_bones()) {
    if (tracked.size() < 2) throw std::invalid_argument("optimize_pose: window needs K >= 2 frames");
    if (tracked.size() != anchor.size() || tracked.size() != init.size()) {
        throw std::invalid_argument("optimize_pose: tracked/anchor/init length mismatch");
    }
    TrackedBones tb;
    tb.frames.assign(tracked.begin(), tracked.end());
    RootAnchor ra;
    ra.frames.assign(anchor.begin(), anchor.end());
    const auto observations = build_observations(tb, ra);
    const auto contact = detect_contact(skeleton, init, contact_params);

    PoseObjective objective(skeleton, observations, weights, contact, contact_params,
                            temporal_mask, 0);
    LocalSeq locals(init.size());
    for (std::size_t t = 0; t < init.size(); ++t) locals[t] = init[t].joint_rotations;

    PoseOptimizationResult result;
    detail::solve_window(objective, locals, solver, result.diagnostics);
    result.frames.resize(init.size());
    for (std::size_t t = 0; t < init.size(); ++t) {
        result.frames[t].timestamp_ms = observations[t].timestamp_ms;
        result.frames[t].root_orientation = observations[t].root_orientation;
        result.frames[t].root_position = observations[t].root_position;
        result.frames[t].joint_rotations = locals[t];
    }
    return result;
}

// --- Sliding-window fusion --------------------------------------------------------

struct FuseOptions {
    GuidanceWeights weights;
    int window = 30;
    int overlap = 10;
    SolverOptions solver;
    double stale_fade_ms = 500.0;
    ContactParams contact;
    bool auto_ground_plane = true;
    std::array<bool, 9> temporal_mask = PoseObjective::all_bones();
};

struct FuseResult {
    MotionSequence motion;
    std::vector<WindowDiagnostics> windows;
    std::vector<std::array<bool, 2>> contact;
};

/// Full-sequence fusion: windows of `window` frames advanced by
/// window - overlap, each warm-started from the previous solution, with two
/// committed frames of context stitching the temporal and smoothness terms.
inline FuseResult fuse_sequence(const SkeletonModel& skeleton, const TrackedBones& tracked,
                                const RootAnchor& anchor, const FuseOptions& options = {}) {
    if (options.window < 2) throw ConfigError("fuse: window must be >= 2 frames");
    if (options.overlap < 0 || options.overlap >= options.window) {
        throw ConfigError("fuse: overlap must be in [0, window)");
    }
    const auto observations = build_observations(tracked, anchor, options.stale_fade_ms);
    const std::size_t n = observations.size();
    if (n < 2) throw std::invalid_argument("fuse: need at least 2 frames");

    std::vector<PoseFrame> solution = bootstrap_init(skeleton, observations);
    ContactParams contact_params = options.contact;
    if (options.auto_ground_plane) {
        contact_params.ground_plane_z = estimate_ground_plane(skeleton, solution);
    }
    FuseResult result;
    result.contact = detect_contact(skeleton, solution, contact_params);

    const auto window = static_cast<std::size_t>(options.window);
    const std::size_t advance = window - static_cast<std::size_t>(options.overlap);
    std::size_t start = 0;
    while (start < n) {
        const std::size_t end = std::min(start + window, n);
        const std::size_t prefix_start = start >= 2 ? start - 2 : 0;
        const int prefix = static_cast<int>(start - prefix_start);
        const std::span<const FrameObservations> frames(observations.data() + prefix_start,
                                                        end - prefix_start);
        const std::span<const std::array<bool, 2>> contact(result.contact.data() + prefix_start,
                                                           end - prefix_start);
        PoseObjective objective(skeleton, frames, options.weights, contact, contact_params,
                                options.temporal_mask, prefix);
        LocalSeq locals(end - prefix_start);
        for (std::size_t t = prefix_start; t < end; ++t) locals[t - prefix_start] = solution[t].joint_rotations;

        WindowDiagnostics diag;
        detail::solve_window(objective, locals, options.solver, diag);
        result.windows.push_back(std::move(diag));
        for (std::size_t t = start; t < end; ++t) {
            solution[t].joint_rotations = locals[t - prefix_start];
        }
        if (end == n) break;
        start += advance;
    }

    result.motion.skeleton_name = skeleton.name();
    if (n >= 2) {
        const double dt =
            static_cast<double>(observations[1].timestamp_ms - observations[0].timestamp_ms);
        result.motion.rate_hz = dt > 0 ? 1000.0 / dt : 0.0;
    }
    result.motion.frames = std::move(solution);
    return result;
}

}  // namespace roshi
