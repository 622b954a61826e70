#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "roshi/errors.hpp"
#include "roshi/random.hpp"
#include "roshi/recording.hpp"
#include "roshi/skeleton.hpp"
#include "roshi/so3.hpp"
#include "roshi/stream.hpp"

namespace roshi {

/// Per-tracker ground-truth extrinsics used to synthesize sensor streams.
struct TrackerGroundTruth {
    Rotation bone_to_sensor;  // B_i -> S_i mount rotation
    Rotation tag_to_sensor;   // T_i -> S_i mount rotation (known to calibration)
    Rotation heading;         // W_p -> W_i yaw offset; identity for the pelvis
};

struct SimConfig {
    std::uint64_t seed = 1;
    double imu_rate_hz = 100.0;
    double cam_rate_hz = 30.0;
    double sigma_imu_rad = deg_to_rad(0.5);
    double sigma_tag_rad = deg_to_rad(1.0);
    double sigma_bone_rad = deg_to_rad(2.0);
    double heading_drift_rad_s = deg_to_rad(0.05);
    double tag_dropout = 0.0;       // per-frame drop probability
    double bone_recall = 1.0;       // per-frame keep probability (SAM-3D stand-in)
    double slam_drift_m_s = 0.0;    // translation drift magnitude
    double clock_offset_max_ms = 0.0;  // per-device offsets drawn in [-max, max]
    double calib_duration_s = 8.0;  // tag/bone streams exist only in this window
    double camera_jitter_rad = 0.0;
    std::int64_t start_timestamp_ms = 0;
    /// Explicit per-tracker ground truth; absent means seeded-random values.
    std::optional<std::array<TrackerGroundTruth, 9>> trackers;

    void validate() const {
        if (imu_rate_hz <= 0 || imu_rate_hz > 1000) throw ConfigError("sim: imu_rate_hz out of (0, 1000]");
        if (cam_rate_hz <= 0 || cam_rate_hz > 1000) throw ConfigError("sim: cam_rate_hz out of (0, 1000]");
        if (sigma_imu_rad < 0 || sigma_tag_rad < 0 || sigma_bone_rad < 0) {
            throw ConfigError("sim: negative noise sigma");
        }
        if (tag_dropout < 0 || tag_dropout > 1) throw ConfigError("sim: tag_dropout outside [0, 1]");
        if (bone_recall < 0 || bone_recall > 1) throw ConfigError("sim: bone_recall outside [0, 1]");
        if (slam_drift_m_s < 0) throw ConfigError("sim: negative slam drift");
        if (std::abs(clock_offset_max_ms) > 100.0) {
            throw ConfigError("sim: clock offsets above 100 ms are out of model");
        }
        if (camera_jitter_rad < 0) throw ConfigError("sim: negative camera jitter");
        if (trackers) {
            for (std::size_t i = 0; i < trackers->size(); ++i) {
                const Rotation& h = (*trackers)[i].heading;
                const auto yaw = yaw_project(h, Eigen::Vector3d::UnitZ());
                if (geodesic_distance(h, yaw.rotation) > 1e-9) {
                    throw ConfigError("sim: heading offsets must be yaw-only");
                }
            }
            if ((*trackers)[kPelvisTracker].heading.angle() > 1e-12) {
                throw ConfigError("sim: pelvis heading must be identity (W_p anchors the rig)");
            }
        }
    }
};

// --- Motion generation --------------------------------------------------------

enum class MotionKind { walk_cycle, squat, arm_wave, scripted_file };

inline MotionKind motion_kind_from_string(const std::string& s) {
    if (s == "walk-cycle") return MotionKind::walk_cycle;
    if (s == "squat") return MotionKind::squat;
    if (s == "arm-wave") return MotionKind::arm_wave;
    if (s == "scripted-file") return MotionKind::scripted_file;
    throw ConfigError("unknown motion kind '" + s + "'");
}

inline std::string to_string(MotionKind k) {
    switch (k) {
        case MotionKind::walk_cycle: return "walk-cycle";
        case MotionKind::squat: return "squat";
        case MotionKind::arm_wave: return "arm-wave";
        case MotionKind::scripted_file: return "scripted-file";
    }
    return "?";
}

struct MotionOptions {
    double rate_hz = 100.0;
    std::int64_t start_timestamp_ms = 0;
    /// Static lead-in (the calibration stance) followed by a C1 speed ramp.
    double lead_in_hold_s = 0.0;
    double ramp_s = 1.0;
    double walk_frequency_hz = 0.8;   // gait cycle rate; forward speed scales with it
    double walk_hip_amplitude_rad = 0.3;
    std::string scripted_path;
};

struct GeneratedMotion {
    MotionSequence motion;
    /// Scripted ground-truth stance flags (left, right) per frame; empty for
    /// scripted files.
    std::vector<std::array<bool, 2>> stance;
};

namespace detail {

/// Warped time: frozen during the hold, then a quadratic speed ramp into
/// unit-rate playback. Keeps every generated motion C1 in time.
inline double warp_time(double t, double hold, double ramp) {
    if (t <= hold) return 0.0;
    const double s = t - hold;
    if (ramp <= 0.0) return s;
    if (s <= ramp) return s * s / (2.0 * ramp);
    return s - ramp / 2.0;
}

inline double warp_rate(double t, double hold, double ramp) {
    if (t <= hold) return 0.0;
    const double s = t - hold;
    if (ramp <= 0.0) return 1.0;
    return s <= ramp ? s / ramp : 1.0;
}

struct LegConstants {
    double thigh;    // |hip -> knee|
    double shank;    // |knee -> ankle|
    double foot_z;   // foot joint offset along -Z from the ankle
};

inline LegConstants leg_constants(const SkeletonModel& skel) {
    LegConstants c{};
    c.thigh = skel.joints()[skel.bone("left_thigh").distal].offset.norm();
    c.shank = skel.joints()[skel.bone("left_shank").distal].offset.norm();
    c.foot_z = -skel.joints()[skel.bone("left_foot").distal].offset.z();
    return c;
}

}  // namespace detail

/// Smooth periodic ground-truth motions. Only IMU-observable joints (hips,
/// knees, shoulders, elbows) and the root articulate; the stance foot is
/// pinned to the ground plane analytically.
inline GeneratedMotion generate_motion(MotionKind kind, double duration_s,
                                       const SkeletonModel& skeleton,
                                       const MotionOptions& opt = {}) {
    if (duration_s <= 0) throw ConfigError("generate_motion: duration must be positive");
    if (opt.rate_hz <= 0 || opt.rate_hz > 1000) throw ConfigError("generate_motion: bad rate");
    if (kind == MotionKind::scripted_file) {
        GeneratedMotion g;
        g.motion = read_motion_file(opt.scripted_path);
        if (g.motion.frames.empty()) throw SchemaError("scripted motion has no frames");
        return g;
    }

    const auto leg = detail::leg_constants(skeleton);
    const int l_hip = skeleton.joint_index("left_hip"), r_hip = skeleton.joint_index("right_hip");
    const int l_knee = skeleton.joint_index("left_knee"), r_knee = skeleton.joint_index("right_knee");
    const int l_sh = skeleton.joint_index("left_shoulder"), r_sh = skeleton.joint_index("right_shoulder");
    const int l_el = skeleton.joint_index("left_elbow"), r_el = skeleton.joint_index("right_elbow");
    const int l_foot = skeleton.joint_index("left_foot"), r_foot = skeleton.joint_index("right_foot");

    GeneratedMotion out;
    out.motion.skeleton_name = skeleton.name();
    out.motion.rate_hz = opt.rate_hz;
    const auto frame_count = static_cast<std::size_t>(std::llround(duration_s * opt.rate_hz));
    out.motion.frames.reserve(frame_count);
    out.stance.reserve(frame_count);

    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t k = 0; k < frame_count; ++k) {
        const double t = static_cast<double>(k) / opt.rate_hz;
        const double tau = detail::warp_time(t, opt.lead_in_hold_s, opt.ramp_s);
        const double rate = detail::warp_rate(t, opt.lead_in_hold_s, opt.ramp_s);

        PoseFrame f = rest_pose(skeleton, opt.start_timestamp_ms +
                                              static_cast<std::int64_t>(std::llround(1000.0 * k / opt.rate_hz)));
        double root_x = 0.0;
        std::array<bool, 2> stance{true, true};

        if (kind == MotionKind::walk_cycle) {
            const double A = opt.walk_hip_amplitude_rad;
            const double freq = opt.walk_frequency_hz;
            const double phase = two_pi * freq * tau;
            const double theta_l = -A * std::cos(phase);
            const double theta_r = -theta_l;
            const double u = phase / two_pi - std::floor(phase / two_pi);
            const double knee_k = 0.7;
            const double kl = knee_k * std::pow(std::max(0.0, -std::sin(phase)), 2.0);
            const double kr = knee_k * std::pow(std::max(0.0, std::sin(phase)), 2.0);
            f.joint_rotations[l_hip - 1] = Rotation::rot_y(theta_l);
            f.joint_rotations[r_hip - 1] = Rotation::rot_y(theta_r);
            f.joint_rotations[l_knee - 1] = Rotation::rot_y(kl);
            f.joint_rotations[r_knee - 1] = Rotation::rot_y(kr);
            // Arm swing opposite the ipsilateral leg, elbows lightly flexed.
            f.joint_rotations[l_sh - 1] = Rotation::rot_z(0.25 * std::cos(phase));
            f.joint_rotations[r_sh - 1] = Rotation::rot_z(0.25 * std::cos(phase));
            f.joint_rotations[l_el - 1] = Rotation::rot_z(0.1 * (1.0 - std::cos(phase)));
            f.joint_rotations[r_el - 1] = Rotation::rot_z(-0.1 * (1.0 - std::cos(phase)));

            // Root forward position that keeps the stance foot stationary:
            // x = step_base + reach * sin(theta_stance). Half cycles alternate legs.
            const double reach = leg.thigh + leg.shank + leg.foot_z;
            const double m = std::floor(2.0 * freq * tau);
            const double theta_st = (static_cast<long long>(m) % 2 == 0) ? theta_l : theta_r;
            const double step = 2.0 * reach * std::sin(A);
            root_x = m * step + reach * std::sin(theta_st) + reach * std::sin(A);
            if (rate > 0.99) {
                stance = {u < 0.5, u >= 0.5};
            }
        } else if (kind == MotionKind::squat) {
            const double freq = 0.4;
            const double depth = 0.7;  // max hip pitch, radians
            const double theta = depth * (1.0 - std::cos(two_pi * freq * tau)) / 2.0;
            const double ratio = leg.thigh / leg.shank;
            const double knee = theta + std::asin(std::min(1.0, ratio * std::sin(theta)));
            f.joint_rotations[l_hip - 1] = Rotation::rot_y(-theta);
            f.joint_rotations[r_hip - 1] = Rotation::rot_y(-theta);
            f.joint_rotations[l_knee - 1] = Rotation::rot_y(knee);
            f.joint_rotations[r_knee - 1] = Rotation::rot_y(knee);
        } else {  // arm_wave
            const double freq = 0.5;
            const double phase = two_pi * freq * tau;
            f.joint_rotations[l_sh - 1] = Rotation::rot_x(0.5 * std::sin(phase));
            f.joint_rotations[r_sh - 1] = Rotation::rot_x(0.5 * std::sin(phase + std::numbers::pi / 2));
            f.joint_rotations[l_el - 1] = Rotation::rot_x(0.3 * (1.0 - std::cos(phase)) / 2.0);
            f.joint_rotations[r_el - 1] = Rotation::rot_x(0.3 * (1.0 - std::cos(phase)) / 2.0);
        }

        // Drop the root so the lowest foot joint sits exactly on the ground.
        f.root_position = Eigen::Vector3d(root_x, 0.0, 0.0);
        const FkResult fk = forward_kinematics(skeleton, f);
        const double min_foot = std::min(fk.joint_positions[l_foot].z(), fk.joint_positions[r_foot].z());
        f.root_position.z() = -min_foot;

        out.motion.frames.push_back(std::move(f));
        out.stance.push_back(stance);
    }
    return out;
}

/// C1 interpolation of a motion sequence at an arbitrary millisecond time
/// (linear in position, slerp in each rotation; clamped at the ends).
inline PoseFrame interpolate_pose(const MotionSequence& motion, double t_ms) {
    if (motion.frames.empty()) throw DataError("interpolate_pose: empty motion");
    const auto& frames = motion.frames;
    if (t_ms <= static_cast<double>(frames.front().timestamp_ms)) return frames.front();
    if (t_ms >= static_cast<double>(frames.back().timestamp_ms)) return frames.back();
    std::size_t lo = 0, hi = frames.size() - 1;
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        if (static_cast<double>(frames[mid].timestamp_ms) <= t_ms) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    const PoseFrame& a = frames[lo];
    const PoseFrame& b = frames[hi];
    const double span = static_cast<double>(b.timestamp_ms - a.timestamp_ms);
    const double alpha = span > 0 ? (t_ms - static_cast<double>(a.timestamp_ms)) / span : 0.0;
    PoseFrame f;
    f.timestamp_ms = static_cast<std::int64_t>(std::llround(t_ms));
    f.root_position = (1.0 - alpha) * a.root_position + alpha * b.root_position;
    f.root_orientation = Rotation::from_quaternion(
        a.root_orientation.quaternion().slerp(alpha, b.root_orientation.quaternion()));
    f.joint_rotations.reserve(a.joint_rotations.size());
    for (std::size_t j = 0; j < a.joint_rotations.size(); ++j) {
        f.joint_rotations.push_back(Rotation::from_quaternion(
            a.joint_rotations[j].quaternion().slerp(alpha, b.joint_rotations[j].quaternion())));
    }
    return f;
}

// --- Sensor synthesis -----------------------------------------------------------

struct SimBundle {
    MotionSequence truth;
    std::array<TrackerGroundTruth, 9> ground_truth;
    std::array<std::vector<RotSample>, 9> imu;   // W_i R_S_i (t)
    std::array<std::vector<RotSample>, 9> tag;   // C_s R_T_i (t), calibration window only
    std::array<std::vector<RotSample>, 9> bone;  // C_s R_B_i (t), calibration window only
    std::vector<PoseSample> slam;                // head pose in W_c
    std::int64_t calib_start_ms = -1;
    std::int64_t calib_end_ms = -1;
    Rotation camera_from_world;  // C_s R_W, mean camera attitude
    Eigen::Vector3d gravity_cam = Eigen::Vector3d::UnitZ();
};

namespace detail {

// Fixed handheld-camera attitude during the calibration window.
inline Rotation default_camera_from_world() {
    return Rotation::rot_z(0.4) * Rotation::rot_x(-1.2);
}

inline std::array<TrackerGroundTruth, 9> seeded_ground_truth(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "sim.gt"));
    std::array<TrackerGroundTruth, 9> gt;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        gt[i].bone_to_sensor = random_rotation(rng);
        gt[i].tag_to_sensor = random_rotation(rng);
        const double yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
        gt[i].heading = (i == kPelvisTracker) ? Rotation::identity() : Rotation::rot_z(yaw);
    }
    return gt;
}

}  // namespace detail

/// Synthesizes the full sensor bundle from a ground-truth motion. With all
/// noise, drift, dropout, and clock offsets zero, calibration + tracking on
/// this bundle reproduces the ground-truth bone orientations to solver
/// precision (the exactness contract; see the acceptance suite).
inline SimBundle simulate_sensors(const MotionSequence& motion, const SkeletonModel& skeleton,
                                  const SimConfig& cfg) {
    cfg.validate();
    if (motion.frames.empty()) throw DataError("simulate_sensors: empty motion");

    SimBundle bundle;
    bundle.truth = motion;
    bundle.ground_truth = cfg.trackers ? *cfg.trackers : detail::seeded_ground_truth(cfg.seed);
    bundle.camera_from_world = detail::default_camera_from_world();
    bundle.gravity_cam = bundle.camera_from_world * Eigen::Vector3d::UnitZ();

    const std::int64_t t0 = motion.frames.front().timestamp_ms;
    const std::int64_t t_end = motion.frames.back().timestamp_ms;
    if (cfg.calib_duration_s > 0) {
        bundle.calib_start_ms = t0;
        bundle.calib_end_ms =
            std::min(t_end, t0 + static_cast<std::int64_t>(std::llround(1000.0 * cfg.calib_duration_s)));
    }

    // Per-device clock offsets: 9 trackers, then camera, then headset.
    std::array<std::int64_t, 11> offsets{};
    if (cfg.clock_offset_max_ms > 0) {
        Rng rng(derive_seed(cfg.seed, "sim.clock"));
        for (auto& o : offsets) {
            o = static_cast<std::int64_t>(std::llround(rng.uniform(-cfg.clock_offset_max_ms, cfg.clock_offset_max_ms)));
        }
    }

    // Ground-truth bone orientations at an instant, one FK shared by all trackers.
    const auto bone_orientations = [&](double t_ms) {
        const PoseFrame pose = interpolate_pose(motion, t_ms);
        const FkResult fk = forward_kinematics(skeleton, pose);
        std::array<Rotation, 9> out;
        for (std::size_t i = 0; i < 9; ++i) {
            out[i] = bone_world_orientation(skeleton, fk, kTrackedBones[i]);
        }
        return out;
    };

    // IMU streams at the tracker rate: W_i R_S_i = H_i^T (W R_B_i) (B_i R_S_i),
    // heading drift applied about gravity in W_i, then tangent-space noise.
    {
        Rng rng(derive_seed(cfg.seed, "sim.imu"));
        const auto imu_count =
            static_cast<std::size_t>((t_end - t0) / 1000.0 * cfg.imu_rate_hz) + 1;
        std::vector<std::array<Rotation, 9>> truth_bones(imu_count);
        std::vector<double> instants(imu_count);
        for (std::size_t k = 0; k < imu_count; ++k) {
            instants[k] = static_cast<double>(t0) + 1000.0 * static_cast<double>(k) / cfg.imu_rate_hz;
            truth_bones[k] = bone_orientations(instants[k]);
        }
        for (std::size_t i = 0; i < 9; ++i) {
            auto& stream = bundle.imu[i];
            stream.reserve(imu_count);
            const TrackerGroundTruth& gt = bundle.ground_truth[i];
            const Rotation heading_inv = gt.heading.inverse();
            for (std::size_t k = 0; k < imu_count; ++k) {
                const double t_s = (instants[k] - static_cast<double>(t0)) / 1000.0;
                Rotation value = heading_inv * truth_bones[k][i] * gt.bone_to_sensor;
                if (cfg.heading_drift_rad_s != 0.0) {
                    value = Rotation::rot_z(cfg.heading_drift_rad_s * t_s) * value;
                }
                value = perturbed(value, cfg.sigma_imu_rad, rng);
                RotSample s;
                s.timestamp_ms = static_cast<std::int64_t>(std::llround(instants[k])) + offsets[i];
                s.payload = value;
                s.source_id = static_cast<std::uint16_t>(i);
                stream.push_back(s);
            }
        }
    }

    // Tag and estimated-bone streams at the camera rate inside the
    // calibration window; both observations share the per-frame camera pose.
    if (bundle.calib_start_ms >= 0) {
        Rng cam_rng(derive_seed(cfg.seed, "sim.cam"));
        Rng tag_rng(derive_seed(cfg.seed, "sim.tag"));
        Rng bone_rng(derive_seed(cfg.seed, "sim.bone"));
        for (std::size_t k = 0;; ++k) {
            const double t_ms = static_cast<double>(t0) + 1000.0 * static_cast<double>(k) / cfg.cam_rate_hz;
            if (t_ms > static_cast<double>(bundle.calib_end_ms)) break;
            const Rotation camera = cfg.camera_jitter_rad > 0
                                        ? perturbed(bundle.camera_from_world, cfg.camera_jitter_rad, cam_rng)
                                        : bundle.camera_from_world;
            const auto bones = bone_orientations(t_ms);
            const auto stamp = static_cast<std::int64_t>(std::llround(t_ms));
            for (std::size_t i = 0; i < 9; ++i) {
                const TrackerGroundTruth& gt = bundle.ground_truth[i];
                const bool tag_seen = !tag_rng.bernoulli(cfg.tag_dropout);
                const Rotation clean_tag = camera * bones[i] * gt.bone_to_sensor * gt.tag_to_sensor.inverse();
                const Rotation noisy_tag = perturbed(clean_tag, cfg.sigma_tag_rad, tag_rng);
                if (tag_seen) {
                    bundle.tag[i].push_back(
                        {stamp + offsets[9], noisy_tag, static_cast<std::uint16_t>(i)});
                }
                const bool bone_seen = bone_rng.bernoulli(cfg.bone_recall);
                const Rotation noisy_bone = perturbed(camera * bones[i], cfg.sigma_bone_rad, bone_rng);
                if (bone_seen) {
                    bundle.bone[i].push_back(
                        {stamp + offsets[9], noisy_bone, static_cast<std::uint16_t>(i)});
                }
            }
        }
    }

    // Headset trajectory: head pose in W_c (= the sim world up to translation drift).
    {
        Rng rng(derive_seed(cfg.seed, "sim.slam"));
        Eigen::Vector3d drift_dir = Eigen::Vector3d::Zero();
        if (cfg.slam_drift_m_s > 0) {
            drift_dir = rng.gaussian3(1.0);
            drift_dir.normalize();
        }
        const int head_joint = skeleton.bone("head").distal;
        for (std::size_t k = 0;; ++k) {
            const double t_ms = static_cast<double>(t0) + 1000.0 * static_cast<double>(k) / cfg.cam_rate_hz;
            if (t_ms > static_cast<double>(t_end)) break;
            const double t_s = (t_ms - static_cast<double>(t0)) / 1000.0;
            const PoseFrame pose = interpolate_pose(motion, t_ms);
            const FkResult fk = forward_kinematics(skeleton, pose);
            PoseSample s;
            s.timestamp_ms = static_cast<std::int64_t>(std::llround(t_ms)) + offsets[10];
            s.payload.rotation = bone_world_orientation(skeleton, fk, "head");
            s.payload.position = fk.joint_positions[head_joint] + cfg.slam_drift_m_s * t_s * drift_dir;
            s.source_id = 10;
            bundle.slam.push_back(s);
        }
    }
    return bundle;
}

/// Packages a bundle's sensor streams (not the ground truth) as a recording.
inline Recording to_recording(const SimBundle& bundle, const std::string& config_hash) {
    Recording rec;
    rec.skeleton_name = bundle.truth.skeleton_name;
    rec.config_hash = config_hash;
    rec.calib_start_ms = bundle.calib_start_ms;
    rec.calib_end_ms = bundle.calib_end_ms;
    rec.gravity_cam = bundle.gravity_cam;
    for (std::size_t i = 0; i < 9; ++i) {
        rec.rig.push_back({kTrackedBones[i], bundle.ground_truth[i].tag_to_sensor});
    }
    for (std::size_t i = 0; i < 9; ++i) {
        rec.rot_streams.push_back({std::string("imu/") + kTrackedBones[i],
                                   static_cast<std::uint16_t>(i), bundle.imu[i]});
    }
    for (std::size_t i = 0; i < 9; ++i) {
        rec.rot_streams.push_back({std::string("tag/") + kTrackedBones[i],
                                   static_cast<std::uint16_t>(i), bundle.tag[i]});
    }
    for (std::size_t i = 0; i < 9; ++i) {
        rec.rot_streams.push_back({std::string("bone/") + kTrackedBones[i],
                                   static_cast<std::uint16_t>(i), bundle.bone[i]});
    }
    rec.pose_streams.push_back({"slam/head", 10, bundle.slam});
    return rec;
}

}  // namespace roshi
