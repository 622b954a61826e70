#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "roshi/calibration.hpp"
#include "roshi/errors.hpp"
#include "roshi/recording.hpp"
#include "roshi/skeleton.hpp"
#include "roshi/so3.hpp"
#include "roshi/stream.hpp"

namespace roshi {

struct TrackedBoneSample {
    Rotation orientation;       // W_p R_B_i
    double staleness_ms = 0.0;  // time since the contributing IMU sample
    bool valid = false;
};

struct TrackedFrame {
    std::int64_t timestamp_ms = 0;
    std::array<TrackedBoneSample, 9> bones;
};

struct TrackedBones {
    std::vector<TrackedFrame> frames;
};

/// Per-frame bone orientations from calibrated IMU streams:
///   W_p R_B_i (t) = (W_p R_W_i) (W_i R_S_i (t)) (B_i R_S_i)^T.
/// Frames follow the pelvis IMU stream; other trackers contribute their
/// nearest sample, holding the last value when a match is missing.
inline TrackedBones track_bones(const Recording& rec, const CalibrationResult& calib,
                                double max_gap_ms = 50.0) {
    std::array<const RotStream*, 9> streams{};
    std::vector<std::vector<std::int64_t>> ts(9);
    for (std::size_t i = 0; i < 9; ++i) {
        streams[i] = rec.find_rot(std::string("imu/") + kTrackedBones[i]);
        const bool present = streams[i] && !streams[i]->samples.empty();
        if (present && !calib.trackers[i].ok) {
            throw DataError(std::string("track_bones: tracker '") + kTrackedBones[i] +
                            "' is present but has no calibration");
        }
        if (present) ts[i] = timestamps_of(std::span<const RotSample>(streams[i]->samples));
    }
    if (ts[kPelvisTracker].empty()) {
        throw DataError("track_bones: pelvis IMU stream is empty");
    }

    const auto aligned =
        synchronize_timestamps(ts, kPelvisTracker, static_cast<std::int64_t>(max_gap_ms));
    TrackedBones out;
    out.frames.resize(aligned.size());

    std::array<std::optional<std::pair<Rotation, std::int64_t>>, 9> held;  // value + its stamp
    for (std::size_t k = 0; k < aligned.size(); ++k) {
        TrackedFrame& frame = out.frames[k];
        frame.timestamp_ms = aligned[k].reference_timestamp_ms;
        for (std::size_t i = 0; i < 9; ++i) {
            if (ts[i].empty()) continue;
            const AlignedEntry& entry = aligned[k].entries[i];
            const TrackerCalibration& tc = calib.trackers[i];
            if (entry.valid) {
                const Rotation& raw = streams[i]->samples[entry.sample_index].payload;
                const Rotation value = tc.world_heading * raw * tc.bone_to_sensor.inverse();
                held[i] = {value, ts[i][entry.sample_index]};
            }
            if (held[i]) {
                frame.bones[i].orientation = held[i]->first;
                frame.bones[i].staleness_ms =
                    static_cast<double>(std::max<std::int64_t>(0, frame.timestamp_ms - held[i]->second));
                frame.bones[i].valid = true;
            }
        }
    }
    return out;
}

/// Tracked bones as a recording (rot stream + staleness scalar per tracker),
/// the on-disk form of the track stage output.
inline Recording tracked_to_recording(const TrackedBones& tracked, const std::string& skeleton_name) {
    Recording rec;
    rec.skeleton_name = skeleton_name;
    rec.config_hash = "-";
    for (std::size_t i = 0; i < 9; ++i) {
        RotStream rs{std::string("tracked/") + kTrackedBones[i], static_cast<std::uint16_t>(i), {}};
        ScalarStream ss{std::string("staleness/") + kTrackedBones[i], static_cast<std::uint16_t>(i), {}};
        for (const TrackedFrame& f : tracked.frames) {
            if (!f.bones[i].valid) continue;
            rs.samples.push_back({f.timestamp_ms, f.bones[i].orientation, rs.source_id});
            ss.samples.push_back({f.timestamp_ms, f.bones[i].staleness_ms, ss.source_id});
        }
        rec.rot_streams.push_back(std::move(rs));
        rec.scalar_streams.push_back(std::move(ss));
    }
    return rec;
}

// --- Root anchoring -------------------------------------------------------------

struct RootAnchorFrame {
    std::int64_t timestamp_ms = 0;
    PosePayload head;          // interpolated headset pose in W_c
    Rotation root_orientation; // derived pelvis (root) orientation
    Eigen::Vector3d root_position = Eigen::Vector3d::Zero();
};

struct RootAnchor {
    std::vector<RootAnchorFrame> frames;
    Eigen::Vector3d head_to_pelvis_offset = Eigen::Vector3d::Zero();  // torso frame, meters
};

namespace detail {

inline PosePayload interpolate_pose_sample(std::span<const PoseSample> stream, double t_ms) {
    if (stream.empty()) throw std::invalid_argument("anchor_root: empty SLAM stream");
    if (t_ms <= static_cast<double>(stream.front().timestamp_ms)) return stream.front().payload;
    if (t_ms >= static_cast<double>(stream.back().timestamp_ms)) return stream.back().payload;
    std::size_t lo = 0, hi = stream.size() - 1;
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        if (static_cast<double>(stream[mid].timestamp_ms) <= t_ms) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    const PoseSample& a = stream[lo];
    const PoseSample& b = stream[hi];
    const double span = static_cast<double>(b.timestamp_ms - a.timestamp_ms);
    const double alpha = span > 0 ? (t_ms - static_cast<double>(a.timestamp_ms)) / span : 0.0;
    PosePayload out;
    out.position = (1.0 - alpha) * a.payload.position + alpha * b.payload.position;
    out.rotation = Rotation::from_quaternion(
        a.payload.rotation.quaternion().slerp(alpha, b.payload.rotation.quaternion()));
    return out;
}

}  // namespace detail

/// Maps the headset trajectory to a pelvis (root) pose per target frame:
/// pelvis = head + (torso orientation) * (rest head-to-pelvis offset). Torso
/// orientation comes from the tracked pelvis bone when available and from the
/// head yaw otherwise. The SLAM stream is interpolated to the target
/// timestamps (it runs slower than the IMUs).
inline RootAnchor anchor_root(std::span<const PoseSample> slam,
                              std::span<const std::int64_t> target_timestamps,
                              const SkeletonModel& skeleton,
                              const TrackedBones* tracked = nullptr) {
    if (slam.empty()) throw std::invalid_argument("anchor_root: empty SLAM stream");
    if (tracked && tracked->frames.size() != target_timestamps.size()) {
        throw std::invalid_argument("anchor_root: tracked frames do not match target timestamps");
    }

    RootAnchor anchor;
    const FkResult rest_fk = forward_kinematics(skeleton, rest_pose(skeleton));
    const int head_joint = skeleton.bone("head").distal;
    anchor.head_to_pelvis_offset = rest_fk.joint_positions[0] - rest_fk.joint_positions[head_joint];
    const double offset_len = anchor.head_to_pelvis_offset.norm();
    if (offset_len < 0.3 || offset_len > 1.0) {
        throw DataError("anchor_root: rest head-to-pelvis offset " + std::to_string(offset_len) +
                        " m outside [0.3, 1.0]");
    }

    const Rotation rest_pelvis_inv = skeleton.bone("pelvis").rest.inverse();
    const Rotation rest_head_inv = skeleton.bone("head").rest.inverse();
    anchor.frames.resize(target_timestamps.size());
    for (std::size_t k = 0; k < target_timestamps.size(); ++k) {
        RootAnchorFrame& f = anchor.frames[k];
        f.timestamp_ms = target_timestamps[k];
        f.head = detail::interpolate_pose_sample(slam, static_cast<double>(f.timestamp_ms));
        if (tracked && tracked->frames[k].bones[kPelvisTracker].valid) {
            f.root_orientation =
                tracked->frames[k].bones[kPelvisTracker].orientation * rest_pelvis_inv;
        } else {
            f.root_orientation =
                yaw_project(f.head.rotation * rest_head_inv, Eigen::Vector3d::UnitZ()).rotation;
        }
        f.root_position = f.head.position + f.root_orientation * anchor.head_to_pelvis_offset;
    }
    return anchor;
}

inline RootAnchor anchor_root(std::span<const PoseSample> slam, const TrackedBones& tracked,
                              const SkeletonModel& skeleton) {
    std::vector<std::int64_t> ts;
    ts.reserve(tracked.frames.size());
    for (const TrackedFrame& f : tracked.frames) ts.push_back(f.timestamp_ms);
    return anchor_root(slam, ts, skeleton, &tracked);
}

}  // namespace roshi
