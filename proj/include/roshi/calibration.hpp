#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "roshi/errors.hpp"
#include "roshi/recording.hpp"
#include "roshi/skeleton.hpp"
#include "roshi/so3.hpp"
#include "roshi/stream.hpp"

namespace roshi {

/// One synchronized observation: tag orientation C_s R_T_i, estimated bone
/// orientation C_s R_B_i, and IMU orientation W_i R_S_i.
struct CalibrationTriple {
    std::int64_t timestamp_ms = 0;
    Rotation tag;
    Rotation bone;
    Rotation imu;
};

struct TrackerCalibrationInput {
    std::vector<CalibrationTriple> triples;
    Rotation tag_to_sensor;  // known mount rotation T_i -> S_i
};

struct CalibrationInput {
    std::array<TrackerCalibrationInput, 9> trackers;
    Eigen::Vector3d gravity_cam = Eigen::Vector3d::UnitZ();
};

/// Gathers per-tracker synchronized (tag, bone, imu) triples over the
/// recording's calibration window. A triple exists only where the tag frame
/// found both a bone and an IMU match within max_gap_ms.
inline CalibrationInput build_calibration_input(const Recording& rec, double max_gap_ms = 50.0) {
    if (!rec.has_calibration_segment()) {
        throw DataError("calibration: recording has no calibration segment marker");
    }
    CalibrationInput input;
    input.gravity_cam = rec.gravity_cam;
    for (std::size_t i = 0; i < 9; ++i) {
        const std::string bone_name = kTrackedBones[i];
        const RigEntry* rig = nullptr;
        for (const auto& e : rec.rig) {
            if (e.bone == bone_name) rig = &e;
        }
        if (!rig) throw DataError("calibration: recording lacks rig entry for '" + bone_name + "'");
        input.trackers[i].tag_to_sensor = rig->tag_to_sensor;

        const RotStream* tag = rec.find_rot("tag/" + bone_name);
        const RotStream* bone = rec.find_rot("bone/" + bone_name);
        const RotStream* imu = rec.find_rot("imu/" + bone_name);
        if (!tag || !bone || !imu || tag->samples.empty() || bone->samples.empty() ||
            imu->samples.empty()) {
            continue;  // tracker will fail with too few samples
        }
        const std::vector<std::vector<std::int64_t>> ts = {
            timestamps_of(std::span<const RotSample>(tag->samples)),
            timestamps_of(std::span<const RotSample>(bone->samples)),
            timestamps_of(std::span<const RotSample>(imu->samples))};
        const auto aligned =
            synchronize_timestamps(ts, 0, static_cast<std::int64_t>(max_gap_ms));
        for (const AlignedFrame& frame : aligned) {
            if (frame.reference_timestamp_ms < rec.calib_start_ms ||
                frame.reference_timestamp_ms > rec.calib_end_ms) {
                continue;
            }
            if (!frame.entries[1].valid || !frame.entries[2].valid) continue;
            CalibrationTriple triple;
            triple.timestamp_ms = frame.reference_timestamp_ms;
            triple.tag = tag->samples[frame.entries[0].sample_index].payload;
            triple.bone = bone->samples[frame.entries[1].sample_index].payload;
            triple.imu = imu->samples[frame.entries[2].sample_index].payload;
            input.trackers[i].triples.push_back(triple);
        }
    }
    return input;
}

struct CalibrationOptions {
    int min_samples = 30;
    /// One optional trim pass inside the barycenter (radians).
    std::optional<double> trim_threshold_rad;
    /// Project the world heading onto rotations about gravity (on by default;
    /// the per-IMU local worlds are gravity-aligned so the true offset is yaw).
    bool yaw_only = true;
};

struct BoneToSensorEstimate {
    Rotation rotation;
    int sample_count = 0;
    KarcherDiagnostics diagnostics;
};

/// Per-frame point estimates (C_s R_B_i)^T (C_s R_T_i) (T_i R_S_i), filtered
/// by their barycenter on SO(3).
inline BoneToSensorEstimate estimate_bone_to_sensor(const CalibrationInput& input,
                                                    std::size_t tracker,
                                                    const CalibrationOptions& options = {}) {
    const TrackerCalibrationInput& in = input.trackers.at(tracker);
    if (static_cast<int>(in.triples.size()) < options.min_samples) {
        throw DataError("calibration: tracker " + std::string(kTrackedBones[tracker]) + " has " +
                        std::to_string(in.triples.size()) + " valid triples, needs " +
                        std::to_string(options.min_samples));
    }
    std::vector<Rotation> samples;
    samples.reserve(in.triples.size());
    for (const CalibrationTriple& t : in.triples) {
        samples.push_back(t.bone.inverse() * t.tag * in.tag_to_sensor);
    }
    KarcherOptions kopt;
    kopt.trim_threshold_rad = options.trim_threshold_rad;
    const KarcherResult mean = karcher_mean(samples, kopt);
    return {mean.mean, static_cast<int>(samples.size()), mean.diagnostics};
}

struct WorldAlignmentEstimate {
    Rotation rotation;  // W_p R_W_i
    bool ambiguous = false;
    int sample_count = 0;
    KarcherDiagnostics diagnostics;
    /// Angle between the estimated camera-frame world up axis and the
    /// recording's camera gravity axis; a consistency indicator.
    double gravity_dev_rad = 0.0;
};

namespace detail {

inline KarcherResult camera_world_barycenter(const TrackerCalibrationInput& in,
                                             const CalibrationOptions& options) {
    std::vector<Rotation> samples;
    samples.reserve(in.triples.size());
    const Rotation sensor_to_tag = in.tag_to_sensor.inverse();
    for (const CalibrationTriple& t : in.triples) {
        // C_s R_W_i = (C_s R_T_i) (W_i R_T_i)^T with W_i R_T_i = imu * (S_i R_T_i).
        samples.push_back(t.tag * (t.imu * sensor_to_tag).inverse());
    }
    KarcherOptions kopt;
    kopt.trim_threshold_rad = options.trim_threshold_rad;
    return karcher_mean(samples, kopt);
}

}  // namespace detail

/// Heading alignment W_p R_W_i via per-frame camera-frame world estimates and
/// their barycenters, anchored at the pelvis tracker.
inline WorldAlignmentEstimate estimate_world_alignment(const CalibrationInput& input,
                                                       std::size_t tracker,
                                                       std::size_t pelvis = kPelvisTracker,
                                                       const CalibrationOptions& options = {}) {
    for (std::size_t idx : {tracker, pelvis}) {
        if (static_cast<int>(input.trackers.at(idx).triples.size()) < options.min_samples) {
            throw DataError("calibration: tracker " + std::string(kTrackedBones[idx]) + " has " +
                            std::to_string(input.trackers[idx].triples.size()) +
                            " valid triples, needs " + std::to_string(options.min_samples));
        }
    }
    const KarcherResult mean_i = detail::camera_world_barycenter(input.trackers[tracker], options);
    const KarcherResult mean_p = detail::camera_world_barycenter(input.trackers[pelvis], options);

    WorldAlignmentEstimate out;
    out.sample_count = static_cast<int>(input.trackers[tracker].triples.size());
    out.diagnostics = mean_i.diagnostics;
    const Eigen::Vector3d up_cam = mean_i.mean * Eigen::Vector3d::UnitZ();
    const double c = std::clamp(up_cam.dot(input.gravity_cam.normalized()), -1.0, 1.0);
    out.gravity_dev_rad = std::acos(c);

    const Rotation full = mean_p.mean.inverse() * mean_i.mean;
    if (options.yaw_only) {
        const YawProjection yaw = yaw_project(full, Eigen::Vector3d::UnitZ());
        out.rotation = yaw.rotation;
        out.ambiguous = yaw.ambiguous;
    } else {
        out.rotation = full;
    }
    return out;
}

struct TrackerCalibration {
    std::string bone;
    bool ok = false;
    std::string failure_reason;
    Rotation bone_to_sensor;  // B_i R_S_i barycenter
    Rotation world_heading;   // W_p R_W_i
    bool yaw_only = true;
    bool heading_ambiguous = false;
    int sample_count = 0;
    double residual_spread_rad = 0.0;
    int trimmed = 0;
    double gravity_dev_rad = 0.0;
};

struct CalibrationResult {
    std::array<TrackerCalibration, 9> trackers;
    Eigen::Vector3d gravity_cam = Eigen::Vector3d::UnitZ();

    const TrackerCalibration& by_index(std::size_t i) const { return trackers.at(i); }
};

/// Runs both estimators for all nine trackers. Individual trackers may fail
/// (too few detections) and are reported as such; a pelvis failure is global
/// because the world alignment is pelvis-anchored.
inline CalibrationResult calibrate(const CalibrationInput& input,
                                   const CalibrationOptions& options = {}) {
    CalibrationResult result;
    result.gravity_cam = input.gravity_cam;

    // Pelvis first: everything else is anchored on it.
    try {
        estimate_bone_to_sensor(input, kPelvisTracker, options);
    } catch (const Error& e) {
        throw DataError(std::string("calibration: pelvis anchor failed: ") + e.what());
    }

    for (std::size_t i = 0; i < 9; ++i) {
        TrackerCalibration& t = result.trackers[i];
        t.bone = kTrackedBones[i];
        t.yaw_only = options.yaw_only;
        try {
            const BoneToSensorEstimate b2s = estimate_bone_to_sensor(input, i, options);
            const WorldAlignmentEstimate heading =
                estimate_world_alignment(input, i, kPelvisTracker, options);
            t.ok = true;
            t.bone_to_sensor = b2s.rotation;
            t.world_heading = heading.rotation;
            t.heading_ambiguous = heading.ambiguous;
            t.sample_count = b2s.sample_count;
            t.residual_spread_rad = b2s.diagnostics.max_residual_rad;
            t.trimmed = b2s.diagnostics.trimmed_count;
            t.gravity_dev_rad = heading.gravity_dev_rad;
        } catch (const Error& e) {
            t.ok = false;
            std::string reason = e.what();
            for (char& c : reason) {
                if (c == ' ') c = '_';
            }
            t.failure_reason = reason;
        }
    }
    return result;
}

// --- Calibration document (versioned text) ------------------------------------

inline void save_calibration(const CalibrationResult& result, std::ostream& out) {
    out.precision(17);
    out << "roshi-calibration v1\n";
    out << "gravity_cam " << result.gravity_cam.x() << " " << result.gravity_cam.y() << " "
        << result.gravity_cam.z() << "\n";
    for (const TrackerCalibration& t : result.trackers) {
        out << "tracker " << t.bone << " ok=" << (t.ok ? 1 : 0);
        if (!t.ok) {
            out << " reason=" << (t.failure_reason.empty() ? "unknown" : t.failure_reason) << "\n";
            continue;
        }
        const Eigen::Quaterniond& b = t.bone_to_sensor.quaternion();
        const Eigen::Quaterniond& h = t.world_heading.quaternion();
        out << " yaw_only=" << (t.yaw_only ? 1 : 0) << " ambiguous=" << (t.heading_ambiguous ? 1 : 0)
            << " samples=" << t.sample_count << " spread_rad=" << t.residual_spread_rad
            << " trimmed=" << t.trimmed << " gravity_dev_rad=" << t.gravity_dev_rad << " b2s=" << b.w()
            << "," << b.x() << "," << b.y() << "," << b.z() << " heading=" << h.w() << "," << h.x()
            << "," << h.y() << "," << h.z() << "\n";
    }
    out << "end\n";
}

inline void save_calibration_file(const CalibrationResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("calibration: cannot write '" + path + "'");
    save_calibration(result, out);
}

namespace detail {

inline Rotation parse_quat_csv(const std::string& s) {
    std::istringstream ss(s);
    double v[4];
    char comma;
    ss >> v[0] >> comma >> v[1] >> comma >> v[2] >> comma >> v[3];
    if (!ss) throw SchemaError("calibration: bad quaternion '" + s + "'");
    return Rotation::from_quaternion(v[0], v[1], v[2], v[3]);
}

}  // namespace detail

inline CalibrationResult load_calibration(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("calibration: empty document");
    if (line != "roshi-calibration v1") {
        throw VersionError("calibration: unsupported header '" + line + "'");
    }
    CalibrationResult result;
    std::size_t seen = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line == "end") {
            if (seen != result.trackers.size()) {
                throw SchemaError("calibration: expected 9 trackers, got " + std::to_string(seen));
            }
            return result;
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "gravity_cam") {
            ls >> result.gravity_cam.x() >> result.gravity_cam.y() >> result.gravity_cam.z();
            continue;
        }
        if (key != "tracker") throw SchemaError("calibration: unknown key '" + key + "'");
        TrackerCalibration t;
        ls >> t.bone;
        std::string field;
        while (ls >> field) {
            const auto eq = field.find('=');
            if (eq == std::string::npos) throw SchemaError("calibration: bad field '" + field + "'");
            const std::string name = field.substr(0, eq);
            const std::string value = field.substr(eq + 1);
            if (name == "ok") {
                t.ok = value == "1";
            } else if (name == "reason") {
                t.failure_reason = value;
            } else if (name == "yaw_only") {
                t.yaw_only = value == "1";
            } else if (name == "ambiguous") {
                t.heading_ambiguous = value == "1";
            } else if (name == "samples") {
                t.sample_count = std::stoi(value);
            } else if (name == "spread_rad") {
                t.residual_spread_rad = std::stod(value);
            } else if (name == "trimmed") {
                t.trimmed = std::stoi(value);
            } else if (name == "gravity_dev_rad") {
                t.gravity_dev_rad = std::stod(value);
            } else if (name == "b2s") {
                t.bone_to_sensor = detail::parse_quat_csv(value);
            } else if (name == "heading") {
                t.world_heading = detail::parse_quat_csv(value);
            } else {
                throw SchemaError("calibration: unknown field '" + name + "'");
            }
        }
        bool placed = false;
        for (std::size_t i = 0; i < 9; ++i) {
            if (t.bone == kTrackedBones[i]) {
                result.trackers[i] = std::move(t);
                placed = true;
                break;
            }
        }
        if (!placed) throw SchemaError("calibration: unknown tracker '" + t.bone + "'");
        ++seen;
    }
    throw SchemaError("calibration: missing 'end'");
}

inline CalibrationResult load_calibration_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("calibration: cannot read '" + path + "'");
    return load_calibration(in);
}

}  // namespace roshi
