#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "roshi/errors.hpp"
#include "roshi/optimizer.hpp"
#include "roshi/sim.hpp"

namespace roshi {

/// Everything one experiment needs: the simulation settings, guidance
/// weights, synchronization gap, and motion selection. One versioned text
/// schema; command-line flags override individual fields.
struct PipelineConfig {
    SimConfig sim;
    std::string motion = "walk-cycle";
    double duration_s = 30.0;
    std::string scripted_path;
    double walk_frequency_hz = 0.8;
    double walk_hip_amplitude_rad = 0.3;
    double max_gap_ms = 50.0;
    FuseOptions fuse;
    /// Explicit per-tracker ground truth overriding the seeded defaults.
    std::vector<std::pair<int, TrackerGroundTruth>> tracker_overrides;

    static PipelineConfig load(std::istream& in);
    static PipelineConfig load_file(const std::string& path);
    void save(std::ostream& out) const;

    /// Canonical serialized form; the config hash recorded in outputs.
    std::string canonical_text() const {
        std::ostringstream ss;
        save(ss);
        return ss.str();
    }

    std::string hash() const {
        const std::string text = canonical_text();
        std::uint64_t h = 14695981039346656037ull;
        for (char c : text) {
            h ^= static_cast<std::uint8_t>(c);
            h *= 1099511628211ull;
        }
        std::ostringstream ss;
        ss << std::hex << h;
        return ss.str();
    }
};

inline void PipelineConfig::save(std::ostream& out) const {
    out.precision(17);
    out << "roshi-config v1\n";
    out << "seed " << sim.seed << "\n";
    out << "motion " << motion << "\n";
    if (!scripted_path.empty()) out << "scripted_path " << scripted_path << "\n";
    out << "duration_s " << duration_s << "\n";
    out << "calib_duration_s " << sim.calib_duration_s << "\n";
    out << "imu_rate_hz " << sim.imu_rate_hz << "\n";
    out << "cam_rate_hz " << sim.cam_rate_hz << "\n";
    out << "sigma_imu_deg " << rad_to_deg(sim.sigma_imu_rad) << "\n";
    out << "sigma_tag_deg " << rad_to_deg(sim.sigma_tag_rad) << "\n";
    out << "sigma_bone_deg " << rad_to_deg(sim.sigma_bone_rad) << "\n";
    out << "heading_drift_dps " << rad_to_deg(sim.heading_drift_rad_s) << "\n";
    out << "tag_dropout " << sim.tag_dropout << "\n";
    out << "bone_recall " << sim.bone_recall << "\n";
    out << "slam_drift_mps " << sim.slam_drift_m_s << "\n";
    out << "clock_offset_max_ms " << sim.clock_offset_max_ms << "\n";
    out << "camera_jitter_deg " << rad_to_deg(sim.camera_jitter_rad) << "\n";
    out << "start_timestamp_ms " << sim.start_timestamp_ms << "\n";
    out << "walk_frequency_hz " << walk_frequency_hz << "\n";
    out << "walk_hip_amplitude_rad " << walk_hip_amplitude_rad << "\n";
    out << "max_gap_ms " << max_gap_ms << "\n";
    out << "weight_direct " << fuse.weights.direct << "\n";
    out << "weight_relative " << fuse.weights.relative << "\n";
    out << "weight_temporal " << fuse.weights.temporal << "\n";
    out << "weight_contact " << fuse.weights.contact << "\n";
    out << "weight_smooth " << fuse.weights.smooth << "\n";
    out << "window " << fuse.window << "\n";
    out << "overlap " << fuse.overlap << "\n";
    for (const auto& [idx, gt] : tracker_overrides) {
        const Eigen::Quaterniond& b = gt.bone_to_sensor.quaternion();
        const Eigen::Quaterniond& t = gt.tag_to_sensor.quaternion();
        const double yaw_deg = rad_to_deg(gt.heading.log().z());
        out << "tracker " << kTrackedBones[idx] << " b2s=" << b.w() << "," << b.x() << "," << b.y()
            << "," << b.z() << " t2s=" << t.w() << "," << t.x() << "," << t.y() << "," << t.z()
            << " heading_deg=" << yaw_deg << "\n";
    }
    out << "end\n";
}

inline PipelineConfig PipelineConfig::load(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("config: empty document");
    if (line != "roshi-config v1") throw ConfigError("config: unsupported header '" + line + "'");
    PipelineConfig cfg;
    const auto parse_quat_csv = [](const std::string& s) {
        std::istringstream ss(s);
        double v[4];
        char comma;
        ss >> v[0] >> comma >> v[1] >> comma >> v[2] >> comma >> v[3];
        if (!ss) throw ConfigError("config: bad quaternion '" + s + "'");
        return Rotation::from_quaternion(v[0], v[1], v[2], v[3]);
    };
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line == "end") return cfg;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "seed") ls >> cfg.sim.seed;
        else if (key == "motion") ls >> cfg.motion;
        else if (key == "scripted_path") ls >> cfg.scripted_path;
        else if (key == "duration_s") ls >> cfg.duration_s;
        else if (key == "calib_duration_s") ls >> cfg.sim.calib_duration_s;
        else if (key == "imu_rate_hz") ls >> cfg.sim.imu_rate_hz;
        else if (key == "cam_rate_hz") ls >> cfg.sim.cam_rate_hz;
        else if (key == "sigma_imu_deg") { double v; ls >> v; cfg.sim.sigma_imu_rad = deg_to_rad(v); }
        else if (key == "sigma_tag_deg") { double v; ls >> v; cfg.sim.sigma_tag_rad = deg_to_rad(v); }
        else if (key == "sigma_bone_deg") { double v; ls >> v; cfg.sim.sigma_bone_rad = deg_to_rad(v); }
        else if (key == "heading_drift_dps") { double v; ls >> v; cfg.sim.heading_drift_rad_s = deg_to_rad(v); }
        else if (key == "tag_dropout") ls >> cfg.sim.tag_dropout;
        else if (key == "bone_recall") ls >> cfg.sim.bone_recall;
        else if (key == "slam_drift_mps") ls >> cfg.sim.slam_drift_m_s;
        else if (key == "clock_offset_max_ms") ls >> cfg.sim.clock_offset_max_ms;
        else if (key == "camera_jitter_deg") { double v; ls >> v; cfg.sim.camera_jitter_rad = deg_to_rad(v); }
        else if (key == "start_timestamp_ms") ls >> cfg.sim.start_timestamp_ms;
        else if (key == "walk_frequency_hz") ls >> cfg.walk_frequency_hz;
        else if (key == "walk_hip_amplitude_rad") ls >> cfg.walk_hip_amplitude_rad;
        else if (key == "max_gap_ms") ls >> cfg.max_gap_ms;
        else if (key == "weight_direct") ls >> cfg.fuse.weights.direct;
        else if (key == "weight_relative") ls >> cfg.fuse.weights.relative;
        else if (key == "weight_temporal") ls >> cfg.fuse.weights.temporal;
        else if (key == "weight_contact") ls >> cfg.fuse.weights.contact;
        else if (key == "weight_smooth") ls >> cfg.fuse.weights.smooth;
        else if (key == "window") ls >> cfg.fuse.window;
        else if (key == "overlap") ls >> cfg.fuse.overlap;
        else if (key == "tracker") {
            std::string bone;
            ls >> bone;
            int idx = -1;
            for (std::size_t i = 0; i < 9; ++i) {
                if (bone == kTrackedBones[i]) idx = static_cast<int>(i);
            }
            if (idx < 0) throw ConfigError("config: unknown tracker '" + bone + "'");
            TrackerGroundTruth gt;
            std::string field;
            while (ls >> field) {
                const auto eq = field.find('=');
                if (eq == std::string::npos) throw ConfigError("config: bad field '" + field + "'");
                const std::string name = field.substr(0, eq);
                const std::string value = field.substr(eq + 1);
                if (name == "b2s") gt.bone_to_sensor = parse_quat_csv(value);
                else if (name == "t2s") gt.tag_to_sensor = parse_quat_csv(value);
                else if (name == "heading_deg") gt.heading = Rotation::rot_z(deg_to_rad(std::stod(value)));
                else throw ConfigError("config: unknown tracker field '" + name + "'");
            }
            cfg.tracker_overrides.emplace_back(idx, gt);
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
        if (ls.fail()) throw ConfigError("config: bad value on line '" + line + "'");
    }
    throw ConfigError("config: missing 'end'");
}

inline PipelineConfig PipelineConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read '" + path + "'");
    return load(in);
}

/// Parses "k=v,k=v" command-line weight overrides (keys: direct, relative,
/// temporal, contact, smooth).
inline void apply_weight_overrides(const std::string& spec, GuidanceWeights& weights) {
    if (spec.empty()) return;
    std::istringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("weights: bad item '" + item + "'");
        const std::string key = item.substr(0, eq);
        const double value = std::stod(item.substr(eq + 1));
        if (key == "direct") weights.direct = value;
        else if (key == "relative") weights.relative = value;
        else if (key == "temporal") weights.temporal = value;
        else if (key == "contact") weights.contact = value;
        else if (key == "smooth") weights.smooth = value;
        else throw ConfigError("weights: unknown key '" + key + "'");
    }
    weights.validate();
}

}  // namespace roshi
