#pragma once

#include <string>
#include <vector>

#include "roshi/calibration.hpp"
#include "roshi/config.hpp"
#include "roshi/errors.hpp"
#include "roshi/fusion.hpp"
#include "roshi/metrics.hpp"
#include "roshi/optimizer.hpp"
#include "roshi/recording.hpp"
#include "roshi/sim.hpp"
#include "roshi/skeleton.hpp"

namespace roshi {

/// Stage functions shared by the CLI and the acceptance suite, so a composed
/// roundtrip and the individual commands run the exact same code.

struct SimulateOutput {
    GeneratedMotion generated;
    SimBundle bundle;
    Recording recording;
};

inline SimulateOutput run_simulate(const PipelineConfig& cfg, const SkeletonModel& skeleton) {
    SimConfig sim = cfg.sim;
    if (!cfg.tracker_overrides.empty() && !sim.trackers) {
        auto gt = detail::seeded_ground_truth(sim.seed);
        for (const auto& [idx, value] : cfg.tracker_overrides) gt[static_cast<std::size_t>(idx)] = value;
        sim.trackers = gt;
    }
    MotionOptions opt;
    opt.rate_hz = sim.imu_rate_hz;
    opt.start_timestamp_ms = sim.start_timestamp_ms;
    opt.lead_in_hold_s = sim.calib_duration_s;  // hold the calibration stance
    opt.walk_frequency_hz = cfg.walk_frequency_hz;
    opt.walk_hip_amplitude_rad = cfg.walk_hip_amplitude_rad;
    opt.scripted_path = cfg.scripted_path;

    SimulateOutput out;
    out.generated = generate_motion(motion_kind_from_string(cfg.motion), cfg.duration_s, skeleton, opt);
    out.bundle = simulate_sensors(out.generated.motion, skeleton, sim);
    out.recording = to_recording(out.bundle, cfg.hash());
    return out;
}

inline CalibrationResult run_calibrate(const Recording& recording, double max_gap_ms = 50.0,
                                       const CalibrationOptions& options = {}) {
    const CalibrationInput input = build_calibration_input(recording, max_gap_ms);
    return calibrate(input, options);
}

inline TrackedBones run_track(const Recording& recording, const CalibrationResult& calib,
                              double max_gap_ms = 50.0) {
    return track_bones(recording, calib, max_gap_ms);
}

inline FuseResult run_fuse(const Recording& recording, const CalibrationResult& calib,
                           const SkeletonModel& skeleton, const FuseOptions& options = {},
                           double max_gap_ms = 50.0) {
    const TrackedBones tracked = track_bones(recording, calib, max_gap_ms);
    const PoseStream* slam = recording.find_pose("slam/head");
    if (!slam || slam->samples.empty()) {
        throw DataError("fuse: recording has no slam/head stream");
    }
    const RootAnchor anchor = anchor_root(slam->samples, tracked, skeleton);
    return fuse_sequence(skeleton, tracked, anchor, options);
}

inline EvalReport run_eval(const SkeletonModel& skeleton, const MotionSequence& pred,
                           const MotionSequence& truth, const std::string& clip_name,
                           double max_gap_ms = 50.0, std::vector<TimeRange> exclusions = {}) {
    ClipInput clip;
    clip.name = clip_name;
    clip.pred = &pred;
    clip.truth = &truth;
    clip.exclusions = std::move(exclusions);
    const std::vector<ClipInput> clips = {clip};
    return build_report(skeleton, clips, max_gap_ms);
}

struct RoundtripResult {
    SimulateOutput sim;
    CalibrationResult calib;
    TrackedBones tracked;
    FuseResult fused;
    EvalReport report;
};

/// simulate -> calibrate -> track -> fuse -> eval on one seed, excluding the
/// calibration segment from evaluation.
inline RoundtripResult run_roundtrip(const PipelineConfig& cfg, const SkeletonModel& skeleton) {
    RoundtripResult out;
    out.sim = run_simulate(cfg, skeleton);
    out.calib = run_calibrate(out.sim.recording, cfg.max_gap_ms);
    out.tracked = run_track(out.sim.recording, out.calib, cfg.max_gap_ms);
    out.fused = run_fuse(out.sim.recording, out.calib, skeleton, cfg.fuse, cfg.max_gap_ms);
    std::vector<TimeRange> exclusions;
    if (out.sim.recording.has_calibration_segment()) {
        exclusions.push_back({out.sim.recording.calib_start_ms, out.sim.recording.calib_end_ms});
    }
    out.report = run_eval(skeleton, out.fused.motion, out.sim.bundle.truth, cfg.motion,
                          cfg.max_gap_ms, std::move(exclusions));
    return out;
}

}  // namespace roshi
