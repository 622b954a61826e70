#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "roshi/errors.hpp"
#include "roshi/skeleton.hpp"
#include "roshi/stream.hpp"

namespace roshi {

struct TimeRange {
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;
    bool contains(std::int64_t t) const { return t >= start_ms && t <= end_ms; }
};

/// Frame pairing for evaluation: ground-truth frames are the reference,
/// predictions matched by nearest-neighbor timestamp. Excluded segments
/// (e.g. the calibration window) are dropped from the reference.
struct EvalAlignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (truth index, pred index)
    std::size_t total_frames = 0;  // reference frames after exclusions
};

inline EvalAlignment align_motions(const MotionSequence& pred, const MotionSequence& truth,
                                   double max_gap_ms = 50.0,
                                   std::span<const TimeRange> exclusions = {}) {
    EvalAlignment out;
    std::vector<std::size_t> truth_indices;
    std::vector<std::int64_t> truth_ts;
    for (std::size_t i = 0; i < truth.frames.size(); ++i) {
        const std::int64_t t = truth.frames[i].timestamp_ms;
        bool excluded = false;
        for (const TimeRange& r : exclusions) excluded = excluded || r.contains(t);
        if (excluded) continue;
        truth_indices.push_back(i);
        truth_ts.push_back(t);
    }
    out.total_frames = truth_ts.size();
    if (truth_ts.empty() || pred.frames.empty()) return out;

    std::vector<std::int64_t> pred_ts;
    pred_ts.reserve(pred.frames.size());
    for (const PoseFrame& f : pred.frames) pred_ts.push_back(f.timestamp_ms);

    const std::vector<std::vector<std::int64_t>> streams = {truth_ts, pred_ts};
    const auto aligned = synchronize_timestamps(streams, 0, static_cast<std::int64_t>(max_gap_ms));
    for (std::size_t k = 0; k < aligned.size(); ++k) {
        if (aligned[k].entries[1].valid) {
            out.pairs.emplace_back(truth_indices[k], aligned[k].entries[1].sample_index);
        }
    }
    return out;
}

/// World-frame mean per-joint position error in centimeters; no Procrustes,
/// no root centering.
inline double mpjpe_cm(const SkeletonModel& skeleton, const MotionSequence& pred,
                       const MotionSequence& truth, const EvalAlignment& alignment) {
    if (alignment.pairs.empty()) throw DataError("mpjpe: no valid frame pairs");
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& [ti, pi] : alignment.pairs) {
        const FkResult fk_t = forward_kinematics(skeleton, truth.frames[ti]);
        const FkResult fk_p = forward_kinematics(skeleton, pred.frames[pi]);
        for (std::size_t j = 0; j < skeleton.joint_count(); ++j) {
            sum += (fk_p.joint_positions[j] - fk_t.joint_positions[j]).norm();
            ++count;
        }
    }
    return 100.0 * sum / static_cast<double>(count);
}

namespace detail {

/// Parent->child unit directions with the root pose normalized away (root
/// orientation identity, root at the origin). Degenerate zero-length edges
/// are skipped via the valid mask.
inline void root_normalized_directions(const SkeletonModel& skeleton, const PoseFrame& frame,
                                       std::vector<Eigen::Vector3d>& dirs,
                                       std::vector<bool>& valid) {
    PoseFrame normalized = frame;
    normalized.root_orientation = Rotation::identity();
    normalized.root_position = Eigen::Vector3d::Zero();
    const FkResult fk = forward_kinematics(skeleton, normalized);
    const std::size_t n = skeleton.joint_count();
    dirs.resize(n - 1);
    valid.resize(n - 1);
    for (std::size_t j = 1; j < n; ++j) {
        const auto parent = static_cast<std::size_t>(skeleton.joints()[j].parent);
        const Eigen::Vector3d d = fk.joint_positions[j] - fk.joint_positions[parent];
        const double len = d.norm();
        valid[j - 1] = len > 1e-12;
        dirs[j - 1] = valid[j - 1] ? Eigen::Vector3d(d / len) : Eigen::Vector3d::Zero();
    }
}

inline double angle_between_units(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace detail

/// Joint angle error: mean absolute angle between predicted and ground-truth
/// parent->child bone directions, independent of the global/root pose.
/// Degrees.
inline double jae_deg(const SkeletonModel& skeleton, const MotionSequence& pred,
                      const MotionSequence& truth, const EvalAlignment& alignment,
                      std::size_t* degenerate_bones = nullptr) {
    if (alignment.pairs.empty()) throw DataError("jae: no valid frame pairs");
    double sum = 0.0;
    std::size_t count = 0, degenerate = 0;
    std::vector<Eigen::Vector3d> dp, dt;
    std::vector<bool> vp, vt;
    for (const auto& [ti, pi] : alignment.pairs) {
        detail::root_normalized_directions(skeleton, truth.frames[ti], dt, vt);
        detail::root_normalized_directions(skeleton, pred.frames[pi], dp, vp);
        for (std::size_t e = 0; e < dt.size(); ++e) {
            if (!vt[e] || !vp[e]) {
                ++degenerate;
                continue;
            }
            sum += detail::angle_between_units(dp[e], dt[e]);
            ++count;
        }
    }
    if (degenerate_bones) *degenerate_bones = degenerate;
    if (count == 0) throw DataError("jae: all bone edges degenerate");
    return sum / static_cast<double>(count) * 180.0 / std::numbers::pi;
}

/// Fraction of evaluation frames with a valid prediction. An empty clip
/// yields 0 by convention (reported with a warning in build_report).
inline double recall(const EvalAlignment& alignment) {
    if (alignment.total_frames == 0) return 0.0;
    return static_cast<double>(alignment.pairs.size()) /
           static_cast<double>(alignment.total_frames);
}

// --- Report -----------------------------------------------------------------------

struct ClipEval {
    std::string name;
    std::size_t eval_frames = 0;  // reference frames after exclusions
    std::size_t valid_pairs = 0;
    double mpjpe_cm = 0.0;
    double jae_deg = 0.0;
    double recall = 0.0;
    std::vector<TimeRange> exclusions;
    std::string warning;
};

struct EvalReport {
    std::vector<ClipEval> clips;
    ClipEval aggregate;  // frame-count-weighted means
};

struct ClipInput {
    std::string name;
    const MotionSequence* pred = nullptr;
    const MotionSequence* truth = nullptr;
    std::vector<TimeRange> exclusions;
};

inline EvalReport build_report(const SkeletonModel& skeleton, std::span<const ClipInput> clips,
                               double max_gap_ms = 50.0) {
    EvalReport report;
    double mpjpe_weighted = 0.0, jae_weighted = 0.0;
    std::size_t valid_total = 0, frames_total = 0, matched_total = 0;
    for (const ClipInput& clip : clips) {
        ClipEval e;
        e.name = clip.name;
        e.exclusions = clip.exclusions;
        const EvalAlignment alignment =
            align_motions(*clip.pred, *clip.truth, max_gap_ms, clip.exclusions);
        e.eval_frames = alignment.total_frames;
        e.valid_pairs = alignment.pairs.size();
        e.recall = recall(alignment);
        if (alignment.total_frames == 0) {
            e.warning = "empty_clip";
        } else if (!alignment.pairs.empty()) {
            e.mpjpe_cm = mpjpe_cm(skeleton, *clip.pred, *clip.truth, alignment);
            e.jae_deg = jae_deg(skeleton, *clip.pred, *clip.truth, alignment);
        } else {
            e.warning = "no_valid_pairs";
        }
        mpjpe_weighted += e.mpjpe_cm * static_cast<double>(e.valid_pairs);
        jae_weighted += e.jae_deg * static_cast<double>(e.valid_pairs);
        valid_total += e.valid_pairs;
        frames_total += e.eval_frames;
        matched_total += e.valid_pairs;
        report.clips.push_back(std::move(e));
    }
    report.aggregate.name = "aggregate";
    report.aggregate.eval_frames = frames_total;
    report.aggregate.valid_pairs = valid_total;
    if (valid_total > 0) {
        report.aggregate.mpjpe_cm = mpjpe_weighted / static_cast<double>(valid_total);
        report.aggregate.jae_deg = jae_weighted / static_cast<double>(valid_total);
    }
    if (frames_total > 0) {
        report.aggregate.recall =
            static_cast<double>(matched_total) / static_cast<double>(frames_total);
    }
    return report;
}

namespace detail {

inline nlohmann::ordered_json clip_to_json(const ClipEval& e) {
    nlohmann::ordered_json j;
    j["name"] = e.name;
    j["eval_frames"] = e.eval_frames;
    j["valid_pairs"] = e.valid_pairs;
    j["mpjpe_cm"] = e.mpjpe_cm;
    j["jae_deg"] = e.jae_deg;
    j["recall"] = e.recall;
    if (!e.exclusions.empty()) {
        auto arr = nlohmann::ordered_json::array();
        for (const TimeRange& r : e.exclusions) {
            arr.push_back({{"start_ms", r.start_ms}, {"end_ms", r.end_ms}});
        }
        j["excluded"] = arr;
    }
    if (!e.warning.empty()) j["warning"] = e.warning;
    return j;
}

}  // namespace detail

/// Machine-readable report (versioned JSON; byte-stable for a fixed input).
inline void write_report_json(const EvalReport& report, std::ostream& out) {
    nlohmann::ordered_json j;
    j["schema"] = "roshi-report";
    j["version"] = 1;
    auto clips = nlohmann::ordered_json::array();
    for (const ClipEval& e : report.clips) clips.push_back(detail::clip_to_json(e));
    j["clips"] = clips;
    j["aggregate"] = detail::clip_to_json(report.aggregate);
    out << j.dump(2) << "\n";
}

/// Aligned-text summary table.
inline void write_report_text(const EvalReport& report, std::ostream& out) {
    out << std::left << std::setw(24) << "clip" << std::right << std::setw(10) << "frames"
        << std::setw(10) << "pairs" << std::setw(12) << "MPJPE(cm)" << std::setw(12) << "JAE(deg)"
        << std::setw(10) << "recall" << "\n";
    const auto row = [&](const ClipEval& e) {
        out << std::left << std::setw(24) << e.name << std::right << std::setw(10) << e.eval_frames
            << std::setw(10) << e.valid_pairs << std::setw(12) << std::fixed << std::setprecision(4)
            << e.mpjpe_cm << std::setw(12) << e.jae_deg << std::setw(10) << std::setprecision(3)
            << e.recall;
        if (!e.warning.empty()) out << "  [" << e.warning << "]";
        out << "\n";
        out.unsetf(std::ios_base::floatfield);
    };
    for (const ClipEval& e : report.clips) row(e);
    row(report.aggregate);
}

inline void write_report_files(const EvalReport& report, const std::string& json_path,
                               const std::string& text_path) {
    std::ofstream js(json_path);
    if (!js) throw DataError("report: cannot write '" + json_path + "'");
    write_report_json(report, js);
    std::ofstream txt(text_path);
    if (!txt) throw DataError("report: cannot write '" + text_path + "'");
    write_report_text(report, txt);
}

}  // namespace roshi
