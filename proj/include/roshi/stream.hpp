#pragma once

#include <cstdint>
#include <cstdlib>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "roshi/errors.hpp"
#include "roshi/so3.hpp"

namespace roshi {

/// The unit of every sensor stream: a payload stamped with UTC milliseconds.
template <typename T>
struct TimedSample {
    std::int64_t timestamp_ms = 0;
    T payload{};
    std::uint16_t source_id = 0;
};

struct PosePayload {
    Rotation rotation;
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

using RotSample = TimedSample<Rotation>;
using PoseSample = TimedSample<PosePayload>;
using ScalarSample = TimedSample<double>;

template <typename T>
std::vector<std::int64_t> timestamps_of(std::span<const TimedSample<T>> samples) {
    std::vector<std::int64_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.timestamp_ms);
    return out;
}

// --- Nearest-neighbor synchronization ----------------------------------------

struct AlignedEntry {
    bool valid = false;
    std::size_t sample_index = 0;
    std::int64_t gap_ms = 0;  // matched timestamp minus reference timestamp
};

struct AlignedFrame {
    std::int64_t reference_timestamp_ms = 0;
    std::vector<AlignedEntry> entries;  // one per input stream, in input order
};

/// Nearest-neighbor matching in time: one AlignedFrame per reference sample,
/// each stream contributing its globally |dt|-nearest sample. Ties resolve to
/// the earlier sample; entries farther than max_gap_ms are marked invalid.
/// Two-pointer merge, linear in the total sample count.
inline std::vector<AlignedFrame> synchronize_timestamps(
    std::span<const std::vector<std::int64_t>> streams, std::size_t reference,
    std::int64_t max_gap_ms) {
    if (reference >= streams.size()) {
        throw std::invalid_argument("synchronize: reference index out of range");
    }
    const std::vector<std::int64_t>& ref = streams[reference];
    if (ref.empty()) throw DataError("synchronize: empty reference stream");
    for (const auto& s : streams) {
        for (std::size_t i = 1; i < s.size(); ++i) {
            if (s[i] < s[i - 1]) throw DataError("synchronize: stream not time-ordered");
        }
    }

    std::vector<AlignedFrame> out(ref.size());
    for (std::size_t k = 0; k < ref.size(); ++k) {
        out[k].reference_timestamp_ms = ref[k];
        out[k].entries.resize(streams.size());
    }
    for (std::size_t s = 0; s < streams.size(); ++s) {
        const std::vector<std::int64_t>& ts = streams[s];
        std::size_t i = 0;
        for (std::size_t k = 0; k < ref.size(); ++k) {
            AlignedEntry& entry = out[k].entries[s];
            if (ts.empty()) continue;  // stays invalid
            const std::int64_t rt = ref[k];
            while (i + 1 < ts.size() &&
                   std::llabs(ts[i + 1] - rt) < std::llabs(ts[i] - rt)) {
                ++i;
            }
            entry.sample_index = i;
            entry.gap_ms = ts[i] - rt;
            entry.valid = std::llabs(entry.gap_ms) <= max_gap_ms;
        }
    }
    return out;
}

}  // namespace roshi
