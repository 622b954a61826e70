#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "roshi/errors.hpp"
#include "roshi/skeleton.hpp"
#include "roshi/stream.hpp"

namespace roshi {

struct RotStream {
    std::string name;
    std::uint16_t source_id = 0;
    std::vector<RotSample> samples;
};

struct PoseStream {
    std::string name;
    std::uint16_t source_id = 0;
    std::vector<PoseSample> samples;
};

struct ScalarStream {
    std::string name;
    std::uint16_t source_id = 0;
    std::vector<ScalarSample> samples;
};

/// Per-tracker rig metadata: the known tag-to-sensor mount rotation.
struct RigEntry {
    std::string bone;
    Rotation tag_to_sensor;
};

/// On-disk capture container: a text header block followed by length-prefixed
/// little-endian binary records, stream-major. Layout is pinned by golden
/// files in the test corpus.
struct Recording {
    std::string skeleton_name;
    std::string config_hash;
    std::int64_t calib_start_ms = -1;
    std::int64_t calib_end_ms = -1;
    Eigen::Vector3d gravity_cam = Eigen::Vector3d::UnitZ();  // camera-frame up axis
    std::vector<RigEntry> rig;
    std::vector<RotStream> rot_streams;
    std::vector<PoseStream> pose_streams;
    std::vector<ScalarStream> scalar_streams;

    bool has_calibration_segment() const {
        return calib_start_ms >= 0 && calib_end_ms > calib_start_ms;
    }

    const RotStream* find_rot(const std::string& name) const {
        for (const auto& s : rot_streams) {
            if (s.name == name) return &s;
        }
        return nullptr;
    }

    const PoseStream* find_pose(const std::string& name) const {
        for (const auto& s : pose_streams) {
            if (s.name == name) return &s;
        }
        return nullptr;
    }
};

namespace detail {

inline void put_f64(std::string& buf, double v) {
    const auto u = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

inline void put_i64buf(std::string& buf, std::int64_t v) {
    const auto u = static_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

class RecordReader {
public:
    RecordReader(std::istream& in, std::size_t header_bytes)
        : in_(in), offset_(header_bytes) {}

    std::size_t offset() const { return offset_; }

    /// Reads one length-prefixed record; empty optional at clean EOF.
    std::optional<std::string> next() {
        std::uint8_t len_bytes[4];
        in_.read(reinterpret_cast<char*>(len_bytes), 4);
        if (in_.gcount() == 0 && in_.eof()) return std::nullopt;
        if (in_.gcount() != 4) throw TruncatedError("recording: truncated record length", offset_);
        offset_ += 4;
        const std::uint32_t len = static_cast<std::uint32_t>(len_bytes[0]) |
                                  (static_cast<std::uint32_t>(len_bytes[1]) << 8) |
                                  (static_cast<std::uint32_t>(len_bytes[2]) << 16) |
                                  (static_cast<std::uint32_t>(len_bytes[3]) << 24);
        if (len > (1u << 20)) throw SchemaError("recording: implausible record length");
        std::string payload(len, '\0');
        in_.read(payload.data(), len);
        if (static_cast<std::uint32_t>(in_.gcount()) != len) {
            throw TruncatedError("recording: truncated record body", offset_);
        }
        offset_ += len;
        return payload;
    }

private:
    std::istream& in_;
    std::size_t offset_;
};

class PayloadView {
public:
    PayloadView(const std::string& p, std::size_t at_offset) : p_(p), at_(at_offset) {}

    std::uint16_t u16() {
        need(2);
        const auto* b = reinterpret_cast<const std::uint8_t*>(p_.data() + pos_);
        pos_ += 2;
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }

    std::int64_t i64() {
        need(8);
        std::uint64_t u = 0;
        const auto* b = reinterpret_cast<const std::uint8_t*>(p_.data() + pos_);
        for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        pos_ += 8;
        return static_cast<std::int64_t>(u);
    }

    double f64() { return std::bit_cast<double>(static_cast<std::uint64_t>(i64())); }

    Rotation rotation() {
        const double w = f64(), x = f64(), y = f64(), z = f64();
        return Rotation::from_quaternion(w, x, y, z);
    }

    Eigen::Vector3d vec3() {
        const double x = f64(), y = f64(), z = f64();
        return {x, y, z};
    }

    void expect_done() const {
        if (pos_ != p_.size()) throw SchemaError("recording: record payload size mismatch");
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > p_.size()) throw TruncatedError("recording: record payload too short", at_);
    }
    const std::string& p_;
    std::size_t at_;
    std::size_t pos_ = 0;
};

inline void append_record(std::ostream& out, const std::string& payload) {
    const auto len = static_cast<std::uint32_t>(payload.size());
    const std::uint8_t len_bytes[4] = {
        static_cast<std::uint8_t>(len & 0xFF), static_cast<std::uint8_t>((len >> 8) & 0xFF),
        static_cast<std::uint8_t>((len >> 16) & 0xFF), static_cast<std::uint8_t>((len >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(len_bytes), 4);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

inline void put_quat(std::string& buf, const Rotation& r) {
    const Eigen::Quaterniond& q = r.quaternion();
    put_f64(buf, q.w());
    put_f64(buf, q.x());
    put_f64(buf, q.y());
    put_f64(buf, q.z());
}

}  // namespace detail

// --- Recording write/read -----------------------------------------------------

inline void write_recording(const Recording& rec, std::ostream& out) {
    std::ostringstream header;
    header.precision(17);
    header << "roshi-recording v1\n";
    header << "skeleton " << rec.skeleton_name << "\n";
    header << "config_hash " << rec.config_hash << "\n";
    header << "gravity_cam " << rec.gravity_cam.x() << " " << rec.gravity_cam.y() << " "
           << rec.gravity_cam.z() << "\n";
    if (rec.has_calibration_segment()) {
        header << "calib_window " << rec.calib_start_ms << " " << rec.calib_end_ms << "\n";
    }
    for (const RigEntry& e : rec.rig) {
        const Eigen::Quaterniond& q = e.tag_to_sensor.quaternion();
        header << "rig " << e.bone << " " << q.w() << " " << q.x() << " " << q.y() << " "
               << q.z() << "\n";
    }
    const std::size_t total =
        rec.rot_streams.size() + rec.pose_streams.size() + rec.scalar_streams.size();
    header << "streams " << total << "\n";
    std::size_t idx = 0;
    for (const auto& s : rec.rot_streams) {
        header << "stream " << idx++ << " rot " << s.name << " " << s.source_id << " "
               << s.samples.size() << "\n";
    }
    for (const auto& s : rec.pose_streams) {
        header << "stream " << idx++ << " pose " << s.name << " " << s.source_id << " "
               << s.samples.size() << "\n";
    }
    for (const auto& s : rec.scalar_streams) {
        header << "stream " << idx++ << " scalar " << s.name << " " << s.source_id << " "
               << s.samples.size() << "\n";
    }
    header << "end_header\n";
    out << header.str();

    std::uint16_t stream_index = 0;
    for (const auto& s : rec.rot_streams) {
        for (const auto& sample : s.samples) {
            std::string payload;
            payload.reserve(42);
            payload.push_back(static_cast<char>(stream_index & 0xFF));
            payload.push_back(static_cast<char>(stream_index >> 8));
            detail::put_i64buf(payload, sample.timestamp_ms);
            detail::put_quat(payload, sample.payload);
            detail::append_record(out, payload);
        }
        ++stream_index;
    }
    for (const auto& s : rec.pose_streams) {
        for (const auto& sample : s.samples) {
            std::string payload;
            payload.reserve(66);
            payload.push_back(static_cast<char>(stream_index & 0xFF));
            payload.push_back(static_cast<char>(stream_index >> 8));
            detail::put_i64buf(payload, sample.timestamp_ms);
            detail::put_quat(payload, sample.payload.rotation);
            detail::put_f64(payload, sample.payload.position.x());
            detail::put_f64(payload, sample.payload.position.y());
            detail::put_f64(payload, sample.payload.position.z());
            detail::append_record(out, payload);
        }
        ++stream_index;
    }
    for (const auto& s : rec.scalar_streams) {
        for (const auto& sample : s.samples) {
            std::string payload;
            payload.reserve(18);
            payload.push_back(static_cast<char>(stream_index & 0xFF));
            payload.push_back(static_cast<char>(stream_index >> 8));
            detail::put_i64buf(payload, sample.timestamp_ms);
            detail::put_f64(payload, sample.payload);
            detail::append_record(out, payload);
        }
        ++stream_index;
    }
}

inline void write_recording_file(const Recording& rec, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("recording: cannot write '" + path + "'");
    write_recording(rec, out);
}

inline Recording read_recording(std::istream& in) {
    std::string line;
    std::size_t header_bytes = 0;
    auto next_line = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        header_bytes += line.size() + 1;
        return true;
    };
    if (!next_line()) throw SchemaError("recording: empty file");
    if (line.rfind("roshi-recording ", 0) != 0) throw SchemaError("recording: bad header line");
    if (line != "roshi-recording v1") throw VersionError("recording: unsupported version '" + line + "'");

    Recording rec;
    struct StreamInfo {
        std::string kind;
        std::size_t count = 0;
        std::size_t local_index = 0;  // into the per-kind vector
        std::size_t seen = 0;
    };
    std::vector<StreamInfo> infos;
    std::size_t expected_streams = 0;
    bool header_done = false;
    while (next_line()) {
        if (line.empty() || line[0] == '#') continue;
        if (line == "end_header") {
            header_done = true;
            break;
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "skeleton") {
            ls >> rec.skeleton_name;
        } else if (key == "config_hash") {
            ls >> rec.config_hash;
        } else if (key == "gravity_cam") {
            ls >> rec.gravity_cam.x() >> rec.gravity_cam.y() >> rec.gravity_cam.z();
        } else if (key == "calib_window") {
            ls >> rec.calib_start_ms >> rec.calib_end_ms;
        } else if (key == "rig") {
            RigEntry e;
            double w, x, y, z;
            ls >> e.bone >> w >> x >> y >> z;
            if (!ls) throw SchemaError("recording: bad rig line '" + line + "'");
            e.tag_to_sensor = Rotation::from_quaternion(w, x, y, z);
            rec.rig.push_back(std::move(e));
        } else if (key == "streams") {
            ls >> expected_streams;
        } else if (key == "stream") {
            std::size_t idx;
            StreamInfo info;
            std::string name;
            std::uint16_t source_id;
            ls >> idx >> info.kind >> name >> source_id >> info.count;
            if (!ls || idx != infos.size()) throw SchemaError("recording: bad stream line '" + line + "'");
            if (info.kind == "rot") {
                info.local_index = rec.rot_streams.size();
                rec.rot_streams.push_back({name, source_id, {}});
                rec.rot_streams.back().samples.reserve(info.count);
            } else if (info.kind == "pose") {
                info.local_index = rec.pose_streams.size();
                rec.pose_streams.push_back({name, source_id, {}});
                rec.pose_streams.back().samples.reserve(info.count);
            } else if (info.kind == "scalar") {
                info.local_index = rec.scalar_streams.size();
                rec.scalar_streams.push_back({name, source_id, {}});
                rec.scalar_streams.back().samples.reserve(info.count);
            } else {
                throw SchemaError("recording: unknown stream kind '" + info.kind + "'");
            }
            infos.push_back(info);
        } else {
            throw SchemaError("recording: unknown header key '" + key + "'");
        }
    }
    if (!header_done) throw SchemaError("recording: missing end_header");
    if (infos.size() != expected_streams) throw SchemaError("recording: stream count mismatch");

    detail::RecordReader reader(in, header_bytes);
    while (auto payload = reader.next()) {
        detail::PayloadView view(*payload, reader.offset());
        const std::uint16_t stream_index = view.u16();
        if (stream_index >= infos.size()) throw SchemaError("recording: record for unknown stream");
        StreamInfo& info = infos[stream_index];
        if (info.kind == "rot") {
            RotStream& s = rec.rot_streams[info.local_index];
            RotSample sample;
            sample.timestamp_ms = view.i64();
            sample.payload = view.rotation();
            sample.source_id = s.source_id;
            view.expect_done();
            s.samples.push_back(sample);
        } else if (info.kind == "pose") {
            PoseStream& s = rec.pose_streams[info.local_index];
            PoseSample sample;
            sample.timestamp_ms = view.i64();
            sample.payload.rotation = view.rotation();
            sample.payload.position = view.vec3();
            sample.source_id = s.source_id;
            view.expect_done();
            s.samples.push_back(sample);
        } else {
            ScalarStream& s = rec.scalar_streams[info.local_index];
            ScalarSample sample;
            sample.timestamp_ms = view.i64();
            sample.payload = view.f64();
            sample.source_id = s.source_id;
            view.expect_done();
            s.samples.push_back(sample);
        }
        ++info.seen;
    }
    for (std::size_t i = 0; i < infos.size(); ++i) {
        if (infos[i].seen != infos[i].count) {
            throw TruncatedError("recording: stream " + std::to_string(i) + " has " +
                                     std::to_string(infos[i].seen) + " of " +
                                     std::to_string(infos[i].count) + " records",
                                 reader.offset());
        }
    }
    return rec;
}

inline Recording read_recording_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("recording: cannot read '" + path + "'");
    return read_recording(in);
}

// --- Motion file ---------------------------------------------------------------

inline void write_motion(const MotionSequence& motion, std::ostream& out) {
    std::size_t joints = motion.frames.empty() ? 0 : motion.frames[0].joint_rotations.size() + 1;
    std::ostringstream header;
    header.precision(17);
    header << "roshi-motion v1\n";
    header << "skeleton " << motion.skeleton_name << "\n";
    header << "rate_hz " << motion.rate_hz << "\n";
    header << "joints " << joints << "\n";
    header << "frames " << motion.frames.size() << "\n";
    header << "end_header\n";
    out << header.str();
    for (const PoseFrame& f : motion.frames) {
        if (f.joint_rotations.size() + 1 != joints) {
            throw SchemaError("motion: inconsistent joint count across frames");
        }
        std::string payload;
        payload.reserve(8 + 32 + 24 + 32 * f.joint_rotations.size());
        detail::put_i64buf(payload, f.timestamp_ms);
        detail::put_quat(payload, f.root_orientation);
        detail::put_f64(payload, f.root_position.x());
        detail::put_f64(payload, f.root_position.y());
        detail::put_f64(payload, f.root_position.z());
        for (const Rotation& r : f.joint_rotations) detail::put_quat(payload, r);
        detail::append_record(out, payload);
    }
}

inline void write_motion_file(const MotionSequence& motion, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("motion: cannot write '" + path + "'");
    write_motion(motion, out);
}

inline MotionSequence read_motion(std::istream& in) {
    std::string line;
    std::size_t header_bytes = 0;
    auto next_line = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        header_bytes += line.size() + 1;
        return true;
    };
    if (!next_line()) throw SchemaError("motion: empty file");
    if (line.rfind("roshi-motion ", 0) != 0) throw SchemaError("motion: bad header line");
    if (line != "roshi-motion v1") throw VersionError("motion: unsupported version '" + line + "'");

    MotionSequence motion;
    std::size_t joints = 0, frames = 0;
    bool header_done = false;
    while (next_line()) {
        if (line.empty() || line[0] == '#') continue;
        if (line == "end_header") {
            header_done = true;
            break;
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "skeleton") {
            ls >> motion.skeleton_name;
        } else if (key == "rate_hz") {
            ls >> motion.rate_hz;
        } else if (key == "joints") {
            ls >> joints;
        } else if (key == "frames") {
            ls >> frames;
        } else {
            throw SchemaError("motion: unknown header key '" + key + "'");
        }
    }
    if (!header_done) throw SchemaError("motion: missing end_header");
    if (joints == 0) throw SchemaError("motion: zero joints");

    detail::RecordReader reader(in, header_bytes);
    motion.frames.reserve(frames);
    while (auto payload = reader.next()) {
        detail::PayloadView view(*payload, reader.offset());
        PoseFrame f;
        f.timestamp_ms = view.i64();
        f.root_orientation = view.rotation();
        f.root_position = view.vec3();
        f.joint_rotations.reserve(joints - 1);
        for (std::size_t j = 0; j + 1 < joints; ++j) f.joint_rotations.push_back(view.rotation());
        view.expect_done();
        motion.frames.push_back(std::move(f));
    }
    if (motion.frames.size() != frames) {
        throw TruncatedError("motion: expected " + std::to_string(frames) + " frames, read " +
                                 std::to_string(motion.frames.size()),
                             reader.offset());
    }
    return motion;
}

inline MotionSequence read_motion_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("motion: cannot read '" + path + "'");
    return read_motion(in);
}

}  // namespace roshi
