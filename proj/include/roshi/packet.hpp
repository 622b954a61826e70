#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>

#include "roshi/errors.hpp"
#include "roshi/so3.hpp"

namespace roshi {

/// One tracker radio frame. Fixed 24-byte little-endian layout:
///   magic 0xA7 0x51 | id (1B) | battery (1B) | seq (2B) | timestamp ms (8B)
///   | quat w,x,y,z as Q15 (8B) | CRC-16/CCITT over bytes 0-21 (2B)
struct TrackerPacket {
    std::uint8_t tracker_id = 0;  // 0-15
    std::uint8_t battery = 0;     // 0-100
    std::uint16_t sequence = 0;   // wraps
    std::int64_t timestamp_ms = 0;
    Rotation orientation;
};

inline constexpr std::size_t kPacketSize = 24;
inline constexpr std::uint8_t kPacketMagic0 = 0xA7;
inline constexpr std::uint8_t kPacketMagic1 = 0x51;

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, xorout 0.
inline std::uint16_t crc16_ccitt(std::span<const std::uint8_t> data) {
    std::uint16_t crc = 0xFFFF;
    for (std::uint8_t byte : data) {
        crc ^= static_cast<std::uint16_t>(byte) << 8;
        for (int bit = 0; bit < 8; ++bit) {
            crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                                 : static_cast<std::uint16_t>(crc << 1);
        }
    }
    return crc;
}

namespace detail {

inline void put_u16(std::uint8_t* p, std::uint16_t v) {
    p[0] = static_cast<std::uint8_t>(v & 0xFF);
    p[1] = static_cast<std::uint8_t>(v >> 8);
}

inline std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_i64(std::uint8_t* p, std::int64_t v) {
    auto u = static_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>((u >> (8 * i)) & 0xFF);
}

inline std::int64_t get_i64(const std::uint8_t* p) {
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return static_cast<std::int64_t>(u);
}

inline std::int16_t to_q15(double v) {
    const double scaled = std::round(v * 32767.0);
    if (scaled > 32767.0) return 32767;
    if (scaled < -32768.0) return -32768;
    return static_cast<std::int16_t>(scaled);
}

inline double from_q15(std::int16_t v) { return static_cast<double>(v) / 32767.0; }

}  // namespace detail

inline std::array<std::uint8_t, kPacketSize> encode_packet(const TrackerPacket& p) {
    if (p.tracker_id > 15) throw std::invalid_argument("encode_packet: tracker id > 15");
    if (p.battery > 100) throw std::invalid_argument("encode_packet: battery > 100");
    std::array<std::uint8_t, kPacketSize> out{};
    out[0] = kPacketMagic0;
    out[1] = kPacketMagic1;
    out[2] = p.tracker_id;
    out[3] = p.battery;
    detail::put_u16(&out[4], p.sequence);
    detail::put_i64(&out[6], p.timestamp_ms);
    const Eigen::Quaterniond& q = p.orientation.quaternion();
    detail::put_u16(&out[14], static_cast<std::uint16_t>(detail::to_q15(q.w())));
    detail::put_u16(&out[16], static_cast<std::uint16_t>(detail::to_q15(q.x())));
    detail::put_u16(&out[18], static_cast<std::uint16_t>(detail::to_q15(q.y())));
    detail::put_u16(&out[20], static_cast<std::uint16_t>(detail::to_q15(q.z())));
    detail::put_u16(&out[22], crc16_ccitt(std::span(out.data(), 22)));
    return out;
}

enum class DecodeStatus { ok, short_buffer, bad_magic, bad_checksum, bad_payload };

/// Non-throwing decode; safe on arbitrary byte strings.
inline DecodeStatus try_decode_packet(std::span<const std::uint8_t> bytes,
                                      TrackerPacket& out) noexcept {
    if (bytes.size() < kPacketSize) return DecodeStatus::short_buffer;
    if (bytes[0] != kPacketMagic0 || bytes[1] != kPacketMagic1) return DecodeStatus::bad_magic;
    if (detail::get_u16(&bytes[22]) != crc16_ccitt(bytes.subspan(0, 22))) {
        return DecodeStatus::bad_checksum;
    }
    if (bytes[2] > 15 || bytes[3] > 100) return DecodeStatus::bad_payload;
    const double w = detail::from_q15(static_cast<std::int16_t>(detail::get_u16(&bytes[14])));
    const double x = detail::from_q15(static_cast<std::int16_t>(detail::get_u16(&bytes[16])));
    const double y = detail::from_q15(static_cast<std::int16_t>(detail::get_u16(&bytes[18])));
    const double z = detail::from_q15(static_cast<std::int16_t>(detail::get_u16(&bytes[20])));
    // Q15 quantization keeps valid payloads within 2% of unit norm.
    const double norm = std::sqrt(w * w + x * x + y * y + z * z);
    if (std::abs(norm - 1.0) > 0.02) return DecodeStatus::bad_payload;
    out.tracker_id = bytes[2];
    out.battery = bytes[3];
    out.sequence = detail::get_u16(&bytes[4]);
    out.timestamp_ms = detail::get_i64(&bytes[6]);
    out.orientation = Rotation::from_quaternion(w, x, y, z);
    return DecodeStatus::ok;
}

inline TrackerPacket decode_packet(std::span<const std::uint8_t> bytes) {
    TrackerPacket p;
    switch (try_decode_packet(bytes, p)) {
        case DecodeStatus::ok:
            return p;
        case DecodeStatus::short_buffer:
            throw ShortBufferError("decode_packet: need 24 bytes, got " +
                                   std::to_string(bytes.size()));
        case DecodeStatus::bad_magic:
            throw BadMagicError("decode_packet: bad magic");
        case DecodeStatus::bad_checksum:
            throw BadChecksumError("decode_packet: CRC mismatch");
        case DecodeStatus::bad_payload:
            throw SchemaError("decode_packet: payload violates field invariants");
    }
    throw DataError("decode_packet: unreachable");
}

}  // namespace roshi
