#include "uwb/phy/frame.hpp"

#include <boost/crc.hpp>

#include <string>

namespace uwb::phy {

namespace {

using Kermit = boost::crc_optimal<16, 0x1021, 0x0000, 0x0000, true, true>;

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

std::uint16_t get16(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

} // namespace

std::uint16_t crc16_kermit(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    Kermit crc;
    crc.process_bytes(a.data(), a.size());
    if (!b.empty()) crc.process_bytes(b.data(), b.size());
    return static_cast<std::uint16_t>(crc.checksum());
}

std::vector<std::uint8_t> Frame::encode() const {
    if (payload.size() > kMaxMacPayload) {
        throw FrameError("payload of " + std::to_string(payload.size()) +
                         " bytes exceeds the 116-byte MAC payload");
    }
    std::vector<std::uint8_t> out;
    out.reserve(size());
    const auto fc = static_cast<std::uint16_t>(
        (static_cast<unsigned>(header.type) & 0x0F) |
        ((static_cast<unsigned>(header.adaptation) & 0x03) << 4) | (header.has_sts ? 0x40 : 0));
    put16(out, fc);
    out.push_back(header.sequence);
    put16(out, header.pan_id);
    put16(out, header.dst);
    put16(out, header.src);
    const auto crc = crc16_kermit(out, payload);
    put16(out, crc);
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

Frame Frame::decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kMacHeaderBytes) throw FrameError("frame shorter than MAC header");
    if (bytes.size() > kMaxFrameBytes) throw FrameError("frame longer than 127 bytes");
    const auto payload = bytes.subspan(kMacHeaderBytes);
    const auto stored = get16(bytes, 9);
    if (crc16_kermit(bytes.first(9), payload) != stored) throw FrameError("checksum mismatch");

    Frame f;
    const auto fc = get16(bytes, 0);
    const unsigned type = fc & 0x0F;
    if (type > static_cast<unsigned>(FrameType::relayed_beacon)) {
        throw FrameError("unknown frame type " + std::to_string(type));
    }
    const unsigned adaptation = (fc >> 4) & 0x03;
    if (adaptation > static_cast<unsigned>(AdaptationKind::fragn)) {
        throw FrameError("unknown adaptation kind");
    }
    f.header.type = static_cast<FrameType>(type);
    f.header.adaptation = static_cast<AdaptationKind>(adaptation);
    f.header.has_sts = (fc & 0x40) != 0;
    f.header.sequence = bytes[2];
    f.header.pan_id = get16(bytes, 3);
    f.header.dst = get16(bytes, 5);
    f.header.src = get16(bytes, 7);
    f.payload.assign(payload.begin(), payload.end());
    return f;
}

} // namespace uwb::phy
