#pragma once

#include "uwb/engine/radio_medium.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace uwb::phy {

inline constexpr std::size_t kMacHeaderBytes = 11;
inline constexpr std::size_t kMaxMacPayload = kMaxFrameBytes - kMacHeaderBytes;  // 116

class FrameError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class FrameType : std::uint8_t {
    beacon = 0,
    data = 1,
    ranging_poll = 2,
    ranging_response = 3,
    ranging_final = 4,
    link_state = 5,
    relayed_beacon = 6,
};

/// How the MAC payload of a data frame is framed by the adaptation layer.
enum class AdaptationKind : std::uint8_t { whole = 0, frag1 = 1, fragn = 2 };

/// Short-address MAC header, 11 bytes on the wire:
///
///   frame control (2, LE) | sequence (1) | pan id (2) | dst (2) | src (2) | checksum (2)
///
/// Frame control bits 0-3 carry the type, 4-5 the adaptation kind and bit 6
/// the STS flag. The checksum is CRC-16/KERMIT over the first nine header
/// bytes followed by the payload.
struct MacHeader {
    FrameType type = FrameType::data;
    AdaptationKind adaptation = AdaptationKind::whole;
    bool has_sts = false;
    std::uint8_t sequence = 0;
    std::uint16_t pan_id = 0;
    NodeId dst = kBroadcast;
    NodeId src = 0;
};

struct Frame {
    MacHeader header;
    std::vector<std::uint8_t> payload;

    [[nodiscard]] std::size_t size() const { return kMacHeaderBytes + payload.size(); }

    /// Throws FrameError when the payload exceeds 116 bytes.
    [[nodiscard]] std::vector<std::uint8_t> encode() const;
    /// Throws FrameError on short input, oversize input or checksum mismatch.
    static Frame decode(std::span<const std::uint8_t> bytes);
};

std::uint16_t crc16_kermit(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b = {});

} // namespace uwb::phy
