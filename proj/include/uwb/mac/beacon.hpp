#pragma once

#include "uwb/engine/radio_medium.hpp"
#include "uwb/phy/frame.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace uwb::mac {

struct NeighborDigest {
    NodeId id = 0;
    std::uint8_t quality = 0;  // 0..255 maps to link quality 0..1
    friend bool operator==(const NeighborDigest&, const NeighborDigest&) = default;
};

/// Zone member as announced by its leader. `eligible` marks FullNodes that
/// may be promoted; `uptime_s` saturates at 32767.
struct RosterEntry {
    NodeId id = 0;
    bool eligible = false;
    std::uint16_t uptime_s = 0;
    friend bool operator==(const RosterEntry&, const RosterEntry&) = default;
};

/// Leader beacon, also reused for forwarder-relayed beacons (hops > 0) and
/// backbone timing frames.
///
/// Wire layout (little endian):
///   leader 2 | sequence 4 | timestamp_ps 8 | x,y,z float32 12 | zone 1 |
///   hops 1 | roster count 1 | roster 4*n | neighbor count 1 | neighbors 3*m
struct Beacon {
    NodeId leader = 0;
    std::uint32_t sequence = 0;
    SimTime timestamp{};
    Position position{};
    std::uint8_t zone = 0;
    std::uint8_t hops = 0;
    std::vector<RosterEntry> roster;
    std::vector<NeighborDigest> neighbors;

    friend bool operator==(const Beacon&, const Beacon&) = default;
};

inline constexpr std::size_t kBeaconFixedBytes = 30;

/// Serializes into at most `budget` bytes. The roster is kept whole (throws
/// phy::FrameError if it alone does not fit); the neighbor list is cut to
/// fit, highest-quality links first.
std::vector<std::uint8_t> encode(const Beacon& beacon, std::size_t budget = phy::kMaxMacPayload);
Beacon decode_beacon(std::span<const std::uint8_t> bytes);

} // namespace uwb::mac
