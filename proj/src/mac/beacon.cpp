#include "uwb/mac/beacon.hpp"

#include "uwb/phy/bytes.hpp"

#include <algorithm>

namespace uwb::mac {

using phy::ByteReader;
using phy::ByteWriter;

std::vector<std::uint8_t> encode(const Beacon& beacon, std::size_t budget) {
    const std::size_t roster_bytes = 4 * beacon.roster.size();
    if (kBeaconFixedBytes + roster_bytes > budget || beacon.roster.size() > 255) {
        throw phy::FrameError("beacon roster does not fit in one frame");
    }
    auto neighbors = beacon.neighbors;
    std::stable_sort(neighbors.begin(), neighbors.end(),
                     [](const NeighborDigest& a, const NeighborDigest& b) {
                         return a.quality > b.quality;
                     });
    const std::size_t room = (budget - kBeaconFixedBytes - roster_bytes) / 3;
    if (neighbors.size() > room) neighbors.resize(room);

    std::vector<std::uint8_t> out;
    out.reserve(kBeaconFixedBytes + roster_bytes + 3 * neighbors.size());
    ByteWriter w(out);
    w.u16(beacon.leader);
    w.u32(beacon.sequence);
    w.u64(static_cast<std::uint64_t>(ticks(beacon.timestamp)));
    w.f32(beacon.position.x);
    w.f32(beacon.position.y);
    w.f32(beacon.position.z);
    w.u8(beacon.zone);
    w.u8(beacon.hops);
    w.u8(static_cast<std::uint8_t>(beacon.roster.size()));
    for (const auto& r : beacon.roster) {
        w.u16(r.id);
        const auto uptime = std::min<std::uint16_t>(r.uptime_s, 0x7FFF);
        w.u16(static_cast<std::uint16_t>(uptime | (r.eligible ? 0x8000 : 0)));
    }
    w.u8(static_cast<std::uint8_t>(neighbors.size()));
    for (const auto& n : neighbors) {
        w.u16(n.id);
        w.u8(n.quality);
    }
    return out;
}

Beacon decode_beacon(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    Beacon b;
    b.leader = r.u16();
    b.sequence = r.u32();
    b.timestamp = at_ps(static_cast<std::int64_t>(r.u64()));
    b.position.x = r.f32();
    b.position.y = r.f32();
    b.position.z = r.f32();
    b.zone = r.u8();
    b.hops = r.u8();
    const auto roster = r.u8();
    for (unsigned i = 0; i < roster; ++i) {
        RosterEntry e;
        e.id = r.u16();
        const auto word = r.u16();
        e.eligible = (word & 0x8000) != 0;
        e.uptime_s = word & 0x7FFF;
        b.roster.push_back(e);
    }
    const auto count = r.u8();
    for (unsigned i = 0; i < count; ++i) {
        NeighborDigest n;
        n.id = r.u16();
        n.quality = r.u8();
        b.neighbors.push_back(n);
    }
    return b;
}

} // namespace uwb::mac
