#pragma once

#include "uwb/engine/sim_time.hpp"
#include "uwb/phy/frame.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uwb::adaptation {

class AdaptationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Address = std::array<std::uint8_t, 16>;

inline constexpr std::size_t kIpv6HeaderBytes = 40;

struct Ipv6Header {
    std::uint8_t version = 6;
    std::uint8_t traffic_class = 0;
    std::uint32_t flow_label = 0;  // 20 bits
    std::uint16_t payload_length = 0;
    std::uint8_t next_header = 0;
    std::uint8_t hop_limit = 0;
    Address src{};
    Address dst{};

    friend bool operator==(const Ipv6Header&, const Ipv6Header&) = default;
};

std::array<std::uint8_t, kIpv6HeaderBytes> serialize(const Ipv6Header& h);
/// Throws AdaptationError for short input or a version other than 6.
Ipv6Header parse_ipv6(std::span<const std::uint8_t> bytes);

/// fe80::ff:fe00:XXXX, the address a node derives from its short MAC.
Address link_local_from_mac(NodeId mac);
/// fd75:7762::ff:fe00:XXXX in the mesh-local /64.
Address mesh_local_from_mac(NodeId mac);

/// Addresses of the frame (or mesh header) carrying the datagram; derived
/// IPv6 addresses are rebuilt from these.
struct LinkAddresses {
    NodeId src = 0;
    NodeId dst = 0;
};

inline constexpr std::uint8_t kDispatch = 0x7A;
inline constexpr std::size_t kMinCompressedBytes = 3;
inline constexpr std::size_t kMaxCompressedBytes = 41;

/// Compressed IPv6 header.
///
///   dispatch 0x7A | enc1 | enc2 | inline fields
///
/// enc1: bit 7 TC elided (TC = 0), bit 6 FL elided (FL = 0), bit 5 NH
/// compressed, bits 4-3 hop limit (0 inline, 1 -> 1, 2 -> 64, 3 -> 255),
/// bit 2 src derived from link src, bit 1 dst derived from link dst.
/// enc2: bits 7-6 NH index (0 UDP, 1 TCP, 2 ICMPv6), bits 5-4 src mode,
/// bits 3-2 dst mode. Address modes for non-derived addresses:
/// 0 full 128 bits, 1 mesh-local short (2 bytes), 2 link-local 64-bit
/// IID (8 bytes), 3 link-local short (2 bytes).
/// Inline fields follow in the order TC (1), FL (3, big endian), NH (1),
/// HL (1), src, dst.
struct CompressedHeader {
    std::vector<std::uint8_t> bytes;
    [[nodiscard]] std::size_t size() const { return bytes.size(); }
};

/// Throws AdaptationError for a version other than 6 or a flow label
/// wider than 20 bits.
CompressedHeader compress(const Ipv6Header& header, const LinkAddresses& link);

struct Decompressed {
    Ipv6Header header;
    std::size_t consumed = 0;
};

/// `payload_length` is not carried on the wire and is supplied by the
/// caller from the frame or datagram size. Throws AdaptationError for an
/// unknown dispatch, reserved bits or truncated inline fields.
Decompressed decompress(std::span<const std::uint8_t> bytes, const LinkAddresses& link,
                        std::uint16_t payload_length);

inline constexpr std::size_t kFrag1HeaderBytes = 4;
inline constexpr std::size_t kFragnHeaderBytes = 5;

struct FragmentHeader {
    phy::AdaptationKind kind = phy::AdaptationKind::frag1;
    std::uint16_t datagram_size = 0;
    std::uint16_t datagram_tag = 0;
    std::uint8_t offset = 0;  // 8-byte units, FRAGN only
};

/// One adaptation unit, sized for a MAC payload. `bytes` includes the
/// fragment header; the kind travels in the MAC frame control field.
struct Fragment {
    phy::AdaptationKind kind = phy::AdaptationKind::whole;
    std::vector<std::uint8_t> bytes;
};

/// Payload capacity of FRAG1 / FRAGN units for a given MAC payload budget
/// (112 and 104 for the full 116 bytes).
std::size_t frag1_capacity(std::size_t max_payload = phy::kMaxMacPayload);
std::size_t fragn_capacity(std::size_t max_payload = phy::kMaxMacPayload);

/// Splits `datagram` into units of at most `max_payload` bytes. A datagram
/// no larger than the FRAG1 capacity is returned as one `whole` unit
/// without a fragment header.
/// Throws AdaptationError for an empty datagram or one whose last offset
/// does not fit the 8-bit offset field.
std::vector<Fragment> fragment(std::span<const std::uint8_t> datagram, std::uint16_t tag,
                               std::size_t max_payload = phy::kMaxMacPayload);

struct ParsedFragment {
    FragmentHeader header;
    std::span<const std::uint8_t> payload;
};
ParsedFragment parse_fragment(phy::AdaptationKind kind, std::span<const std::uint8_t> bytes);

/// Encodes an IPv6 datagram for transmission: header compression first;
/// if the compressed datagram fits one unit it is sent whole, otherwise
/// FRAG1 carries the compressed header plus as much payload as keeps the
/// uncompressed coverage a multiple of 8 and FRAGNs carry the rest at
/// uncompressed offsets.
std::vector<Fragment> encode_datagram(const Ipv6Header& header,
                                      std::span<const std::uint8_t> payload,
                                      const LinkAddresses& link, std::uint16_t tag,
                                      std::size_t max_payload = phy::kMaxMacPayload);

inline constexpr Picoseconds kDefaultReassemblyTimeout = kSuperframe * 20;

struct ReassemblyKey {
    NodeId src = 0;
    std::uint16_t tag = 0;
    std::uint16_t size = 0;
    auto operator<=>(const ReassemblyKey&) const = default;
};

/// Receiver-side reassembly buffers keyed by (source, tag, size).
class Reassembler {
public:
    enum class Status { delivered, pending, duplicate, discarded };

    struct Outcome {
        Status status = Status::pending;
        /// The uncompressed datagram when delivered.
        std::vector<std::uint8_t> datagram;
        std::string reason;
    };

    explicit Reassembler(Picoseconds timeout = kDefaultReassemblyTimeout) : timeout_(timeout) {}

    /// Feeds one adaptation unit. Units starting with the 0x7A dispatch carry
    /// a compressed header; anything else is taken as an uncompressed
    /// datagram (whose first byte holds IP version 6, so never 0x7A).
    /// Whole units are delivered at once. A
    /// fragment overlapping earlier data with different bytes discards the
    /// buffer; an exact repeat is reported as a duplicate.
    Outcome add(const LinkAddresses& link, phy::AdaptationKind kind,
                std::span<const std::uint8_t> bytes, SimTime now);

    /// Drops buffers older than the timeout and returns their keys.
    std::vector<ReassemblyKey> expire(SimTime now);

    [[nodiscard]] std::size_t pending() const { return buffers_.size(); }

private:
    struct Buffer {
        SimTime started{};
        std::vector<std::uint8_t> data;
        std::vector<bool> covered;
        std::size_t covered_count = 0;
    };

    Picoseconds timeout_;
    std::map<ReassemblyKey, Buffer> buffers_;
};

} // namespace uwb::adaptation
