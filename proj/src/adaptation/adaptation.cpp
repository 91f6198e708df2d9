#include "uwb/adaptation/adaptation.hpp"

#include "uwb/phy/bytes.hpp"

#include <algorithm>
#include <cstring>

namespace uwb::adaptation {

namespace {

constexpr std::array<std::uint8_t, 8> kLinkLocalPrefix{0xFE, 0x80, 0, 0, 0, 0, 0, 0};
constexpr std::array<std::uint8_t, 8> kMeshLocalPrefix{0xFD, 0x75, 0x77, 0x62, 0, 0, 0, 0};
constexpr std::array<std::uint8_t, 6> kShortIidStem{0x00, 0x00, 0x00, 0xFF, 0xFE, 0x00};

enum AddressMode : std::uint8_t { full = 0, mesh_short = 1, link_iid = 2, link_short = 3 };

constexpr std::array<std::uint8_t, 3> kCompressibleNh{17, 6, 58};

Address with_prefix(const std::array<std::uint8_t, 8>& prefix, NodeId mac) {
    Address a{};
    std::copy(prefix.begin(), prefix.end(), a.begin());
    std::copy(kShortIidStem.begin(), kShortIidStem.end(), a.begin() + 8);
    a[14] = static_cast<std::uint8_t>(mac >> 8);
    a[15] = static_cast<std::uint8_t>(mac);
    return a;
}

bool has_prefix(const Address& a, const std::array<std::uint8_t, 8>& prefix) {
    return std::equal(prefix.begin(), prefix.end(), a.begin());
}

bool has_short_iid(const Address& a) {
    return std::equal(kShortIidStem.begin(), kShortIidStem.end(), a.begin() + 8);
}

AddressMode mode_of(const Address& a) {
    if (has_prefix(a, kLinkLocalPrefix)) return has_short_iid(a) ? link_short : link_iid;
    if (has_prefix(a, kMeshLocalPrefix) && has_short_iid(a)) return mesh_short;
    return full;
}

void put_address(std::vector<std::uint8_t>& out, const Address& a, AddressMode mode) {
    switch (mode) {
    case full: out.insert(out.end(), a.begin(), a.end()); break;
    case link_iid: out.insert(out.end(), a.begin() + 8, a.end()); break;
    case mesh_short:
    case link_short: out.insert(out.end(), a.begin() + 14, a.end()); break;
    }
}

class Cursor {
public:
    explicit Cursor(std::span<const std::uint8_t> in) : in_(in) {}
    std::span<const std::uint8_t> take(std::size_t n) {
        if (pos_ + n > in_.size()) throw AdaptationError("truncated compressed header");
        auto out = in_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    std::uint8_t byte() { return take(1)[0]; }
    [[nodiscard]] std::size_t position() const { return pos_; }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

Address read_address(Cursor& c, AddressMode mode) {
    Address a{};
    switch (mode) {
    case full: {
        auto b = c.take(16);
        std::copy(b.begin(), b.end(), a.begin());
        break;
    }
    case link_iid: {
        std::copy(kLinkLocalPrefix.begin(), kLinkLocalPrefix.end(), a.begin());
        auto b = c.take(8);
        std::copy(b.begin(), b.end(), a.begin() + 8);
        break;
    }
    case mesh_short:
    case link_short: {
        auto b = c.take(2);
        a = with_prefix(mode == mesh_short ? kMeshLocalPrefix : kLinkLocalPrefix,
                        static_cast<NodeId>((b[0] << 8) | b[1]));
        break;
    }
    }
    return a;
}

} // namespace

std::array<std::uint8_t, kIpv6HeaderBytes> serialize(const Ipv6Header& h) {
    std::array<std::uint8_t, kIpv6HeaderBytes> out{};
    const std::uint32_t word = (static_cast<std::uint32_t>(h.version & 0x0F) << 28) |
                               (static_cast<std::uint32_t>(h.traffic_class) << 20) |
                               (h.flow_label & 0xFFFFF);
    out[0] = static_cast<std::uint8_t>(word >> 24);
    out[1] = static_cast<std::uint8_t>(word >> 16);
    out[2] = static_cast<std::uint8_t>(word >> 8);
    out[3] = static_cast<std::uint8_t>(word);
    out[4] = static_cast<std::uint8_t>(h.payload_length >> 8);
    out[5] = static_cast<std::uint8_t>(h.payload_length);
    out[6] = h.next_header;
    out[7] = h.hop_limit;
    std::copy(h.src.begin(), h.src.end(), out.begin() + 8);
    std::copy(h.dst.begin(), h.dst.end(), out.begin() + 24);
    return out;
}

Ipv6Header parse_ipv6(std::span<const std::uint8_t> b) {
    if (b.size() < kIpv6HeaderBytes) throw AdaptationError("IPv6 header shorter than 40 bytes");
    const std::uint32_t word = (static_cast<std::uint32_t>(b[0]) << 24) |
                               (static_cast<std::uint32_t>(b[1]) << 16) |
                               (static_cast<std::uint32_t>(b[2]) << 8) | b[3];
    Ipv6Header h;
    h.version = static_cast<std::uint8_t>(word >> 28);
    if (h.version != 6) throw AdaptationError("IP version is not 6");
    h.traffic_class = static_cast<std::uint8_t>(word >> 20);
    h.flow_label = word & 0xFFFFF;
    h.payload_length = static_cast<std::uint16_t>((b[4] << 8) | b[5]);
    h.next_header = b[6];
    h.hop_limit = b[7];
    std::copy(b.begin() + 8, b.begin() + 24, h.src.begin());
    std::copy(b.begin() + 24, b.begin() + 40, h.dst.begin());
    return h;
}

Address link_local_from_mac(NodeId mac) { return with_prefix(kLinkLocalPrefix, mac); }

Address mesh_local_from_mac(NodeId mac) { return with_prefix(kMeshLocalPrefix, mac); }

CompressedHeader compress(const Ipv6Header& h, const LinkAddresses& link) {
    if (h.version != 6) throw AdaptationError("IP version is not 6");
    if (h.flow_label > 0xFFFFF) throw AdaptationError("flow label wider than 20 bits");
    std::uint8_t enc1 = 0;
    std::uint8_t enc2 = 0;
    std::vector<std::uint8_t> inl;

    if (h.traffic_class == 0) enc1 |= 0x80;
    else inl.push_back(h.traffic_class);

    if (h.flow_label == 0) {
        enc1 |= 0x40;
    } else {
        inl.push_back(static_cast<std::uint8_t>(h.flow_label >> 16));
        inl.push_back(static_cast<std::uint8_t>(h.flow_label >> 8));
        inl.push_back(static_cast<std::uint8_t>(h.flow_label));
    }

    const auto nh = std::find(kCompressibleNh.begin(), kCompressibleNh.end(), h.next_header);
    if (nh != kCompressibleNh.end()) {
        enc1 |= 0x20;
        enc2 |= static_cast<std::uint8_t>((nh - kCompressibleNh.begin()) << 6);
    } else {
        inl.push_back(h.next_header);
    }

    switch (h.hop_limit) {
    case 1: enc1 |= 1 << 3; break;
    case 64: enc1 |= 2 << 3; break;
    case 255: enc1 |= 3 << 3; break;
    default: inl.push_back(h.hop_limit); break;
    }

    if (h.src == link_local_from_mac(link.src)) {
        enc1 |= 0x04;
    } else {
        const auto m = mode_of(h.src);
        enc2 |= static_cast<std::uint8_t>(m << 4);
        put_address(inl, h.src, m);
    }
    if (h.dst == link_local_from_mac(link.dst)) {
        enc1 |= 0x02;
    } else {
        const auto m = mode_of(h.dst);
        enc2 |= static_cast<std::uint8_t>(m << 2);
        put_address(inl, h.dst, m);
    }

    CompressedHeader out;
    out.bytes.reserve(3 + inl.size());
    out.bytes.push_back(kDispatch);
    out.bytes.push_back(enc1);
    out.bytes.push_back(enc2);
    out.bytes.insert(out.bytes.end(), inl.begin(), inl.end());
    return out;
}

Decompressed decompress(std::span<const std::uint8_t> bytes, const LinkAddresses& link,
                        std::uint16_t payload_length) {
    if (bytes.empty()) throw AdaptationError("truncated compressed header");
    if (bytes[0] != kDispatch) throw AdaptationError("unknown dispatch byte");
    Cursor c(bytes);
    c.take(1);
    const std::uint8_t enc1 = c.byte();
    const std::uint8_t enc2 = c.byte();
    if ((enc1 & 0x01) != 0 || (enc2 & 0x03) != 0) {
        throw AdaptationError("reserved encoding bits set");
    }

    Ipv6Header h;
    h.payload_length = payload_length;
    if ((enc1 & 0x80) == 0) h.traffic_class = c.byte();
    if ((enc1 & 0x40) == 0) {
        const auto fl = c.take(3);
        h.flow_label = (static_cast<std::uint32_t>(fl[0] & 0x0F) << 16) |
                       (static_cast<std::uint32_t>(fl[1]) << 8) | fl[2];
        if ((fl[0] & 0xF0) != 0) throw AdaptationError("flow label wider than 20 bits");
    }
    if ((enc1 & 0x20) != 0) {
        const unsigned idx = enc2 >> 6;
        if (idx >= kCompressibleNh.size()) throw AdaptationError("unknown next-header index");
        h.next_header = kCompressibleNh[idx];
    } else {
        h.next_header = c.byte();
    }
    switch ((enc1 >> 3) & 0x03) {
    case 0: h.hop_limit = c.byte(); break;
    case 1: h.hop_limit = 1; break;
    case 2: h.hop_limit = 64; break;
    default: h.hop_limit = 255; break;
    }
    h.src = (enc1 & 0x04) != 0 ? link_local_from_mac(link.src)
                               : read_address(c, static_cast<AddressMode>((enc2 >> 4) & 0x03));
    h.dst = (enc1 & 0x02) != 0 ? link_local_from_mac(link.dst)
                               : read_address(c, static_cast<AddressMode>((enc2 >> 2) & 0x03));
    return {h, c.position()};
}

std::size_t frag1_capacity(std::size_t max_payload) {
    return max_payload < kFrag1HeaderBytes ? 0 : (max_payload - kFrag1HeaderBytes) / 8 * 8;
}

std::size_t fragn_capacity(std::size_t max_payload) {
    return max_payload < kFragnHeaderBytes ? 0 : (max_payload - kFragnHeaderBytes) / 8 * 8;
}

namespace {

void frag1_header(std::vector<std::uint8_t>& out, std::size_t size, std::uint16_t tag) {
    phy::ByteWriter w(out);
    w.u16(static_cast<std::uint16_t>(size));
    w.u16(tag);
}

// Appends FRAGN units covering [offset, size) of the uncompressed datagram,
// reading bytes through `at`.
template <typename ByteAt>
void append_fragn(std::vector<Fragment>& out, std::size_t offset, std::size_t size,
                  std::uint16_t tag, std::size_t max_payload, ByteAt at) {
    const std::size_t cap = fragn_capacity(max_payload);
    while (offset < size) {
        if (offset / 8 > 0xFF) {
            throw AdaptationError("datagram of " + std::to_string(size) +
                                  " bytes exceeds the 8-bit fragment offset range");
        }
        const std::size_t len = std::min(cap, size - offset);
        Fragment f;
        f.kind = phy::AdaptationKind::fragn;
        f.bytes.reserve(kFragnHeaderBytes + len);
        phy::ByteWriter w(f.bytes);
        w.u16(static_cast<std::uint16_t>(size));
        w.u16(tag);
        w.u8(static_cast<std::uint8_t>(offset / 8));
        for (std::size_t i = 0; i < len; ++i) f.bytes.push_back(at(offset + i));
        out.push_back(std::move(f));
        offset += len;
    }
}

void check_budget(std::size_t max_payload, std::size_t size) {
    if (size > 0xFFFF) throw AdaptationError("datagram larger than 65535 bytes");
    if (frag1_capacity(max_payload) < 8 || fragn_capacity(max_payload) < 8) {
        throw AdaptationError("MAC payload budget too small to fragment");
    }
}

} // namespace

std::vector<Fragment> fragment(std::span<const std::uint8_t> datagram, std::uint16_t tag,
                               std::size_t max_payload) {
    if (datagram.empty()) throw AdaptationError("empty datagram");
    std::vector<Fragment> out;
    if (datagram.size() <= frag1_capacity(max_payload)) {
        out.push_back(Fragment{phy::AdaptationKind::whole, {datagram.begin(), datagram.end()}});
        return out;
    }
    check_budget(max_payload, datagram.size());
    const std::size_t first = frag1_capacity(max_payload);
    Fragment f1;
    f1.kind = phy::AdaptationKind::frag1;
    frag1_header(f1.bytes, datagram.size(), tag);
    f1.bytes.insert(f1.bytes.end(), datagram.begin(), datagram.begin() + static_cast<long>(first));
    out.push_back(std::move(f1));
    append_fragn(out, first, datagram.size(), tag, max_payload,
                 [&](std::size_t i) { return datagram[i]; });
    return out;
}

ParsedFragment parse_fragment(phy::AdaptationKind kind, std::span<const std::uint8_t> bytes) {
    ParsedFragment p;
    p.header.kind = kind;
    phy::ByteReader r(bytes);
    try {
        switch (kind) {
        case phy::AdaptationKind::whole: throw AdaptationError("not a fragment");
        case phy::AdaptationKind::frag1:
            p.header.datagram_size = r.u16();
            p.header.datagram_tag = r.u16();
            break;
        case phy::AdaptationKind::fragn:
            p.header.datagram_size = r.u16();
            p.header.datagram_tag = r.u16();
            p.header.offset = r.u8();
            break;
        }
    } catch (const phy::FrameError&) {
        throw AdaptationError("truncated fragment header");
    }
    p.payload = r.rest();
    return p;
}

std::vector<Fragment> encode_datagram(const Ipv6Header& header,
                                      std::span<const std::uint8_t> payload,
                                      const LinkAddresses& link, std::uint16_t tag,
                                      std::size_t max_payload) {
    Ipv6Header h = header;
    if (payload.size() > 0xFFFF - kIpv6HeaderBytes) {
        throw AdaptationError("datagram larger than 65535 bytes");
    }
    h.payload_length = static_cast<std::uint16_t>(payload.size());
    const auto ch = compress(h, link);
    std::vector<Fragment> out;
    if (ch.size() + payload.size() <= max_payload) {
        Fragment f;
        f.kind = phy::AdaptationKind::whole;
        f.bytes = ch.bytes;
        f.bytes.insert(f.bytes.end(), payload.begin(), payload.end());
        out.push_back(std::move(f));
        return out;
    }
    const std::size_t size = kIpv6HeaderBytes + payload.size();
    check_budget(max_payload, size);
    if (max_payload < kFrag1HeaderBytes + ch.size()) {
        throw AdaptationError("MAC payload budget too small for the compressed header");
    }
    const std::size_t room = max_payload - kFrag1HeaderBytes - ch.size();
    const std::size_t coverage = (kIpv6HeaderBytes + room) / 8 * 8;
    const std::size_t carried = coverage - kIpv6HeaderBytes;

    Fragment f1;
    f1.kind = phy::AdaptationKind::frag1;
    frag1_header(f1.bytes, size, tag);
    f1.bytes.insert(f1.bytes.end(), ch.bytes.begin(), ch.bytes.end());
    f1.bytes.insert(f1.bytes.end(), payload.begin(), payload.begin() + static_cast<long>(carried));
    out.push_back(std::move(f1));
    append_fragn(out, coverage, size, tag, max_payload,
                 [&](std::size_t i) { return payload[i - kIpv6HeaderBytes]; });
    return out;
}

Reassembler::Outcome Reassembler::add(const LinkAddresses& link, phy::AdaptationKind kind,
                                      std::span<const std::uint8_t> bytes, SimTime now) {
    Outcome out;
    auto discard = [&](std::string reason) {
        out.status = Status::discarded;
        out.reason = std::move(reason);
        return out;
    };

    if (kind == phy::AdaptationKind::whole) {
        if (bytes.empty()) return discard("empty");
        if (bytes[0] != kDispatch) {
            out.status = Status::delivered;
            out.datagram.assign(bytes.begin(), bytes.end());
            return out;
        }
        try {
            // The payload length is whatever follows the header; decompress
            // once to learn the header size, then fix the length up.
            auto d = decompress(bytes, link, 0);
            d.header.payload_length = static_cast<std::uint16_t>(bytes.size() - d.consumed);
            const auto head = serialize(d.header);
            out.datagram.assign(head.begin(), head.end());
            out.datagram.insert(out.datagram.end(), bytes.begin() + static_cast<long>(d.consumed),
                                bytes.end());
        } catch (const AdaptationError& e) {
            return discard(e.what());
        }
        out.status = Status::delivered;
        return out;
    }

    ParsedFragment p;
    try {
        p = parse_fragment(kind, bytes);
    } catch (const AdaptationError& e) {
        return discard(e.what());
    }
    const std::size_t size = p.header.datagram_size;
    if (size == 0) return discard("zero datagram size");

    std::vector<std::uint8_t> chunk;
    std::size_t offset = 0;
    if (kind == phy::AdaptationKind::frag1) {
        if (!p.payload.empty() && p.payload[0] == kDispatch) {
            if (size < kIpv6HeaderBytes) return discard("datagram smaller than IPv6 header");
            try {
                const auto d = decompress(p.payload, link,
                                          static_cast<std::uint16_t>(size - kIpv6HeaderBytes));
                const auto head = serialize(d.header);
                chunk.assign(head.begin(), head.end());
                chunk.insert(chunk.end(), p.payload.begin() + static_cast<long>(d.consumed),
                             p.payload.end());
            } catch (const AdaptationError& e) {
                return discard(e.what());
            }
        } else {
            chunk.assign(p.payload.begin(), p.payload.end());
        }
    } else {
        offset = static_cast<std::size_t>(p.header.offset) * 8;
        chunk.assign(p.payload.begin(), p.payload.end());
    }
    if (chunk.empty()) return discard("empty fragment");
    if (offset + chunk.size() > size) return discard("fragment exceeds datagram size");
    if (offset + chunk.size() < size && chunk.size() % 8 != 0) {
        return discard("non-final fragment not a multiple of 8 bytes");
    }

    const ReassemblyKey key{link.src, p.header.datagram_tag, static_cast<std::uint16_t>(size)};
    auto [it, inserted] = buffers_.try_emplace(key);
    Buffer& buf = it->second;
    if (inserted) {
        buf.started = now;
        buf.data.assign(size, 0);
        buf.covered.assign(size, false);
    }
    bool fresh = false;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
        const std::size_t at = offset + i;
        if (buf.covered[at]) {
            if (buf.data[at] != chunk[i]) {
                buffers_.erase(it);
                return discard("inconsistent overlapping fragment");
            }
        } else {
            fresh = true;
        }
    }
    if (!fresh) {
        out.status = Status::duplicate;
        return out;
    }
    for (std::size_t i = 0; i < chunk.size(); ++i) {
        const std::size_t at = offset + i;
        if (!buf.covered[at]) {
            buf.covered[at] = true;
            buf.data[at] = chunk[i];
            ++buf.covered_count;
        }
    }
    if (buf.covered_count == size) {
        out.status = Status::delivered;
        out.datagram = std::move(buf.data);
        buffers_.erase(it);
        return out;
    }
    out.status = Status::pending;
    return out;
}

std::vector<ReassemblyKey> Reassembler::expire(SimTime now) {
    std::vector<ReassemblyKey> gone;
    for (auto it = buffers_.begin(); it != buffers_.end();) {
        if (now - it->second.started >= timeout_) {
            gone.push_back(it->first);
            it = buffers_.erase(it);
        } else {
            ++it;
        }
    }
    return gone;
}

} // namespace uwb::adaptation
