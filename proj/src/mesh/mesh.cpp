#include "uwb/mesh/mesh.hpp"

#include "uwb/phy/bytes.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>

namespace uwb::mesh {

namespace {

std::pair<NodeId, NodeId> key(NodeId a, NodeId b) { return {std::min(a, b), std::max(a, b)}; }

} // namespace

std::string to_string(Role role) {
    switch (role) {
    case Role::leader: return "leader";
    case Role::full: return "full";
    case Role::half: return "half";
    case Role::leaf: return "leaf";
    case Role::border: return "border";
    case Role::smart_device: return "smart_device";
    }
    return "?";
}

Role role_from_string(const std::string& name) {
    for (Role r : {Role::leader, Role::full, Role::half, Role::leaf, Role::border, Role::smart_device}) {
        if (to_string(r) == name) return r;
    }
    throw std::invalid_argument("unknown role '" + name + "'");
}

NodeDescriptor NodeDescriptor::make(NodeId id, Role role, Position position) {
    NodeDescriptor d;
    d.id = id;
    d.role = role;
    d.position = position;
    switch (role) {
    case Role::leader: d.always_on = true; d.caps = {true, true}; break;
    case Role::full: d.caps = {true, true}; break;
    case Role::half: d.caps = {true, false}; break;
    case Role::border: d.always_on = true; d.ethernet = true; d.caps = {true, false}; break;
    case Role::leaf:
    case Role::smart_device: break;
    }
    return d;
}

void NodeDescriptor::validate() const {
    auto fail = [&](const std::string& what) {
        throw RoleError("node " + std::to_string(id) + " (" + to_string(role) + "): " + what);
    };
    switch (role) {
    case Role::leader:
        if (!always_on) fail("leader must be always on");
        if (!caps.may_forward) fail("leader must forward");
        break;
    case Role::border:
        if (!always_on) fail("border node must be always on");
        if (!ethernet) fail("border node needs an ethernet interface");
        break;
    case Role::full:
        if (!caps.may_forward || !caps.may_lead) fail("full node must forward and may lead");
        break;
    case Role::half:
        if (!caps.may_forward || caps.may_lead) fail("half node forwards but may not lead");
        break;
    case Role::leaf:
    case Role::smart_device:
        if (caps.may_forward || caps.may_lead) fail("may neither forward nor lead");
        break;
    }
}

void NodeDescriptor::promote() {
    if (!caps.may_lead) throw RoleError("node " + std::to_string(id) + " may not lead");
    role = Role::leader;
    always_on = true;
}

void TopologyGraph::add_vertex(NodeId id, bool forwarder) {
    vertices_[id] = forwarder;
    adjacency_[id];
}

bool TopologyGraph::forwarder(NodeId id) const {
    auto it = vertices_.find(id);
    return it != vertices_.end() && it->second;
}

void TopologyGraph::remove_vertex(NodeId id) {
    for (NodeId n : neighbors(id)) remove_edge(id, n);
    vertices_.erase(id);
    adjacency_.erase(id);
}

void TopologyGraph::set_edge(NodeId a, NodeId b, std::uint64_t superframe, double quality) {
    if (a == b) throw TopologyError("self loop on " + std::to_string(a));
    if (!has_vertex(a) || !has_vertex(b)) {
        throw TopologyError("edge " + std::to_string(a) + "-" + std::to_string(b) + " has an unknown endpoint");
    }
    if (!forwarder(a) && !forwarder(b)) {
        throw TopologyError("edge " + std::to_string(a) + "-" + std::to_string(b) + " joins two non-forwarders");
    }
    const auto k = key(a, b);
    edges_[k] = Edge{k.first, k.second, superframe, std::clamp(quality, 0.0, 1.0)};
    adjacency_[a].insert(b);
    adjacency_[b].insert(a);
}

bool TopologyGraph::remove_edge(NodeId a, NodeId b) {
    if (edges_.erase(key(a, b)) == 0) return false;
    adjacency_[a].erase(b);
    adjacency_[b].erase(a);
    return true;
}

bool TopologyGraph::has_edge(NodeId a, NodeId b) const { return edges_.contains(key(a, b)); }

std::optional<Edge> TopologyGraph::edge(NodeId a, NodeId b) const {
    auto it = edges_.find(key(a, b));
    if (it == edges_.end()) return std::nullopt;
    return it->second;
}

std::vector<NodeId> TopologyGraph::neighbors(NodeId id) const {
    auto it = adjacency_.find(id);
    if (it == adjacency_.end()) return {};
    return {it->second.begin(), it->second.end()};
}

std::vector<NodeId> TopologyGraph::vertices() const {
    std::vector<NodeId> out;
    for (const auto& [id, f] : vertices_) out.push_back(id);
    return out;
}

std::vector<Edge> TopologyGraph::edges() const {
    std::vector<Edge> out;
    for (const auto& [k, e] : edges_) out.push_back(e);
    return out;
}

std::uint32_t TopologyGraph::version(NodeId origin) const {
    auto it = versions_.find(origin);
    return it == versions_.end() ? 0 : it->second;
}

std::uint32_t TopologyGraph::bump_version(NodeId origin) { return ++versions_[origin]; }

RouteTable compute_routes(const TopologyGraph& graph, NodeId source) {
    if (!graph.has_vertex(source)) throw TopologyError("source " + std::to_string(source) + " not in graph");

    // Hop distances; only forwarders (and the source) expand.
    std::map<NodeId, std::size_t> dist{{source, 0}};
    std::vector<NodeId> order;
    std::queue<NodeId> q;
    q.push(source);
    while (!q.empty()) {
        const NodeId u = q.front();
        q.pop();
        if (u != source) order.push_back(u);
        if (u != source && !graph.forwarder(u)) continue;
        for (NodeId v : graph.neighbors(u)) {
            if (dist.try_emplace(v, dist[u] + 1).second) q.push(v);
        }
    }

    // Best bottleneck over shortest paths, separately for each first hop, so
    // the quality and id tie-breaks are applied to whole paths.
    RouteTable table;
    for (NodeId h : graph.neighbors(source)) {
        std::map<NodeId, double> bottleneck{{h, graph.edge(source, h)->quality}};
        for (NodeId v : order) {
            if (v == h) continue;
            const std::size_t dv = dist.at(v);
            double best = -1.0;
            for (NodeId u : graph.neighbors(v)) {
                auto du = dist.find(u);
                if (du == dist.end() || du->second + 1 != dv || u == source) continue;
                if (!graph.forwarder(u)) continue;
                auto bu = bottleneck.find(u);
                if (bu == bottleneck.end()) continue;
                best = std::max(best, std::min(bu->second, graph.edge(u, v)->quality));
            }
            if (best >= 0.0) bottleneck[v] = best;
        }
        for (const auto& [v, b] : bottleneck) {
            const std::size_t hops = dist.at(v);
            auto it = table.find(v);
            // Neighbours come in ascending order, so only a strictly better
            // bottleneck replaces an earlier first hop.
            if (it == table.end() || b > it->second.min_quality) table[v] = Route{h, hops, b};
        }
    }
    return table;
}

std::string dump(const RouteTable& table) {
    std::ostringstream out;
    for (const auto& [dst, r] : table) {
        out << dst << ' ' << r.next_hop << ' ' << r.hops << ' ' << r.min_quality << '\n';
    }
    return out.str();
}

std::string edge_list(const TopologyGraph& graph) {
    std::ostringstream out;
    for (const auto& e : graph.edges()) {
        out << e.a << ' ' << e.b << ' ' << e.last_seen << ' ' << e.quality << '\n';
    }
    return out.str();
}

bool LinkMonitor::heard(NodeId neighbor) {
    auto [it, fresh] = misses_.try_emplace(neighbor, 0);
    it->second = 0;
    return fresh;
}

bool LinkMonitor::missed(NodeId neighbor) {
    auto it = misses_.find(neighbor);
    if (it == misses_.end()) return false;
    return ++it->second == kMissLimit;
}

std::uint32_t LinkMonitor::misses(NodeId neighbor) const {
    auto it = misses_.find(neighbor);
    return it == misses_.end() ? 0 : it->second;
}

bool on_beacon_miss(TopologyGraph& graph, phy::Link link, std::uint32_t missed) {
    if (missed < kMissLimit) return false;
    if (!graph.remove_edge(link.a, link.b)) return false;
    graph.bump_version(link.a);
    graph.bump_version(link.b);
    return true;
}

std::optional<NodeId> promote_leader(std::span<const PromotionCandidate> candidates) {
    std::optional<PromotionCandidate> best;
    for (const auto& c : candidates) {
        if (c.role != Role::full || !c.may_lead || !c.alive) continue;
        if (!best || c.uptime_s > best->uptime_s || (c.uptime_s == best->uptime_s && c.id < best->id)) {
            best = c;
        }
    }
    if (!best) return std::nullopt;
    return best->id;
}

std::vector<std::uint8_t> encode(const MeshPacket& packet) {
    std::vector<std::uint8_t> out;
    phy::ByteWriter w(out);
    w.u16(packet.src);
    w.u16(packet.dst);
    w.u8(packet.ttl);
    w.u16(packet.sequence);
    w.bytes(packet.payload);
    return out;
}

MeshPacket decode_packet(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kMeshHeaderBytes) throw std::invalid_argument("mesh packet shorter than its header");
    phy::ByteReader r(bytes);
    MeshPacket p;
    p.src = r.u16();
    p.dst = r.u16();
    p.ttl = r.u8();
    p.sequence = r.u16();
    const auto rest = r.rest();
    p.payload.assign(rest.begin(), rest.end());
    return p;
}

bool DuplicateFilter::insert(NodeId src, std::uint16_t sequence) {
    const auto k = std::make_pair(src, sequence);
    if (!seen_.insert(k).second) return false;
    order_.push_back(k);
    if (order_.size() > capacity_) {
        seen_.erase(order_.front());
        order_.pop_front();
    }
    return true;
}

ForwardAction forward(MeshPacket packet, NodeId at, bool at_forwards, const RouteTable& routes,
                      DuplicateFilter& seen) {
    ForwardAction a;
    auto drop = [&](std::string reason) {
        a.kind = ForwardKind::drop;
        a.reason = std::move(reason);
        a.packet = std::move(packet);
        return a;
    };
    if (!seen.insert(packet.src, packet.sequence)) return drop("duplicate");
    if (packet.dst == at) {
        a.kind = ForwardKind::deliver;
        a.packet = std::move(packet);
        return a;
    }
    const bool originating = packet.src == at;
    if (!originating && !at_forwards) return drop("not-forwarder");
    if (!originating && packet.ttl <= 1) return drop("ttl");
    auto it = routes.find(packet.dst);
    if (it == routes.end()) return drop("unreachable");
    a.kind = ForwardKind::relay;
    a.next_hop = it->second.next_hop;
    if (!originating) --packet.ttl;
    a.packet = std::move(packet);
    return a;
}

Association associate_smart_device(const AssociationRequest& request,
                                   const security::KeyPolicy& policy) {
    if (request.rff != security::RffVerdict::accept) return {false, "authentication"};
    if (!request.range || !request.range->valid) return {false, "no-proof-of-proximity"};
    if (policy.proximity_active() && request.range->distance_m > policy.max_distance_m) {
        return {false, "proximity"};
    }
    return {true, ""};
}

std::uint8_t quality_to_byte(double q) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(q, 0.0, 1.0) * 255.0));
}

std::vector<std::uint8_t> encode(const LinkStateAdvert& lsa, std::size_t budget) {
    if (budget < kLsaFixedBytes) throw std::invalid_argument("budget below the advert header");
    auto neighbors = lsa.neighbors;
    std::stable_sort(neighbors.begin(), neighbors.end(), [](const auto& x, const auto& y) {
        return x.quality != y.quality ? x.quality > y.quality : x.id < y.id;
    });
    const std::size_t fit = std::min<std::size_t>({neighbors.size(), (budget - kLsaFixedBytes) / 3, 255});
    neighbors.resize(fit);
    std::vector<std::uint8_t> out;
    phy::ByteWriter w(out);
    w.u16(lsa.origin);
    w.u32(lsa.version);
    w.u8(lsa.forwarder ? 1 : 0);
    w.u8(static_cast<std::uint8_t>(fit));
    for (const auto& n : neighbors) {
        w.u16(n.id);
        w.u8(n.quality);
    }
    return out;
}

LinkStateAdvert decode_lsa(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kLsaFixedBytes) throw std::invalid_argument("link-state advert too short");
    phy::ByteReader r(bytes);
    LinkStateAdvert lsa;
    lsa.origin = r.u16();
    lsa.version = r.u32();
    lsa.forwarder = r.u8() != 0;
    const std::size_t n = r.u8();
    if (bytes.size() != kLsaFixedBytes + 3 * n) throw std::invalid_argument("link-state advert length mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        mac::NeighborDigest d;
        d.id = r.u16();
        d.quality = r.u8();
        lsa.neighbors.push_back(d);
    }
    return lsa;
}

bool LinkStateDatabase::update(const LinkStateAdvert& lsa) {
    auto it = adverts_.find(lsa.origin);
    if (it != adverts_.end() && it->second.version >= lsa.version) return false;
    adverts_[lsa.origin] = lsa;
    return true;
}

TopologyGraph LinkStateDatabase::graph(std::uint64_t superframe) const {
    TopologyGraph g;
    for (const auto& [origin, lsa] : adverts_) {
        for (const auto& n : lsa.neighbors) {
            if (!adverts_.contains(n.id)) g.add_vertex(n.id, false);
        }
    }
    for (const auto& [origin, lsa] : adverts_) g.add_vertex(origin, lsa.forwarder);
    for (const auto& [origin, lsa] : adverts_) {
        if (!lsa.forwarder) continue;
        for (const auto& n : lsa.neighbors) {
            if (n.id == origin) continue;
            double q = quality_from_byte(n.quality);
            auto other = adverts_.find(n.id);
            if (other != adverts_.end()) {
                const auto& back = other->second.neighbors;
                auto rev = std::find_if(back.begin(), back.end(),
                                        [&](const auto& d) { return d.id == origin; });
                if (rev == back.end()) continue;
                q = std::min(q, quality_from_byte(rev->quality));
            }
            g.set_edge(origin, n.id, superframe, q);
        }
    }
    return g;
}

} // namespace uwb::mesh
