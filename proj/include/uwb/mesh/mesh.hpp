#pragma once

#include "uwb/engine/radio_medium.hpp"
#include "uwb/mac/beacon.hpp"
#include "uwb/phy/toa.hpp"
#include "uwb/security/policy.hpp"

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uwb::mesh {

enum class Role { leader, full, half, leaf, border, smart_device };

std::string to_string(Role role);
/// Throws std::invalid_argument for an unknown name.
Role role_from_string(const std::string& name);

struct Capabilities {
    bool may_forward = false;
    bool may_lead = false;
};

class RoleError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct NodeDescriptor {
    NodeId id = 0;
    Role role = Role::leaf;
    Position position{};
    bool ethernet = false;
    bool always_on = false;
    Capabilities caps{};

    /// Descriptor with the capabilities implied by the role. Leaders keep
    /// may_lead so a demoted or restarted leader can be re-elected.
    static NodeDescriptor make(NodeId id, Role role, Position position);
    /// Throws RoleError when the role invariants do not hold.
    void validate() const;
    /// Takes over leadership: role becomes leader and the node stays on.
    void promote();
};

inline constexpr std::uint8_t kDefaultTtl = 16;

struct Edge {
    NodeId a = 0;
    NodeId b = 0;
    std::uint64_t last_seen = 0;  // superframe
    double quality = 0.0;         // 0..1
};

class TopologyError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Undirected link-state view. Vertices carry a forwarding flag; an edge
/// needs at least one forwarding endpoint.
class TopologyGraph {
public:
    void add_vertex(NodeId id, bool forwarder);
    [[nodiscard]] bool has_vertex(NodeId id) const { return vertices_.contains(id); }
    [[nodiscard]] bool forwarder(NodeId id) const;
    void remove_vertex(NodeId id);

    /// Adds or refreshes an edge; unknown endpoints are rejected.
    void set_edge(NodeId a, NodeId b, std::uint64_t superframe, double quality);
    bool remove_edge(NodeId a, NodeId b);
    [[nodiscard]] bool has_edge(NodeId a, NodeId b) const;
    [[nodiscard]] std::optional<Edge> edge(NodeId a, NodeId b) const;
    /// Neighbours in ascending id order.
    [[nodiscard]] std::vector<NodeId> neighbors(NodeId id) const;
    [[nodiscard]] std::vector<NodeId> vertices() const;
    [[nodiscard]] std::vector<Edge> edges() const;
    [[nodiscard]] std::size_t edge_count() const { return edges_.size(); }

    [[nodiscard]] std::uint32_t version(NodeId origin) const;
    std::uint32_t bump_version(NodeId origin);

private:
    std::map<NodeId, bool> vertices_;
    std::map<std::pair<NodeId, NodeId>, Edge> edges_;
    std::map<NodeId, std::set<NodeId>> adjacency_;
    std::map<NodeId, std::uint32_t> versions_;
};

struct Route {
    NodeId next_hop = 0;
    std::size_t hops = 0;
    /// Lowest link quality along the chosen path.
    double min_quality = 0.0;
};

using RouteTable = std::map<NodeId, Route>;

/// Next-hop table from `source`: fewest hops, then the highest bottleneck
/// quality, then the lowest next-hop id. Only forwarders relay; a
/// non-forwarding source may still originate. Throws TopologyError if
/// `source` is not a vertex.
RouteTable compute_routes(const TopologyGraph& graph, NodeId source);

/// "dst next_hop hops min_quality" per line.
std::string dump(const RouteTable& table);
/// "a b last_seen quality" per line, ascending.
std::string edge_list(const TopologyGraph& graph);

inline constexpr std::uint32_t kMissLimit = 3;

/// Consecutive missed expected transmissions per neighbour.
class LinkMonitor {
public:
    /// Resets the counter. Returns true if the neighbour was not tracked.
    bool heard(NodeId neighbor);
    /// Counts one miss. Returns true exactly when the count reaches the limit.
    bool missed(NodeId neighbor);
    void forget(NodeId neighbor) { misses_.erase(neighbor); }
    [[nodiscard]] std::uint32_t misses(NodeId neighbor) const;
    [[nodiscard]] bool tracked(NodeId neighbor) const { return misses_.contains(neighbor); }

private:
    std::map<NodeId, std::uint32_t> misses_;
};

/// Applies `missed` consecutive misses on `link`: at the limit the edge is
/// removed and both endpoints' versions bumped. Returns true if the routes
/// must be recomputed.
bool on_beacon_miss(TopologyGraph& graph, phy::Link link, std::uint32_t missed);

struct PromotionCandidate {
    NodeId id = 0;
    Role role = Role::full;
    bool may_lead = true;
    bool alive = true;
    double uptime_s = 0.0;
};

/// Highest uptime among live full nodes that may lead; ties go to the
/// lowest id. Empty result means the zone is degraded.
std::optional<NodeId> promote_leader(std::span<const PromotionCandidate> candidates);

struct MeshPacket {
    NodeId src = 0;
    NodeId dst = 0;
    std::uint8_t ttl = kDefaultTtl;
    std::uint16_t sequence = 0;
    std::vector<std::uint8_t> payload;
    friend bool operator==(const MeshPacket&, const MeshPacket&) = default;
};

inline constexpr std::size_t kMeshHeaderBytes = 7;

std::vector<std::uint8_t> encode(const MeshPacket& packet);
/// Throws std::invalid_argument on a short buffer.
MeshPacket decode_packet(std::span<const std::uint8_t> bytes);

/// Remembers recently seen (src, sequence) pairs, oldest evicted first.
class DuplicateFilter {
public:
    explicit DuplicateFilter(std::size_t capacity = 4096) : capacity_(capacity) {}
    /// Returns false if the pair was already seen.
    bool insert(NodeId src, std::uint16_t sequence);

private:
    std::size_t capacity_;
    std::set<std::pair<NodeId, std::uint16_t>> seen_;
    std::deque<std::pair<NodeId, std::uint16_t>> order_;
};

enum class ForwardKind { deliver, relay, drop };

struct ForwardAction {
    ForwardKind kind = ForwardKind::drop;
    std::optional<NodeId> next_hop;
    /// "ttl", "duplicate", "unreachable" or "not-forwarder" for drops.
    std::string reason;
    /// Packet as it leaves the node (ttl decremented on relay).
    MeshPacket packet;
};

/// Decides what node `at` does with an arriving packet. Relayed packets are
/// queued by the caller for the node's next transmit opportunity.
ForwardAction forward(MeshPacket packet, NodeId at, bool at_forwards, const RouteTable& routes,
                      DuplicateFilter& seen);

struct AssociationRequest {
    NodeId device = 0;
    /// Outcome of fingerprint re-identification.
    security::RffVerdict rff{};
    /// From a completed, valid ranging session with the leader.
    std::optional<ranging::RangeResult> range;
};

struct Association {
    bool accepted = false;
    std::string reason;
};

/// Authentication and proximity gate for a smart device joining a zone.
/// Rejects "authentication" unless re-identification accepted the device,
/// "no-proof-of-proximity" without a range and "proximity" beyond the
/// policy bound.
Association associate_smart_device(const AssociationRequest& request,
                                   const security::KeyPolicy& policy);

/// Link-state advertisement flooded among forwarders.
///
/// Wire layout: origin 2 | version 4 | forwarder 1 | count 1 | neighbors 3*n
struct LinkStateAdvert {
    NodeId origin = 0;
    std::uint32_t version = 0;
    bool forwarder = true;
    std::vector<mac::NeighborDigest> neighbors;
    friend bool operator==(const LinkStateAdvert&, const LinkStateAdvert&) = default;
};

inline constexpr std::size_t kLsaFixedBytes = 8;

/// Neighbour list cut to the budget, highest quality first.
std::vector<std::uint8_t> encode(const LinkStateAdvert& lsa, std::size_t budget);
LinkStateAdvert decode_lsa(std::span<const std::uint8_t> bytes);

/// Latest advertisement per origin. The graph built from it keeps an edge
/// between two forwarders only if both list each other; an edge to a
/// non-forwarder needs just the forwarder's listing.
class LinkStateDatabase {
public:
    /// Returns true if the advert is newer than the stored one.
    bool update(const LinkStateAdvert& lsa);
    [[nodiscard]] const std::map<NodeId, LinkStateAdvert>& adverts() const { return adverts_; }
    [[nodiscard]] TopologyGraph graph(std::uint64_t superframe) const;

private:
    std::map<NodeId, LinkStateAdvert> adverts_;
};

inline double quality_from_byte(std::uint8_t q) { return q / 255.0; }
std::uint8_t quality_to_byte(double q);

} // namespace uwb::mesh
