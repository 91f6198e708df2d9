#include "uwb/scenario/network.hpp"

#include "uwb/adaptation/adaptation.hpp"
#include "uwb/engine/radio_medium.hpp"
#include "uwb/mac/beacon.hpp"
#include "uwb/mac/clock.hpp"
#include "uwb/phy/bytes.hpp"
#include "uwb/phy/cir.hpp"
#include "uwb/phy/frame.hpp"
#include "uwb/phy/toa.hpp"
#include "uwb/ranging/ranging.hpp"
#include "uwb/secrecy/secrecy.hpp"
#include "uwb/security/fingerprint.hpp"
#include "uwb/security/policy.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace uwb::scenario {

namespace {

using namespace std::chrono_literals;
using engine::Channel;
using phy::FrameType;

constexpr Channel kBackbone = 0;
constexpr std::uint16_t kBackbonePan = 0x5AFF;
constexpr Picoseconds kFrameGap = 10us;
constexpr Picoseconds kPlanLead = 500us;
// Margin for the rounding of local-to-true time conversion.
constexpr Picoseconds kClockSlack = 100ns;
constexpr std::size_t kQueueLimit = 64;
constexpr std::uint64_t kUnreachableHold = 5;
constexpr std::size_t kFragmentBudget = phy::kMaxMacPayload - mesh::kMeshHeaderBytes;
constexpr double kRffSnrDb = 20.0;
constexpr std::uint8_t kNoHops = 0xFF;
constexpr std::uint16_t kUdpPortBase = 49152;
constexpr std::uint8_t kUdp = 17;

std::int64_t sf_ps() { return kSuperframe.count(); }

struct Candidate {
    std::uint8_t hops = kNoHops;
    double quality = 0.0;
    std::uint64_t heard = 0;
};

struct NeighborState {
    SimTime last_heard{};
    std::uint8_t quality = 0;
};

struct Queued {
    mesh::MeshPacket packet;
    phy::AdaptationKind kind = phy::AdaptationKind::whole;
    std::uint64_t since = 0;
};

struct Proof {
    ranging::RangeResult result;
    std::uint64_t superframe = 0;
};

struct Initiated {
    ranging::RangingSession session;
    std::uint8_t id = 0;
    SimTime t1_local{};
    std::uint64_t superframe = 0;
    bool final_sent = false;
};

struct Responding {
    ranging::RangingSession session;
    std::uint8_t id = 0;
    std::uint64_t superframe = 0;
};

/// Grant view of one superframe: grantee per slot plus each grantee's
/// first slot.
struct GrantTable {
    std::uint64_t superframe = ~0ULL;
    std::vector<NodeId> grantee;
    std::map<NodeId, std::size_t> first;
};

struct Node {
    NodeConfig cfg;
    mesh::NodeDescriptor desc;
    security::KeyPolicy policy;
    int zone = 0;
    Channel zone_channel = 1;
    std::uint16_t pan = 0;
    bool alive = true;
    std::uint64_t epoch = 0;
    bool wired = false;
    std::mt19937_64 rng;
    mac::LocalClock clock;

    std::optional<NodeId> leader;
    std::optional<NodeId> parent;
    std::uint8_t hops = kNoHops;
    std::uint8_t hops_bound = kNoHops;
    std::map<NodeId, Candidate> candidates;
    std::optional<std::uint32_t> fresh;
    bool relay_pending = false;
    std::vector<mac::RosterEntry> latest_roster;
    std::vector<mac::RosterEntry> effective_roster;
    std::optional<std::uint64_t> leader_lost_at;
    std::set<NodeId> excluded;
    std::optional<NodeId> expected_winner;

    // leader only
    std::vector<mac::RosterEntry> announced;
    std::map<NodeId, SimTime> member_since;

    std::map<NodeId, NeighborState> neighbors;
    mesh::LinkMonitor monitor;
    mesh::LinkStateDatabase lsdb;
    std::uint32_t lsa_version = 0;
    std::map<Channel, std::set<NodeId>> flood;
    bool routes_dirty = true;
    mesh::RouteTable routes;

    mesh::DuplicateFilter seen;
    std::set<std::pair<NodeId, std::uint16_t>> relayed;
    std::deque<Queued> queue;
    std::uint16_t next_sequence = 0;
    std::uint16_t next_tag = 0;
    std::uint8_t mac_sequence = 0;
    adaptation::Reassembler reassembler;

    std::uint8_t next_session = 0;
    std::optional<Initiated> initiated;
    std::map<NodeId, Responding> responding;
    std::map<NodeId, Proof> proofs;
    std::optional<double> parent_distance;
    std::map<NodeId, security::TokenBucket> buckets;

    GrantTable grants;
    GrantTable grants_prev;

    [[nodiscard]] bool forwards() const { return desc.caps.may_forward; }
    [[nodiscard]] bool leads() const { return desc.role == mesh::Role::leader; }
};

struct Zone {
    int id = 0;
    Channel channel = 1;
    std::uint16_t pan = 0;
    std::optional<NodeId> leader;
    std::vector<NodeId> members;
    security::Registry registry;
    std::set<NodeId> associated;
    std::map<NodeId, security::RffVerdict> verdicts;
    bool degraded = false;
};

struct FlowState {
    FlowConfig cfg;
    std::uint32_t counter = 0;
    std::map<std::uint32_t, SimTime> pending;
};

enum class SessionStatus { started, completed, invalidated };

/// key=value detail builder for trace records.
class Details {
public:
    template <typename T>
    Details& operator()(const char* key, const T& value) {
        if (!first_) out_ << ' ';
        first_ = false;
        out_ << key << '=' << value;
        return *this;
    }
    [[nodiscard]] std::string str() const { return out_.str(); }

private:
    std::ostringstream out_;
    bool first_ = true;
};

std::uint8_t quality_byte(double distance_m, double range_m) {
    return mesh::quality_to_byte(std::clamp(1.0 - distance_m / range_m, 0.05, 1.0));
}

std::vector<NodeId> roster_ids(const std::vector<mac::RosterEntry>& roster) {
    std::vector<NodeId> ids;
    ids.reserve(roster.size());
    for (const auto& e : roster) ids.push_back(e.id);
    return ids;
}

} // namespace

std::uint64_t Metrics::datagrams_generated() const {
    std::uint64_t n = 0;
    for (const auto& f : flows) n += f.generated;
    return n;
}

std::uint64_t Metrics::datagrams_delivered() const {
    std::uint64_t n = 0;
    for (const auto& f : flows) n += f.delivered;
    return n;
}

double Metrics::delivery_ratio() const {
    const auto g = datagrams_generated();
    return g == 0 ? 0.0 : static_cast<double>(datagrams_delivered()) / static_cast<double>(g);
}

struct Network::Impl {
    ScenarioConfig cfg;
    engine::Simulator sim;
    engine::RadioMedium medium;
    mac::SuperframeSchedule schedule;
    phy::AttackTable attacks;
    Metrics metrics;
    std::map<NodeId, Node> nodes;
    std::map<int, Zone> zones;
    std::vector<FlowState> flows;
    std::map<std::pair<NodeId, std::uint8_t>, SessionStatus> sessions;
    Picoseconds slot_len;
    Picoseconds guard;
    Picoseconds reply;
    phy::ToaNoise noise;
    SimTime end;
    bool started = false;

    explicit Impl(const ScenarioConfig& config)
        : cfg(config),
          medium(sim, engine::MediumConfig{config.radio.max_range_m, config.radio.datarate_bps,
                                           from_ns(config.radio.preamble_us * 1e3)}),
          slot_len(from_ns(config.superframe.slot_length_us * 1e3)),
          guard(from_ns(config.superframe.guard_us * 1e3)),
          reply(from_ns(config.superframe.reply_delay_us * 1e3)),
          noise{config.ranging.noise_sigma_ns},
          end(SimTime{from_ns(config.duration_s * 1e9)}) {
        const auto violations = validate(cfg);
        if (!violations.empty()) throw ConfigError(violations.front());
        sim.trace().set_level(trace_level(cfg.outputs.trace_level));
        const auto leaders = cfg.leaders();
        schedule = mac::build_schedule(leaders, slot_len);
        metrics.flows.resize(cfg.flows.size());
        build_zones();
        build_nodes();
        enroll_devices();
    }

    static engine::Trace::Level trace_level(const std::string& s) {
        if (s == "off") return engine::Trace::Level::off;
        if (s == "full") return engine::Trace::Level::full;
        return engine::Trace::Level::protocol;
    }

    engine::Trace& trace() { return sim.trace(); }
    bool tracing(engine::Trace::Level at = engine::Trace::Level::protocol) {
        return trace().enabled(at);
    }
    void record(std::optional<NodeId> node, std::string_view kind, const Details& d,
                engine::Trace::Level at = engine::Trace::Level::protocol) {
        trace().record(sim.now(), node, kind, d.str(), at);
    }

    [[nodiscard]] std::uint64_t superframe_at(SimTime t) const {
        return static_cast<std::uint64_t>(std::max<std::int64_t>(ticks(t), 0) / sf_ps());
    }
    [[nodiscard]] std::uint64_t current_superframe() const { return superframe_at(sim.now()); }

    // ---------------------------------------------------------------- setup

    void build_zones() {
        const auto ids = cfg.zones();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            Zone z;
            z.id = ids[i];
            z.channel = cfg.radio.separation == ZoneSeparation::channel
                            ? static_cast<Channel>(i + 1)
                            : Channel{1};
            z.pan = static_cast<std::uint16_t>(0x5A00 | (ids[i] & 0xFF));
            zones[z.id] = z;
        }
        for (const auto& n : cfg.nodes) {
            auto& z = zones[n.zone];
            if (n.role == mesh::Role::leader) z.leader = n.id;
            else z.members.push_back(n.id);
        }
        for (auto& [id, z] : zones) std::sort(z.members.begin(), z.members.end());
    }

    void build_nodes() {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (const auto& c : cfg.nodes) {
            Node n;
            n.cfg = c;
            n.desc = mesh::NodeDescriptor::make(c.id, c.role, c.position);
            n.policy = cfg.policy_for(c);
            n.zone = c.zone;
            n.zone_channel = zones[c.zone].channel;
            n.pan = zones[c.zone].pan;
            std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                              static_cast<std::uint32_t>(c.id), 0x6e6f6465U};
            n.rng.seed(seq);
            n.clock.drift_ppm = c.drift_ppm ? *c.drift_ppm : (unit(n.rng) * 2.0 - 1.0) * cfg.drift_ppm;
            n.wired = c.role == mesh::Role::leader;
            if (n.wired) {
                n.leader = c.id;
                n.hops = 0;
            } else {
                n.clock.offset = Picoseconds{static_cast<std::int64_t>(unit(n.rng) * static_cast<double>(sf_ps()))};
            }
            nodes.emplace(c.id, std::move(n));
        }
        for (auto& [id, n] : nodes) {
            medium.add_node(id, n.cfg.position, listening(n));
            medium.set_handler(id, [this, id](const engine::Reception& r) { on_receive(nodes.at(id), r); });
            if (n.leads()) init_leader(n, roster_for(zones[n.zone], n.cfg.id, {}));
        }
    }

    std::vector<Channel> listening(const Node& n) const {
        if (n.leads()) return {n.zone_channel, kBackbone};
        return {n.zone_channel};
    }

    std::vector<mac::RosterEntry> roster_for(const Zone& z, NodeId leader, const std::set<NodeId>& drop) {
        std::vector<mac::RosterEntry> out;
        for (NodeId m : z.members) {
            if (m == leader || drop.contains(m)) continue;
            out.push_back({m, false, 0});
        }
        return out;
    }

    void init_leader(Node& n, std::vector<mac::RosterEntry> roster) {
        n.announced = roster;
        n.effective_roster = roster;
        n.latest_roster = roster;
    }

    void enroll_devices() {
        for (auto& [zid, z] : zones) {
            if (!z.leader) continue;
            auto& leader = nodes.at(*z.leader);
            for (NodeId m : z.members) {
                const auto& c = nodes.at(m).cfg;
                if (c.role != mesh::Role::smart_device || !c.enrolled || c.impersonates) continue;
                const auto sig = phy::ImpairmentSignature::for_device(c.device_seed.value_or(c.id));
                std::uniform_real_distribution<double> d(2.0, 10.0);
                std::vector<phy::Cir> caps;
                for (int i = 0; i < 10; ++i) caps.push_back(phy::synthesize_cir(d(leader.rng), sig, kRffSnrDb, leader.rng()));
                const auto emb = security::extract_embeddings_serial(caps);
                z.registry.put(security::enroll(m, emb));
            }
        }
    }

    // ----------------------------------------------------------- event glue

    void schedule_node(Node& n, SimTime at, std::function<void(Node&)> fn) {
        at = std::max(at, sim.now());
        const NodeId id = n.cfg.id;
        const std::uint64_t epoch = n.epoch;
        sim.schedule(at, id, [this, id, epoch, fn = std::move(fn)] {
            auto& node = nodes.at(id);
            if (!node.alive || node.epoch != epoch) return;
            fn(node);
        });
    }

    /// Runs `fn` when the node's own clock reads `local`. A sync that moves
    /// the clock in between shifts the event with it.
    void schedule_local(Node& n, SimTime local, std::function<void(Node&)> fn) {
        schedule_node(n, n.clock.true_time(local), [this, local, fn = std::move(fn)](Node& node) mutable {
            if (local_now(node) < local) {
                const SimTime again = std::max(node.clock.true_time(local), sim.now() + Picoseconds{1});
                schedule_node(node, again, std::move(fn));
                return;
            }
            fn(node);
        });
    }

    void start() {
        if (started) return;
        started = true;
        for (auto& [id, n] : nodes) schedule_plan(n, 0);
        schedule_superframe(0);
        for (std::size_t i = 0; i < cfg.flows.size(); ++i) {
            flows.push_back(FlowState{cfg.flows[i], 0, {}});
            const SimTime t{from_ns(cfg.flows[i].start_s * 1e9)};
            sim.schedule(t, kBroadcast, [this, i] { generate(i); });
        }
        for (const auto& a : cfg.attacks) {
            const phy::Link link(a.a, a.b);
            attacks.add_link(link);
            sim.schedule(SimTime{from_ns(a.start_s * 1e9)}, kBroadcast, [this, a, link] {
                attacks.inject(a.kind, a.magnitude_ns, link);
                record(std::nullopt, "attack-start",
                       Details()("link", std::to_string(link.a) + "-" + std::to_string(link.b))(
                           "kind", a.kind == phy::AttackKind::sts_advance ? "sts_advance" : "phy_delay")(
                           "ns", a.magnitude_ns));
            });
            if (a.stop_s) {
                sim.schedule(SimTime{from_ns(*a.stop_s * 1e9)}, kBroadcast, [this, link] {
                    attacks.clear(link);
                    record(std::nullopt, "attack-stop",
                           Details()("link", std::to_string(link.a) + "-" + std::to_string(link.b)));
                });
            }
        }
        for (const auto& e : cfg.events) {
            sim.schedule(SimTime{from_ns(e.at_s * 1e9)}, kBroadcast, [this, e] {
                if (e.kind == NodeEventConfig::Kind::kill) kill(nodes.at(e.node));
                else revive(nodes.at(e.node));
            });
        }
    }

    void schedule_plan(Node& n, std::uint64_t k) {
        const SimTime at = k == 0 ? SimTime{} : SimTime{kSuperframe * static_cast<std::int64_t>(k) - kPlanLead};
        schedule_node(n, at, [this, k](Node& node) {
            plan(node, k);
            schedule_plan(node, k + 1);
        });
    }

    void schedule_superframe(std::uint64_t k) {
        const SimTime base{kSuperframe * static_cast<std::int64_t>(k)};
        sim.schedule(base, kBroadcast, [this, k, base] {
            metrics.superframes = k + 1;
            for (std::size_t s = 0; s < schedule.slot_count(); ++s) {
                const SimTime tick = base + slot_len * static_cast<std::int64_t>(s + 1) + 1us;
                sim.schedule(tick, kBroadcast, [this, k, s] { slot_tick(k, s); });
            }
            schedule_superframe(k + 1);
        });
    }

    // --------------------------------------------------------------- clocks

    bool synced(const Node& n) const {
        if (n.leads()) return true;
        return n.clock.synchronized_at(sim.now(), cfg.superframe.sync_validity);
    }

    SimTime local_now(const Node& n) const { return n.clock.local_time(sim.now()); }

    SimTime slot_local_start(std::uint64_t k, std::size_t slot) const {
        return SimTime{kSuperframe * static_cast<std::int64_t>(k) + slot_len * static_cast<std::int64_t>(slot)};
    }

    // --------------------------------------------------------------- grants

    GrantTable grant_table(const std::vector<mac::RosterEntry>& roster, std::uint64_t k) const {
        GrantTable g;
        g.superframe = k;
        g.grantee.assign(schedule.slot_count(), kBroadcast);
        const auto ids = roster_ids(roster);
        if (ids.empty()) return g;
        std::size_t ordinal = 0;
        for (std::size_t s = 0; s < schedule.slot_count(); ++s) {
            if (schedule.slots[s].kind != mac::SlotKind::ranging) continue;
            const NodeId who = ids[(ordinal + k) % ids.size()];
            g.grantee[s] = who;
            g.first.try_emplace(who, s);
            ++ordinal;
        }
        return g;
    }

    const GrantTable* grants_for(const Node& n, std::uint64_t k) const {
        if (n.grants.superframe == k) return &n.grants;
        if (n.grants_prev.superframe == k) return &n.grants_prev;
        return nullptr;
    }

    mac::RangingGrant grant_at(const Node& n, const mac::SlotPosition& pos, bool responding_to_grantee) const {
        mac::RangingGrant g;
        if (pos.slot == nullptr || pos.slot->kind != mac::SlotKind::ranging) return g;
        const auto* table = grants_for(n, pos.superframe);
        if (!table) return g;
        const NodeId who = table->grantee[pos.slot->index];
        if (who == kBroadcast) return g;
        g.grantee = who;
        if (responding_to_grantee) g.responder = n.cfg.id;
        return g;
    }

    bool ranging_due(std::uint64_t k) const { return k % cfg.superframe.ranging_period == 0; }

    // ------------------------------------------------------------- planning

    void plan(Node& n, std::uint64_t k) {
        expire_sessions(n, k);
        if (n.leads()) {
            if (n.wired) {
                n.clock = mac::resync(n.clock, sim.now(), sim.now());
            } else if (!n.clock.synchronized_at(sim.now(), 1)) {
                // No wired leader heard: the promoted leader is its own reference.
                n.clock = mac::resync(n.clock, sim.now(), local_now(n));
            }
        } else {
            check_leader_loss(n, k);
            if (!synced(n)) {
                n.hops_bound = kNoHops;
                if (n.parent && n.clock.synced) n.parent_distance.reset();
            }
        }

        if (n.leads()) {
            refresh_roster(n);
            n.effective_roster = n.announced;
            n.announced = n.latest_roster;
        } else {
            n.effective_roster = n.latest_roster;
        }
        n.grants_prev = std::move(n.grants);
        n.grants = grant_table(n.effective_roster, k);

        if (n.leads()) {
            plan_leader(n, k);
        } else if (synced(n)) {
            plan_member(n, k);
        }
        if (n.cfg.out_of_slot && (synced(n) || n.leads())) plan_rogue(n, k);
    }

    void refresh_roster(Node& n) {
        auto& z = zones.at(n.zone);
        for (auto& e : n.latest_roster) {
            const auto& m = nodes.at(e.id);
            const bool heard = n.neighbors.contains(e.id);
            e.eligible = m.cfg.role == mesh::Role::full && heard;
            auto since = n.member_since.find(e.id);
            if (heard && since == n.member_since.end()) since = n.member_since.emplace(e.id, sim.now()).first;
            if (!heard && since != n.member_since.end()) {
                n.member_since.erase(since);
                since = n.member_since.end();
            }
            const double up = since == n.member_since.end() ? 0.0 : to_seconds(SimTime{sim.now() - since->second});
            e.uptime_s = static_cast<std::uint16_t>(std::min(up, 32767.0));
        }
        std::erase_if(n.latest_roster, [&](const mac::RosterEntry& e) {
            return z.verdicts.contains(e.id) && !z.associated.contains(e.id);
        });
    }

    void plan_leader(Node& n, std::uint64_t k) {
        if (auto b = schedule.beacon_slot(n.cfg.id)) {
            const std::size_t slot = *b;
            const SimTime start_local = slot_local_start(k, slot);
            schedule_local(n, start_local + guard + kClockSlack, [this, k, slot, start_local](Node& node) {
                const auto len = send_beacon(node, k, node.zone_channel, 0);
                burst_after(node, node.zone_channel, k, slot, start_local, len);
            });
        }
        if (auto d = schedule.data_slot(n.cfg.id)) {
            const std::size_t slot = *d;
            const SimTime start_local = slot_local_start(k, slot);
            schedule_local(n, start_local + guard + kClockSlack, [this, k, slot, start_local](Node& node) {
                const auto len = send_beacon(node, k, kBackbone, node.wired ? 0 : 1);
                burst_after(node, kBackbone, k, slot, start_local, len);
            });
        }
    }

    void plan_member(Node& n, std::uint64_t k) {
        const NodeId me = n.cfg.id;
        auto first = n.grants.first.find(me);
        if (first == n.grants.first.end()) return;
        const bool smart = n.cfg.role == mesh::Role::smart_device;
        for (std::size_t s = 0; s < n.grants.grantee.size(); ++s) {
            if (n.grants.grantee[s] != me) continue;
            const bool is_first = s == first->second;
            if (smart && !is_first) break;
            const SimTime start_local = slot_local_start(k, s);
            schedule_local(n, start_local + guard + kClockSlack, [this, k, s, is_first, start_local](Node& node) {
                slot_action(node, k, s, is_first, start_local);
            });
        }
    }

    void plan_rogue(Node& n, std::uint64_t k) {
        std::uniform_int_distribution<std::int64_t> at(0, sf_ps() - 1);
        const SimTime t{kSuperframe * static_cast<std::int64_t>(k) + Picoseconds{at(n.rng)}};
        schedule_node(n, t, [this](Node& node) {
            mesh::MeshPacket p{node.cfg.id, kBroadcast, 1, node.next_sequence++, std::vector<std::uint8_t>(8, 0xEE)};
            transmit(node, node.zone_channel, make_frame(node, FrameType::data, kBroadcast, node.pan, mesh::encode(p)), false);
        });
    }

    // ---------------------------------------------------------- transmitting

    std::vector<std::uint8_t> make_frame(Node& n, FrameType type, NodeId dst, std::uint16_t pan,
                                         std::vector<std::uint8_t> payload,
                                         phy::AdaptationKind kind = phy::AdaptationKind::whole) {
        phy::Frame f;
        f.header.type = type;
        f.header.adaptation = kind;
        f.header.has_sts = type == FrameType::ranging_poll || type == FrameType::ranging_response ||
                           type == FrameType::ranging_final;
        f.header.sequence = n.mac_sequence++;
        f.header.pan_id = pan;
        f.header.dst = dst;
        f.header.src = n.cfg.id;
        f.payload = std::move(payload);
        return f.encode();
    }

    /// Transmits now. `responding` marks a ranging response in a child's slot.
    void transmit(Node& n, Channel ch, const std::vector<std::uint8_t>& bytes, bool check_slot = true,
                  bool responding = false) {
        bool compliant = false;
        if (check_slot) {
            const auto pos = mac::slot_at(schedule, local_now(n));
            compliant = mac::may_transmit(n.cfg.id, pos, grant_at(n, pos, responding), synced(n), guard,
                                          medium.airtime(bytes.size()));
        }
        if (!compliant) ++metrics.frames_noncompliant;
        ++metrics.frames_sent;
        medium.transmit(n.cfg.id, bytes, ch, sim.now(), compliant);
        if (tracing(engine::Trace::Level::full)) {
            const auto type = static_cast<int>(bytes[0] & 0x0F);
            record(n.cfg.id, "tx", Details()("ch", int{ch})("type", type)("len", bytes.size())("ok", compliant),
                   engine::Trace::Level::full);
        }
    }

    std::size_t fitting_bytes(Picoseconds remaining) const {
        if (remaining <= medium.config().preamble) return 0;
        std::size_t len = kMaxFrameBytes;
        while (len > 0 && medium.airtime(len) > remaining) --len;
        return len;
    }

    std::size_t send_beacon(Node& n, std::uint64_t k, Channel ch, std::uint8_t hops) {
        mac::Beacon b;
        b.leader = n.cfg.id;
        b.sequence = static_cast<std::uint32_t>(k);
        b.timestamp = local_now(n);
        b.position = n.cfg.position;
        b.zone = static_cast<std::uint8_t>(n.zone);
        b.hops = hops;
        if (ch != kBackbone) {
            b.roster = n.announced;
            for (const auto& [id, s] : n.neighbors) b.neighbors.push_back({id, s.quality});
        }
        const std::uint16_t pan = ch == kBackbone ? kBackbonePan : n.pan;
        const auto frame = make_frame(n, FrameType::beacon, kBroadcast, pan, mac::encode(b));
        transmit(n, ch, frame);
        if (ch != kBackbone) {
            for (auto& p : metrics.promotions) {
                if (p.winner == n.cfg.id && !p.first_beacon_superframe) p.first_beacon_superframe = k;
            }
            if (tracing()) record(n.cfg.id, "beacon", Details()("seq", k)("roster", b.roster.size()));
        }
        return frame.size();
    }

    std::optional<std::vector<std::uint8_t>> relayed_beacon(Node& n, std::size_t max_bytes) {
        if (!n.fresh || !n.leader) return std::nullopt;
        mac::Beacon b;
        b.leader = *n.leader;
        b.sequence = *n.fresh;
        b.timestamp = local_now(n);
        b.position = n.cfg.position;
        b.zone = static_cast<std::uint8_t>(n.zone);
        b.hops = n.parent ? n.hops : kNoHops;
        b.roster = n.latest_roster;
        auto payload = mac::encode(b);
        if (payload.size() + phy::kMacHeaderBytes > max_bytes) return std::nullopt;
        n.relay_pending = false;
        return make_frame(n, FrameType::relayed_beacon, kBroadcast, n.pan, std::move(payload));
    }

    void slot_action(Node& n, std::uint64_t k, std::size_t slot, bool is_first, SimTime start_local) {
        if (!synced(n)) return;
        const bool leaf = !n.forwards();
        const auto final_air = medium.airtime(phy::kMacHeaderBytes + ranging::encode(ranging::FinalMessage{}).size());
        const SimTime exchange_end = local_now(n) + reply * 2 + final_air;
        const bool fits = exchange_end <= start_local + slot_len - guard;
        if (is_first && ranging_due(k) && n.parent && n.clock.rate_estimate_ppm && fits) {
            start_ranging(n, k);
            const SimTime resume = exchange_end + kFrameGap + 1us;
            schedule_local(n, resume, [this, k, slot, start_local](Node& node) {
                continue_burst(node, node.zone_channel, k, slot, start_local, true);
            });
            return;
        }
        // Orphaned forwarders keep their heartbeat so neighbours stay up.
        if (leaf && (n.queue.empty() || !n.parent)) return;
        continue_burst(n, n.zone_channel, k, slot, start_local, false);
    }

    /// Resumes a burst once a frame of `len` bytes sent now has ended.
    void burst_after(Node& n, Channel ch, std::uint64_t k, std::size_t slot, SimTime start_local, std::size_t len) {
        const SimTime next = local_now(n) + medium.airtime(len) + kFrameGap;
        schedule_local(n, next, [this, ch, k, slot, start_local](Node& node) {
            continue_burst(node, ch, k, slot, start_local, true);
        });
    }

    void continue_burst(Node& n, Channel ch, std::uint64_t k, std::size_t slot, SimTime start_local, bool sent_any) {
        const SimTime now_local = local_now(n);
        const SimTime limit = start_local + slot_len - guard;
        const std::size_t room = fitting_bytes(limit - now_local);
        if (room < phy::kMacHeaderBytes + 1) return;
        auto frame = next_frame(n, ch, room, sent_any, k);
        if (!frame) return;
        transmit(n, ch, *frame);
        burst_after(n, ch, k, slot, start_local, frame->size());
    }

    std::optional<std::vector<std::uint8_t>> next_frame(Node& n, Channel ch, std::size_t room, bool sent_any,
                                                        std::uint64_t k) {
        if (!n.leads() && n.forwards() && n.relay_pending) {
            if (auto b = relayed_beacon(n, room)) return b;
        }
        if (n.forwards()) {
            if (auto l = lsa_frame(n, ch, room)) return l;
        }
        if (auto d = data_frame(n, ch, room, k)) return d;
        if (!sent_any && !n.leads() && n.forwards()) return relayed_beacon(n, room);
        return std::nullopt;
    }

    // ----------------------------------------------------------- link state

    void update_own_lsa(Node& n) {
        if (!n.forwards()) return;
        const std::uint32_t base = static_cast<std::uint32_t>(current_superframe() << 8);
        n.lsa_version = std::max(n.lsa_version + 1, base);
        mesh::LinkStateAdvert lsa{n.cfg.id, n.lsa_version, true, {}};
        for (const auto& [id, s] : n.neighbors) lsa.neighbors.push_back({id, s.quality});
        n.lsdb.update(lsa);
        for (Channel c : listening(n)) n.flood[c].insert(n.cfg.id);
        n.routes_dirty = true;
    }

    void flood_all(Node& n) {
        for (Channel c : listening(n)) {
            for (const auto& [origin, lsa] : n.lsdb.adverts()) n.flood[c].insert(origin);
        }
    }

    std::optional<std::vector<std::uint8_t>> lsa_frame(Node& n, Channel ch, std::size_t room) {
        auto it = n.flood.find(ch);
        if (it == n.flood.end() || it->second.empty() || room <= phy::kMacHeaderBytes + 1) return std::nullopt;
        std::size_t budget = std::min(room - phy::kMacHeaderBytes, phy::kMaxMacPayload) - 1;
        std::vector<std::uint8_t> payload{0};
        auto& pending = it->second;
        // own advert first
        std::vector<NodeId> order;
        if (pending.contains(n.cfg.id)) order.push_back(n.cfg.id);
        for (NodeId o : pending) {
            if (o != n.cfg.id) order.push_back(o);
        }
        for (NodeId origin : order) {
            auto a = n.lsdb.adverts().find(origin);
            if (a == n.lsdb.adverts().end()) {
                pending.erase(origin);
                continue;
            }
            auto bytes = mesh::encode(a->second, phy::kMaxMacPayload - 2);
            if (bytes.size() + 1 > budget) {
                if (payload.size() == 1 && origin == n.cfg.id && budget > mesh::kLsaFixedBytes + 1) {
                    bytes = mesh::encode(a->second, budget - 1);
                } else {
                    continue;
                }
            }
            payload.push_back(static_cast<std::uint8_t>(bytes.size()));
            payload.insert(payload.end(), bytes.begin(), bytes.end());
            budget -= bytes.size() + 1;
            ++payload[0];
            pending.erase(origin);
        }
        if (payload[0] == 0) return std::nullopt;
        ++metrics.lsa_frames;
        const std::uint16_t pan = ch == kBackbone ? kBackbonePan : n.pan;
        return make_frame(n, FrameType::link_state, kBroadcast, pan, std::move(payload));
    }

    void on_link_state(Node& n, const phy::Frame& f) {
        if (!n.forwards()) return;
        phy::ByteReader r(f.payload);
        const std::size_t count = r.u8();
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t len = r.u8();
            const auto rest = r.rest();
            if (rest.size() < len) return;
            const auto lsa = mesh::decode_lsa(rest.subspan(0, len));
            for (std::size_t j = 0; j < len; ++j) r.u8();
            if (lsa.origin == n.cfg.id) {
                if (lsa.version > n.lsa_version) {
                    n.lsa_version = lsa.version;
                    update_own_lsa(n);
                }
                continue;
            }
            if (n.lsdb.update(lsa)) {
                n.routes_dirty = true;
                for (Channel c : listening(n)) n.flood[c].insert(lsa.origin);
            }
        }
    }

    const mesh::RouteTable& routes_of(Node& n) {
        if (n.routes_dirty) {
            auto g = n.lsdb.graph(current_superframe());
            if (!g.has_vertex(n.cfg.id)) g.add_vertex(n.cfg.id, n.forwards());
            n.routes = mesh::compute_routes(g, n.cfg.id);
            n.routes_dirty = false;
        }
        return n.routes;
    }

    std::optional<NodeId> next_hop(Node& n, NodeId dst) {
        if (!n.forwards()) return n.parent;
        const auto& table = routes_of(n);
        auto it = table.find(dst);
        if (it == table.end()) return std::nullopt;
        return it->second.next_hop;
    }

    bool is_leader_id(NodeId id) const { return nodes.at(id).leads(); }

    Channel channel_to(const Node& n, NodeId hop) const {
        return n.leads() && is_leader_id(hop) ? kBackbone : n.zone_channel;
    }

    // ------------------------------------------------------------------ data

    std::optional<std::vector<std::uint8_t>> data_frame(Node& n, Channel ch, std::size_t room, std::uint64_t k) {
        for (auto it = n.queue.begin(); it != n.queue.end();) {
            const auto hop = next_hop(n, it->packet.dst);
            if (!hop) {
                if (k > it->since + kUnreachableHold) {
                    drop(n, it->packet, "unreachable");
                    it = n.queue.erase(it);
                } else {
                    ++it;
                }
                continue;
            }
            if (channel_to(n, *hop) != ch) {
                ++it;
                continue;
            }
            auto payload = mesh::encode(it->packet);
            if (payload.size() + phy::kMacHeaderBytes > room) {
                ++it;
                continue;
            }
            const std::uint16_t pan = ch == kBackbone ? kBackbonePan : n.pan;
            auto frame = make_frame(n, FrameType::data, *hop, pan, std::move(payload), it->kind);
            n.relayed.insert({it->packet.src, it->packet.sequence});
            if (tracing(engine::Trace::Level::full)) {
                record(n.cfg.id, "relay",
                       Details()("src", it->packet.src)("seq", it->packet.sequence)("dst", it->packet.dst)("via", *hop),
                       engine::Trace::Level::full);
            }
            n.queue.erase(it);
            return frame;
        }
        return std::nullopt;
    }

    void drop(Node& n, const mesh::MeshPacket& p, const std::string& reason) {
        ++metrics.drops[reason];
        if (tracing()) record(n.cfg.id, "drop", Details()("src", p.src)("seq", p.sequence)("dst", p.dst)("reason", reason));
    }

    void enqueue(Node& n, mesh::MeshPacket p, phy::AdaptationKind kind) {
        if (n.queue.size() >= kQueueLimit) {
            drop(n, p, "queue-full");
            return;
        }
        n.queue.push_back({std::move(p), kind, current_superframe()});
    }

    void generate(std::size_t i) {
        auto& fs = flows[i];
        const auto& f = fs.cfg;
        const double t = to_seconds(sim.now());
        const SimTime next = sim.now() + from_ns(f.period_ms * 1e6);
        if ((!f.stop_s || to_seconds(next) < *f.stop_s) && next <= end) {
            sim.schedule(next, kBroadcast, [this, i] { generate(i); });
        }
        if (f.stop_s && t >= *f.stop_s) return;
        auto& n = nodes.at(f.src);
        if (!n.alive) return;

        const std::uint32_t label = (fs.counter++ % 0xFFFFFU) + 1;
        adaptation::Ipv6Header h;
        h.flow_label = label;
        h.payload_length = static_cast<std::uint16_t>(8 + f.size);
        h.next_header = kUdp;
        h.hop_limit = 64;
        h.src = adaptation::mesh_local_from_mac(f.src);
        h.dst = adaptation::mesh_local_from_mac(f.dst);
        std::vector<std::uint8_t> payload;
        phy::ByteWriter w(payload);
        const auto port = static_cast<std::uint16_t>(kUdpPortBase + i);
        w.u8(static_cast<std::uint8_t>(port >> 8));
        w.u8(static_cast<std::uint8_t>(port));
        w.u8(0x16);
        w.u8(0x33);
        w.u8(static_cast<std::uint8_t>(h.payload_length >> 8));
        w.u8(static_cast<std::uint8_t>(h.payload_length));
        w.u16(0);
        for (std::size_t b = 0; b < f.size; ++b) w.u8(static_cast<std::uint8_t>(n.rng()));

        const auto units = adaptation::encode_datagram(h, payload, {f.src, f.dst}, n.next_tag++, kFragmentBudget);
        if (n.queue.size() + units.size() > kQueueLimit) {
            ++metrics.drops["queue-full"];
            ++metrics.flows[i].generated;
            return;
        }
        ++metrics.flows[i].generated;
        fs.pending[label] = sim.now();
        for (const auto& u : units) {
            mesh::MeshPacket p{f.src, f.dst, mesh::kDefaultTtl, n.next_sequence++, u.bytes};
            n.seen.insert(p.src, p.sequence);
            n.relayed.insert({p.src, p.sequence});
            enqueue(n, std::move(p), u.kind);
        }
        if (tracing()) record(f.src, "generate", Details()("flow", i)("label", label)("units", units.size()));
    }

    void on_data(Node& n, const phy::Frame& f, NodeId sender) {
        if (f.header.dst != n.cfg.id) return;
        if (!admit(n, sender)) return;
        mesh::MeshPacket p;
        try {
            p = mesh::decode_packet(f.payload);
        } catch (const std::exception&) {
            return;
        }
        const bool was_relayed = n.relayed.contains({p.src, p.sequence});
        auto action = mesh::forward(p, n.cfg.id, n.forwards(), routes_of(n), n.seen);
        switch (action.kind) {
        case mesh::ForwardKind::deliver:
            deliver(n, action.packet, f.header.adaptation);
            break;
        case mesh::ForwardKind::relay:
            if (!n.forwards()) {
                ++metrics.role_violations;
                throw InvariantViolation("node " + std::to_string(n.cfg.id) + " relayed without forwarding role");
            }
            enqueue(n, std::move(action.packet), f.header.adaptation);
            break;
        case mesh::ForwardKind::drop:
            if (action.reason == "duplicate" && was_relayed) {
                ++metrics.loops;
                if (tracing()) record(n.cfg.id, "loop", Details()("src", p.src)("seq", p.sequence));
            }
            if (action.reason == "unreachable" && n.forwards() && p.ttl > 1) {
                --action.packet.ttl;
                enqueue(n, std::move(action.packet), f.header.adaptation);
                break;
            }
            drop(n, action.packet, action.reason);
            break;
        }
    }

    void deliver(Node& n, const mesh::MeshPacket& p, phy::AdaptationKind kind) {
        const auto out = n.reassembler.add({p.src, p.dst}, kind, p.payload, sim.now());
        if (out.status == adaptation::Reassembler::Status::discarded) {
            drop(n, p, "reassembly");
            return;
        }
        if (out.status != adaptation::Reassembler::Status::delivered) return;
        adaptation::Ipv6Header h;
        try {
            h = adaptation::parse_ipv6(out.datagram);
        } catch (const adaptation::AdaptationError&) {
            drop(n, p, "malformed");
            return;
        }
        if (out.datagram.size() < adaptation::kIpv6HeaderBytes + 2) return;
        const std::size_t port = (std::size_t{out.datagram[40]} << 8) | out.datagram[41];
        if (port < kUdpPortBase) return;
        const std::size_t i = port - kUdpPortBase;
        if (i >= flows.size() || flows[i].cfg.dst != n.cfg.id) return;
        auto it = flows[i].pending.find(h.flow_label);
        if (it == flows[i].pending.end()) return;
        const SimTime generated = it->second;
        flows[i].pending.erase(it);
        auto& fm = metrics.flows[i];
        ++fm.delivered;
        const double latency_ms = to_ns(sim.now() - generated) * 1e-6;
        fm.latency_sum_ms += latency_ms;
        fm.latency_max_ms = std::max(fm.latency_max_ms, latency_ms);
        for (auto& kr : metrics.kills) {
            if (generated >= SimTime{from_ns(kr.at_s * 1e9)} && !kr.recovery_ms.contains(i)) {
                kr.recovery_ms[i] = to_ns(sim.now() - SimTime{from_ns(kr.at_s * 1e9)}) * 1e-6;
            }
        }
        if (tracing()) {
            record(n.cfg.id, "deliver",
                   Details()("flow", i)("label", h.flow_label)("latency_us", std::llround(latency_ms * 1e3)));
        }
    }

    // ---------------------------------------------------------------- policy

    std::optional<ranging::RangeResult> proof_for(const Node& n, NodeId peer) const {
        auto it = n.proofs.find(peer);
        if (it == n.proofs.end()) return std::nullopt;
        if (current_superframe() > it->second.superframe + cfg.ranging.proof_validity) return std::nullopt;
        return it->second.result;
    }

    bool admit(Node& n, NodeId sender) {
        const auto& s = nodes.at(sender);
        auto deny = [&](const std::string& reason) {
            ++metrics.policy_denials[reason];
            ++metrics.drops["policy"];
            if (tracing()) record(n.cfg.id, "policy-deny", Details()("from", sender)("reason", reason));
            return false;
        };
        security::RffVerdict rff = security::RffVerdict::unknown;
        if (s.cfg.role == mesh::Role::smart_device) {
            const auto& z = zones.at(s.zone);
            if (!z.associated.contains(sender)) return deny("authentication");
            rff = security::RffVerdict::accept;
        }
        auto bucket = n.buckets.try_emplace(sender, s.policy.max_frames_per_superframe).first;
        const auto verdict = security::admit(s.policy, proof_for(n, sender), bucket->second, current_superframe(), rff);
        if (!verdict.allowed()) return deny(verdict.reason);
        return true;
    }

    // --------------------------------------------------------------- ranging

    phy::ToaPair toa_pair(Node& receiver, const engine::Reception& rec) {
        const auto d = attacks.displacement(phy::Link(rec.tx->sender, receiver.cfg.id));
        return phy::measure_toa_pair(rec.tx->start, rec.arrival_start, noise, d, receiver.rng);
    }

    void start_ranging(Node& n, std::uint64_t k) {
        const NodeId peer = *n.parent;
        Initiated s{ranging::RangingSession(n.cfg.id, peer, cfg.ranging.tau_ns), n.next_session++, local_now(n), k, false};
        s.session.record(ranging::RangingSession::Stamp::t1, s.t1_local);
        sessions[{n.cfg.id, s.id}] = SessionStatus::started;
        ++metrics.ranging_started;
        transmit(n, n.zone_channel,
                 make_frame(n, FrameType::ranging_poll, peer, n.pan, ranging::encode(ranging::PollMessage{s.id})));
        n.initiated = std::move(s);
    }

    void expire_sessions(Node& n, std::uint64_t k) {
        if (n.initiated && n.initiated->superframe < k) {
            auto it = sessions.find({n.cfg.id, n.initiated->id});
            if (it != sessions.end() && it->second == SessionStatus::started) {
                ++metrics.ranging_timeouts;
                sessions.erase(it);
            } else if (it != sessions.end()) {
                sessions.erase(it);
            }
            n.initiated.reset();
        }
        std::erase_if(n.responding, [k](const auto& e) { return e.second.superframe < k; });
    }

    void detected(Node& n, NodeId initiator, std::uint8_t id, NodeId peer, const std::string& stage) {
        sessions[{initiator, id}] = SessionStatus::invalidated;
        ++metrics.ranging_invalidated;
        ++metrics.attack_detections;
        if (tracing()) record(n.cfg.id, "attack-detected", Details()("peer", peer)("stage", stage));
    }

    void on_poll(Node& n, const phy::Frame& f, const engine::Reception& rec) {
        if (f.header.dst != n.cfg.id || !synced(n)) return;
        const NodeId child = f.header.src;
        const auto m = ranging::decode_poll(f.payload);
        Responding r{ranging::RangingSession(child, n.cfg.id, cfg.ranging.tau_ns), m.session, current_superframe()};
        const auto pair = toa_pair(n, rec);
        if (!r.session.receive(pair)) {
            detected(n, child, m.session, child, "poll");
            return;
        }
        const SimTime t2 = n.clock.local_time(pair.sts);
        const SimTime t3 = t2 + reply;
        r.session.record(ranging::RangingSession::Stamp::t2, t2);
        r.session.record(ranging::RangingSession::Stamp::t3, t3);
        n.responding.insert_or_assign(child, std::move(r));
        schedule_local(n, t3, [this, child, t2, t3, id = m.session](Node& node) {
            auto it = node.responding.find(child);
            if (it == node.responding.end() || it->second.id != id) return;
            it->second.session.advance(ranging::RangingSession::State::responded);
            ranging::ResponseMessage resp{id, ticks(t2), ticks(t3)};
            transmit(node, node.zone_channel,
                     make_frame(node, FrameType::ranging_response, child, node.pan, ranging::encode(resp)), true, true);
        });
    }

    void on_response(Node& n, const phy::Frame& f, const engine::Reception& rec) {
        if (f.header.dst != n.cfg.id || !n.initiated) return;
        auto& s = *n.initiated;
        const auto m = ranging::decode_response(f.payload);
        if (m.session != s.id || f.header.src != s.session.responder()) return;
        const auto pair = toa_pair(n, rec);
        if (!s.session.receive(pair)) {
            detected(n, n.cfg.id, s.id, f.header.src, "response");
            return;
        }
        const SimTime t4 = n.clock.local_time(pair.sts);
        s.session.record(ranging::RangingSession::Stamp::t2, at_ps(m.t2_ps));
        s.session.record(ranging::RangingSession::Stamp::t3, at_ps(m.t3_ps));
        s.session.record(ranging::RangingSession::Stamp::t4, t4);
        s.session.advance(ranging::RangingSession::State::responded);
        const double rate = n.clock.rate_estimate_ppm.value_or(0.0);
        schedule_local(n, t4 + reply, [this, t4, rate, id = s.id](Node& node) {
            if (!node.initiated || node.initiated->id != id) return;
            auto& ss = *node.initiated;
            ss.session.advance(ranging::RangingSession::State::final);
            ranging::FinalMessage fm{id, ticks(ss.t1_local), ticks(t4), static_cast<float>(rate)};
            transmit(node, node.zone_channel,
                     make_frame(node, FrameType::ranging_final, ss.session.responder(), node.pan, ranging::encode(fm)));
            ss.final_sent = true;
            if (auto r = ss.session.complete(rate, 0.0); r && r->valid) {
                node.parent_distance = r->distance_m;
                node.proofs[ss.session.responder()] = {*r, ss.superframe};
            }
        });
    }

    void on_final(Node& n, const phy::Frame& f, const engine::Reception& rec) {
        if (f.header.dst != n.cfg.id) return;
        const NodeId child = f.header.src;
        auto it = n.responding.find(child);
        if (it == n.responding.end()) return;
        const auto m = ranging::decode_final(f.payload);
        if (m.session != it->second.id) return;
        auto& r = it->second;
        const auto pair = toa_pair(n, rec);
        if (!r.session.receive(pair)) {
            detected(n, child, m.session, child, "final");
            n.responding.erase(it);
            return;
        }
        r.session.record(ranging::RangingSession::Stamp::t1, at_ps(m.t1_ps));
        r.session.record(ranging::RangingSession::Stamp::t4, at_ps(m.t4_ps));
        r.session.advance(ranging::RangingSession::State::final);
        const auto result = r.session.complete(m.rate_ppm, n.clock.rate_estimate_ppm.value_or(0.0));
        const std::uint64_t k = r.superframe;
        n.responding.erase(it);
        if (!result) return;
        sessions[{child, m.session}] = SessionStatus::completed;
        if (!result->valid) return;
        ++metrics.ranging_completed;
        const double err = result->distance_m - medium.distance_between(child, n.cfg.id);
        metrics.ranging_error_sum_m += err;
        metrics.ranging_error_sq_sum_m2 += err * err;
        metrics.ranging_error_max_m = std::max(metrics.ranging_error_max_m, std::abs(err));
        n.proofs[child] = {*result, k};
        for (auto& p : metrics.promotions) {
            if (p.winner == n.cfg.id && p.first_beacon_superframe && !p.first_ranging_superframe) {
                p.first_ranging_superframe = current_superframe();
            }
        }
        if (tracing()) {
            record(n.cfg.id, "range",
                   Details()("peer", child)("d_mm", std::llround(result->distance_m * 1e3))("err_mm",
                                                                                      std::llround(err * 1e3)));
        }
        if (n.leads() && nodes.at(child).cfg.role == mesh::Role::smart_device) associate(n, child, *result);
    }

    void associate(Node& leader, NodeId device, const ranging::RangeResult& range) {
        auto& z = zones.at(leader.zone);
        if (z.verdicts.contains(device)) return;
        const auto& dev = nodes.at(device);
        const NodeId claimed = dev.cfg.impersonates.value_or(device);
        security::RffVerdict v = security::RffVerdict::reject;
        double similarity = 0.0;
        if (const auto* rec = z.registry.find(claimed)) {
            const auto sig = phy::ImpairmentSignature::for_device(dev.cfg.device_seed.value_or(dev.cfg.id));
            const auto cir = phy::synthesize_cir(std::max(range.distance_m, 0.5), sig, kRffSnrDb, leader.rng());
            const auto match = security::reidentify(security::extract_embedding(security::preprocess_cir(cir)), *rec,
                                                    dev.policy.rff_threshold);
            v = match.verdict;
            similarity = match.similarity;
        }
        const auto a = mesh::associate_smart_device({device, v, range}, dev.policy);
        z.verdicts[device] = v;
        if (a.accepted) {
            z.associated.insert(device);
            ++metrics.associations_accepted;
        } else {
            ++metrics.associations_rejected[a.reason];
        }
        if (tracing()) {
            record(leader.cfg.id, "associate",
                   Details()("device", device)("claims", claimed)("accepted", a.accepted)(
                       "reason", a.reason.empty() ? "-" : a.reason)("similarity", std::round(similarity * 1e4) / 1e4));
        }
    }

    // ------------------------------------------------------------- receiving

    bool legal(Node& n, const phy::Frame& f, const engine::Reception& rec) {
        if (!synced(n)) return true;
        const auto pos = mac::slot_at(schedule, n.clock.local_time(rec.arrival_start));
        const auto& slot = *pos.slot;
        const NodeId s = f.header.src;
        if (slot.kind != mac::SlotKind::ranging) return slot.owner == s;
        const auto* table = grants_for(n, pos.superframe);
        if (!table) return true;
        const NodeId g = table->grantee[slot.index];
        if (g == kBroadcast) return true;  // no roster yet for this superframe
        if (g == s) {
            if (nodes.at(s).cfg.role != mesh::Role::smart_device) return true;
            auto first = table->first.find(s);
            return first != table->first.end() && first->second == slot.index;
        }
        return f.header.type == FrameType::ranging_response && f.header.dst == g;
    }

    void note_heard(Node& n, NodeId s, const engine::Reception& rec) {
        if (!nodes.contains(s)) return;
        const auto& sender = nodes.at(s);
        if (!n.forwards() && !sender.forwards()) return;
        auto it = n.neighbors.find(s);
        if (it != n.neighbors.end()) {
            it->second.last_heard = rec.arrival_start;
            n.monitor.heard(s);
            return;
        }
        n.neighbors[s] = {rec.arrival_start, quality_byte(rec.distance_m, cfg.radio.max_range_m)};
        n.monitor.heard(s);
        n.routes_dirty = true;
        if (n.forwards()) {
            update_own_lsa(n);
            if (sender.forwards()) flood_all(n);
        }
        if (tracing()) record(n.cfg.id, "link-up", Details()("peer", s));
    }

    void on_receive(Node& n, const engine::Reception& rec) {
        if (!n.alive) return;
        ++metrics.frames_received;
        if (rec.corrupted) {
            ++metrics.frames_corrupted;
            if (tracing(engine::Trace::Level::full)) {
                record(n.cfg.id, "rx-corrupt", Details()("from", rec.tx->sender)("ok", rec.tx->compliant),
                       engine::Trace::Level::full);
            }
            return;
        }
        phy::Frame f;
        try {
            f = phy::Frame::decode(rec.tx->bytes);
        } catch (const phy::FrameError&) {
            return;
        }
        const bool backbone = rec.tx->channel == kBackbone;
        if (f.header.pan_id != (backbone ? kBackbonePan : n.pan)) return;
        if (!legal(n, f, rec)) {
            ++metrics.slot_violations;
            if (tracing()) {
                record(n.cfg.id, "slot-violation",
                       Details()("from", f.header.src)("type", static_cast<int>(f.header.type)));
            }
            return;
        }
        note_heard(n, f.header.src, rec);
        try {
            switch (f.header.type) {
            case FrameType::beacon:
                if (backbone) on_backbone_beacon(n, mac::decode_beacon(f.payload), rec);
                else on_zone_beacon(n, mac::decode_beacon(f.payload), rec, f.header.src);
                break;
            case FrameType::relayed_beacon:
                on_zone_beacon(n, mac::decode_beacon(f.payload), rec, f.header.src);
                break;
            case FrameType::ranging_poll: on_poll(n, f, rec); break;
            case FrameType::ranging_response: on_response(n, f, rec); break;
            case FrameType::ranging_final: on_final(n, f, rec); break;
            case FrameType::link_state: on_link_state(n, f); break;
            case FrameType::data: on_data(n, f, f.header.src); break;
            }
        } catch (const phy::FrameError&) {
        } catch (const std::invalid_argument&) {
        }
    }

    void on_backbone_beacon(Node& n, const mac::Beacon& b, const engine::Reception& rec) {
        if (n.wired || !n.leads() || b.hops != 0) return;
        n.clock = mac::sync_from_beacon(n.clock, b, rec.arrival_start, 0.0);
    }

    void on_zone_beacon(Node& n, const mac::Beacon& b, const engine::Reception& rec, NodeId sender) {
        if (n.leads() || b.zone != static_cast<std::uint8_t>(n.zone)) return;
        if (n.leader && b.leader != *n.leader) {
            if (!n.leader_lost_at) return;
            if (nodes.contains(b.leader) && !nodes.at(b.leader).leads()) return;
            adopt_leader(n, b.leader);
        } else if (!n.leader) {
            n.leader = b.leader;
        }
        if (b.hops == kNoHops) return;
        const std::uint64_t k = current_superframe();
        n.candidates[sender] = {b.hops, rec.distance_m, k};
        const auto want = static_cast<std::uint8_t>(std::min<int>(b.hops + 1, kNoHops));
        if (!n.parent) {
            if (want <= n.hops_bound) set_parent(n, sender, want);
        } else if (sender != *n.parent && want < n.hops) {
            set_parent(n, sender, want);
        }
        if (!n.parent || sender != *n.parent) return;
        n.hops = want;
        if (!n.fresh || b.sequence > *n.fresh) {
            n.fresh = b.sequence;
            n.relay_pending = n.forwards();
            n.latest_roster = b.roster;
        }
        n.clock = mac::sync_from_beacon(n.clock, b, rec.arrival_start, n.parent_distance.value_or(0.0));
    }

    void set_parent(Node& n, NodeId p, std::uint8_t hops) {
        const bool changed = n.parent != p;
        n.parent = p;
        n.hops = hops;
        n.hops_bound = kNoHops;
        if (changed) {
            n.parent_distance.reset();
            n.clock.last_sequence.reset();
            if (tracing()) record(n.cfg.id, "parent", Details()("parent", p)("hops", int{hops}));
        }
    }

    void adopt_leader(Node& n, NodeId leader) {
        n.leader = leader;
        n.leader_lost_at.reset();
        n.excluded.clear();
        n.expected_winner.reset();
        if (tracing()) record(n.cfg.id, "leader", Details()("leader", leader));
    }

    // ------------------------------------------------------- link monitoring

    void slot_tick(std::uint64_t k, std::size_t s) {
        const SimTime slot_start{kSuperframe * static_cast<std::int64_t>(k) + slot_len * static_cast<std::int64_t>(s)};
        const auto& slot = schedule.slots[s];
        for (auto& [id, n] : nodes) {
            if (!n.alive) continue;
            std::optional<NodeId> expected;
            if (slot.kind == mac::SlotKind::beacon) {
                if (!n.leads() && slot.owner && n.leader == slot.owner) expected = slot.owner;
            } else if (slot.kind == mac::SlotKind::leader_data) {
                if (n.leads() && slot.owner != id) expected = slot.owner;
            } else if (n.grants.superframe == k) {
                const NodeId g = n.grants.grantee[s];
                if (g != kBroadcast && g != id && n.leader != g) {
                    const auto& gn = nodes.at(g);
                    if (gn.forwards()) {
                        expected = g;
                    } else if (ranging_due(k)) {
                        auto first = n.grants.first.find(g);
                        if (first != n.grants.first.end() && first->second == s) expected = g;
                    }
                }
            }
            if (!expected) continue;
            auto nb = n.neighbors.find(*expected);
            if (nb == n.neighbors.end() || nb->second.last_heard >= slot_start) continue;
            if (n.monitor.missed(*expected)) link_down(n, *expected, k);
        }
    }

    void link_down(Node& n, NodeId peer, std::uint64_t k) {
        n.neighbors.erase(peer);
        n.monitor.forget(peer);
        n.candidates.erase(peer);
        n.routes_dirty = true;
        update_own_lsa(n);
        ++metrics.link_removals;
        if (tracing()) record(n.cfg.id, "link-down", Details()("peer", peer)("superframe", k));
        if (n.parent == peer) reparent(n, k);
    }

    void reparent(Node& n, std::uint64_t k) {
        const std::uint8_t old = n.hops;
        n.parent.reset();
        std::optional<NodeId> best;
        Candidate bc;
        for (const auto& [id, c] : n.candidates) {
            if (c.heard + 2 < k || !n.neighbors.contains(id)) continue;
            if (c.hops == kNoHops || c.hops + 1 > old) continue;
            const bool better = !best || c.hops < bc.hops || (c.hops == bc.hops && c.quality < bc.quality);
            if (better) {
                best = id;
                bc = c;
            }
        }
        if (best) {
            set_parent(n, *best, static_cast<std::uint8_t>(bc.hops + 1));
        } else {
            n.hops_bound = old;
            if (tracing()) record(n.cfg.id, "orphan", Details()("hops", int{old}));
        }
    }

    // --------------------------------------------------------- leader loss

    void check_leader_loss(Node& n, std::uint64_t k) {
        if (!n.fresh || !n.leader) return;
        if (n.fresh.value() + 3 >= k) return;
        if (!n.leader_lost_at) {
            n.leader_lost_at = k;
            if (tracing()) record(n.cfg.id, "leader-lost", Details()("leader", *n.leader)("superframe", k - 1));
        } else if (n.expected_winner && k >= *n.leader_lost_at + 3) {
            // The expected winner never took over.
            n.excluded.insert(*n.expected_winner);
            n.leader_lost_at = k;
        } else {
            return;
        }
        std::vector<mesh::PromotionCandidate> cands;
        for (const auto& e : n.latest_roster) {
            if (!e.eligible) continue;
            // Every member decides from the same roster, so all agree on the winner.
            cands.push_back({e.id, nodes.at(e.id).cfg.role, true, !n.excluded.contains(e.id),
                             static_cast<double>(e.uptime_s)});
        }
        const auto winner = mesh::promote_leader(cands);
        n.expected_winner = winner;
        if (!winner) {
            auto& z = zones.at(n.zone);
            if (n.hops == 1 && !z.degraded) {
                z.degraded = true;
                metrics.degraded_zones.push_back(z.id);
                record(n.cfg.id, "zone-degraded", Details()("zone", z.id)("leader", *n.leader));
            }
            return;
        }
        if (*winner == n.cfg.id) promote(n, k);
    }

    void promote(Node& n, std::uint64_t k) {
        const NodeId failed = *n.leader;
        auto& z = zones.at(n.zone);
        schedule.reassign(failed, n.cfg.id);
        n.desc.promote();
        n.leader = n.cfg.id;
        n.parent.reset();
        n.hops = 0;
        n.leader_lost_at.reset();
        n.expected_winner.reset();
        n.wired = false;
        std::set<NodeId> drop{n.cfg.id};
        for (const auto& [dev, v] : z.verdicts) {
            if (!z.associated.contains(dev)) drop.insert(dev);
        }
        auto roster = n.latest_roster;
        for (const auto& e : roster) n.member_since[e.id] = sim.now() - from_ns(e.uptime_s * 1e9);
        std::erase_if(roster, [&](const mac::RosterEntry& e) { return drop.contains(e.id); });
        n.latest_roster = roster;
        n.announced = roster;
        z.leader = n.cfg.id;
        medium.set_listening(n.cfg.id, listening(n));
        update_own_lsa(n);
        metrics.promotions.push_back({z.id, failed, n.cfg.id, k - 1, std::nullopt, std::nullopt});
        record(n.cfg.id, "promote", Details()("zone", z.id)("failed", failed)("superframe", k));
    }

    // ------------------------------------------------------ kill and revive

    void kill(Node& n) {
        if (!n.alive) return;
        n.alive = false;
        ++n.epoch;
        medium.set_alive(n.cfg.id, false);
        n.queue.clear();
        metrics.kills.push_back({n.cfg.id, to_seconds(sim.now()), {}});
        record(n.cfg.id, "kill", Details()("role", mesh::to_string(n.desc.role)));
    }

    void revive(Node& n) {
        if (n.alive) return;
        const NodeId id = n.cfg.id;
        const bool keeps_lead = n.leads() && schedule.beacon_slot(id).has_value();
        Node fresh;
        fresh.cfg = n.cfg;
        fresh.policy = n.policy;
        fresh.zone = n.zone;
        fresh.zone_channel = n.zone_channel;
        fresh.pan = n.pan;
        fresh.epoch = n.epoch + 1;
        fresh.rng = n.rng;
        fresh.clock.drift_ppm = n.clock.drift_ppm;
        fresh.lsa_version = n.lsa_version;
        fresh.next_sequence = n.next_sequence;
        fresh.next_tag = n.next_tag;
        const auto role = keeps_lead ? mesh::Role::leader
                                     : (n.cfg.role == mesh::Role::leader ? mesh::Role::full : n.cfg.role);
        fresh.desc = mesh::NodeDescriptor::make(id, role, n.cfg.position);
        if (keeps_lead) {
            fresh.wired = n.wired;
            fresh.leader = id;
            fresh.hops = 0;
            init_leader(fresh, n.announced);
        } else {
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            fresh.clock.offset = Picoseconds{static_cast<std::int64_t>(unit(fresh.rng) * static_cast<double>(sf_ps()))};
        }
        n = std::move(fresh);
        medium.set_alive(id, true);
        medium.set_listening(id, listening(n));
        record(id, "revive", Details()("role", mesh::to_string(n.desc.role)));
        const std::uint64_t k = current_superframe() + 1;
        schedule_plan(n, k);
    }

    // -------------------------------------------------------------- output

    void finish_metrics() {
        const auto& ms = medium.statistics();
        metrics.collisions = ms.collisions;
        metrics.compliant_collisions = ms.compliant_collisions;
        metrics.events = sim.statistics().events_processed;
    }
};

Network::Network(const ScenarioConfig& config) : impl_(std::make_unique<Impl>(config)) {}
Network::~Network() = default;

void Network::open_trace(const std::string& path) { impl_->trace().open(path); }
void Network::close_trace() { impl_->trace().close(); }

void Network::run() { run_until(impl_->end); }

void Network::run_until(SimTime t_end) {
    impl_->start();
    try {
        impl_->sim.run_until(t_end);
    } catch (const engine::CausalityError& e) {
        impl_->finish_metrics();
        throw InvariantViolation(e.what());
    } catch (const engine::FrameTooLarge& e) {
        impl_->finish_metrics();
        throw InvariantViolation(e.what());
    }
    impl_->finish_metrics();
}

SimTime Network::now() const { return impl_->sim.now(); }
const Metrics& Network::metrics() const { return impl_->metrics; }
std::uint64_t Network::trace_digest() const { return impl_->sim.trace().digest(); }
std::uint64_t Network::trace_records() const { return impl_->sim.trace().records(); }
std::uint64_t Network::events_processed() const { return impl_->sim.statistics().events_processed; }
const mac::SuperframeSchedule& Network::schedule() const { return impl_->schedule; }

std::optional<NodeId> Network::leader_of(int zone) const {
    auto it = impl_->zones.find(zone);
    if (it == impl_->zones.end()) return std::nullopt;
    return it->second.leader;
}

std::optional<NodeId> Network::parent_of(NodeId node) const { return impl_->nodes.at(node).parent; }
bool Network::synchronized(NodeId node) const { return impl_->synced(impl_->nodes.at(node)); }
mesh::RouteTable Network::routes(NodeId node) { return impl_->routes_of(impl_->nodes.at(node)); }
mesh::Role Network::role(NodeId node) const { return impl_->nodes.at(node).desc.role; }

std::vector<NodeId> Network::neighbors(NodeId node) const {
    std::vector<NodeId> out;
    for (const auto& [id, s] : impl_->nodes.at(node).neighbors) out.push_back(id);
    return out;
}

std::vector<NodeId> Network::roster(NodeId node) const {
    return roster_ids(impl_->nodes.at(node).effective_roster);
}

std::vector<NodeId> Network::grants(NodeId node, std::uint64_t k) const {
    const auto* g = impl_->grants_for(impl_->nodes.at(node), k);
    return g ? g->grantee : std::vector<NodeId>{};
}

Picoseconds Network::clock_error(NodeId node) const {
    const auto& n = impl_->nodes.at(node);
    return n.clock.local_time(impl_->sim.now()) - impl_->sim.now();
}

std::string Network::metrics_json() const {
    const auto& m = impl_->metrics;
    nlohmann::json j;
    j["scenario"] = impl_->cfg.name;
    j["seed"] = impl_->cfg.seed;
    j["duration_s"] = impl_->cfg.duration_s;
    j["superframes"] = m.superframes;
    j["events"] = m.events;
    j["frames"] = {{"sent", m.frames_sent},
                   {"noncompliant", m.frames_noncompliant},
                   {"received", m.frames_received},
                   {"corrupted", m.frames_corrupted},
                   {"collisions", m.collisions},
                   {"compliant_collisions", m.compliant_collisions},
                   {"link_state", m.lsa_frames}};
    nlohmann::json flows = nlohmann::json::array();
    for (const auto& f : m.flows) {
        flows.push_back({{"generated", f.generated},
                         {"delivered", f.delivered},
                         {"latency_mean_ms", f.delivered ? f.latency_sum_ms / static_cast<double>(f.delivered) : 0.0},
                         {"latency_max_ms", f.latency_max_ms}});
    }
    j["delivery"] = {{"generated", m.datagrams_generated()},
                     {"delivered", m.datagrams_delivered()},
                     {"ratio", m.delivery_ratio()},
                     {"flows", flows}};
    const double n = static_cast<double>(m.ranging_completed);
    j["ranging"] = {{"started", m.ranging_started},
                    {"completed", m.ranging_completed},
                    {"invalidated", m.ranging_invalidated},
                    {"timeouts", m.ranging_timeouts},
                    {"error_mean_m", n > 0 ? m.ranging_error_sum_m / n : 0.0},
                    {"error_rms_m", n > 0 ? std::sqrt(m.ranging_error_sq_sum_m2 / n) : 0.0},
                    {"error_max_m", m.ranging_error_max_m}};
    j["attack_detections"] = m.attack_detections;
    j["policy_denials"] = m.policy_denials;
    j["slot_violations"] = m.slot_violations;
    j["drops"] = m.drops;
    j["routing"] = {{"loops", m.loops}, {"role_violations", m.role_violations}, {"link_removals", m.link_removals}};
    nlohmann::json promos = nlohmann::json::array();
    for (const auto& p : m.promotions) {
        nlohmann::json e{{"zone", p.zone}, {"failed", p.failed}, {"winner", p.winner},
                         {"detected_superframe", p.detected_superframe}};
        e["first_beacon_superframe"] = p.first_beacon_superframe ? nlohmann::json(*p.first_beacon_superframe) : nullptr;
        e["first_ranging_superframe"] =
            p.first_ranging_superframe ? nlohmann::json(*p.first_ranging_superframe) : nullptr;
        promos.push_back(e);
    }
    j["promotions"] = promos;
    j["degraded_zones"] = m.degraded_zones;
    j["associations"] = {{"accepted", m.associations_accepted}, {"rejected", m.associations_rejected}};
    nlohmann::json kills = nlohmann::json::array();
    for (const auto& k : m.kills) {
        nlohmann::json rec = nlohmann::json::object();
        for (const auto& [flow, ms] : k.recovery_ms) rec[std::to_string(flow)] = ms;
        kills.push_back({{"node", k.node}, {"at_s", k.at_s}, {"recovery_ms", rec}});
    }
    j["kills"] = kills;
    char digest[17];
    std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(trace_digest()));
    j["trace"] = {{"records", trace_records()}, {"digest", digest}};
    return j.dump(2) + "\n";
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& dir, const std::string& name) {
    const std::filesystem::path p(name);
    return p.is_absolute() ? p : dir / p;
}

} // namespace

RunArtifacts run_scenario(const ScenarioConfig& config, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    RunArtifacts art;
    art.trace = resolve(out_dir, config.outputs.trace);
    art.metrics = resolve(out_dir, config.outputs.metrics);
    Network net(config);
    if (config.outputs.trace_level != "off") net.open_trace(art.trace.string());
    try {
        net.run();
    } catch (...) {
        net.close_trace();
        throw;
    }
    net.close_trace();
    write_atomic(art.metrics, net.metrics_json());
    if (config.secrecy) {
        const auto& s = *config.secrecy;
        const auto map = secrecy::build_map(s.scenario, s.model, s.seed.value_or(config.seed));
        art.map = resolve(out_dir, config.outputs.map);
        std::ostringstream csv;
        secrecy::write_csv(csv, map);
        write_atomic(*art.map, csv.str());
        auto pgm_path = *art.map;
        pgm_path.replace_extension(".pgm");
        std::ostringstream pgm;
        secrecy::write_pgm(pgm, map);
        write_atomic(pgm_path, pgm.str());
    }
    art.metrics_snapshot = net.metrics();
    art.trace_digest = net.trace_digest();
    return art;
}

} // namespace uwb::scenario
