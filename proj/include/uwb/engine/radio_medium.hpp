#pragma once

#include "uwb/engine/simulator.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace uwb {

inline constexpr std::size_t kMaxFrameBytes = 127;

struct Position {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    friend bool operator==(const Position&, const Position&) = default;
};

double distance(const Position& a, const Position& b);

} // namespace uwb

namespace uwb::engine {

class FrameTooLarge : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using Channel = std::uint8_t;

struct Transmission {
    std::uint64_t id = 0;
    NodeId sender = 0;
    Channel channel = 0;
    SimTime start{};
    SimTime end{};
    std::vector<std::uint8_t> bytes;
    /// Set by the MAC when the transmission was admitted by its slot rules.
    bool compliant = true;
};

struct Reception {
    std::shared_ptr<const Transmission> tx;
    NodeId receiver = 0;
    SimTime arrival_start{};
    SimTime arrival_end{};
    double distance_m = 0.0;
    bool corrupted = false;
};

struct Delivery {
    NodeId receiver = 0;
    SimTime arrival_start{};
    SimTime arrival_end{};
    EventHandle event;
};

struct MediumConfig {
    double max_range_m = 30.0;
    double datarate_bps = 6.8e6;
    Picoseconds preamble = std::chrono::microseconds{64};
};

struct MediumStatistics {
    std::uint64_t transmissions = 0;
    std::uint64_t deliveries = 0;
    std::uint64_t corrupted_deliveries = 0;
    /// Receiver-side overlaps, counted once per overlapping pair.
    std::uint64_t collisions = 0;
    /// Overlaps in which both transmissions were schedule compliant.
    std::uint64_t compliant_collisions = 0;
    std::uint64_t receivers_in_range = 0;
};

/// Shared radio channel model.
///
/// A receiver on the sender's channel within `max_range_m` gets a delivery
/// event at t_start + d/c + airtime. Receptions that overlap in time at one
/// receiver corrupt each other; there is no capture effect.
class RadioMedium {
public:
    using Handler = std::function<void(const Reception&)>;

    RadioMedium(Simulator& sim, MediumConfig config);

    void add_node(NodeId node, Position position, std::vector<Channel> listening);
    void set_listening(NodeId node, std::vector<Channel> listening);
    void set_alive(NodeId node, bool alive);
    void set_handler(NodeId node, Handler handler);

    [[nodiscard]] bool alive(NodeId node) const;
    [[nodiscard]] const Position& position(NodeId node) const;
    [[nodiscard]] double distance_between(NodeId a, NodeId b) const;
    [[nodiscard]] Picoseconds delay(NodeId a, NodeId b) const;
    [[nodiscard]] Picoseconds airtime(std::size_t frame_bytes) const;
    [[nodiscard]] bool in_range(NodeId a, NodeId b) const;
    [[nodiscard]] const MediumConfig& config() const { return config_; }

    /// Schedules deliveries for every listening in-range receiver.
    /// Throws FrameTooLarge above 127 bytes and std::out_of_range for an
    /// unknown sender.
    std::vector<Delivery> transmit(NodeId sender, std::span<const std::uint8_t> frame,
                                   Channel channel, SimTime t_start, bool compliant = true);

    [[nodiscard]] const MediumStatistics& statistics() const { return stats_; }

private:
    struct Pending {
        std::shared_ptr<const Transmission> tx;
        SimTime start{};
        SimTime end{};
        std::shared_ptr<bool> corrupted;
    };
    struct NodeState {
        Position position;
        std::vector<Channel> listening;
        bool alive = true;
        Handler handler;
        std::deque<Pending> active;
    };

    NodeState& state(NodeId node);
    const NodeState& state(NodeId node) const;

    Simulator& sim_;
    MediumConfig config_;
    std::map<NodeId, NodeState> nodes_;
    std::uint64_t next_tx_id_ = 1;
    MediumStatistics stats_;
};

} // namespace uwb::engine
