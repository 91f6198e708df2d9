#include "uwb/engine/radio_medium.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace uwb::engine {

RadioMedium::RadioMedium(Simulator& sim, MediumConfig config) : sim_(sim), config_(config) {}

void RadioMedium::add_node(NodeId node, Position position, std::vector<Channel> listening) {
    auto& s = nodes_[node];
    s.position = position;
    s.listening = std::move(listening);
}

void RadioMedium::set_listening(NodeId node, std::vector<Channel> listening) {
    state(node).listening = std::move(listening);
}

void RadioMedium::set_alive(NodeId node, bool alive) { state(node).alive = alive; }

void RadioMedium::set_handler(NodeId node, Handler handler) {
    state(node).handler = std::move(handler);
}

bool RadioMedium::alive(NodeId node) const { return state(node).alive; }

const Position& RadioMedium::position(NodeId node) const { return state(node).position; }

double RadioMedium::distance_between(NodeId a, NodeId b) const {
    return distance(state(a).position, state(b).position);
}

Picoseconds RadioMedium::delay(NodeId a, NodeId b) const {
    return propagation_delay(distance_between(a, b));
}

Picoseconds RadioMedium::airtime(std::size_t frame_bytes) const {
    const double payload_ps = 8.0 * static_cast<double>(frame_bytes) / config_.datarate_bps * 1e12;
    return config_.preamble + Picoseconds{std::llround(payload_ps)};
}

bool RadioMedium::in_range(NodeId a, NodeId b) const {
    return distance_between(a, b) <= config_.max_range_m;
}

RadioMedium::NodeState& RadioMedium::state(NodeId node) {
    auto it = nodes_.find(node);
    if (it == nodes_.end()) throw std::out_of_range("unknown node " + std::to_string(node));
    return it->second;
}

const RadioMedium::NodeState& RadioMedium::state(NodeId node) const {
    auto it = nodes_.find(node);
    if (it == nodes_.end()) throw std::out_of_range("unknown node " + std::to_string(node));
    return it->second;
}

std::vector<Delivery> RadioMedium::transmit(NodeId sender, std::span<const std::uint8_t> frame,
                                            Channel channel, SimTime t_start, bool compliant) {
    if (frame.size() > kMaxFrameBytes) {
        throw FrameTooLarge("frame of " + std::to_string(frame.size()) +
                            " bytes exceeds the 127-byte limit");
    }
    const NodeState& tx_state = state(sender);
    std::vector<Delivery> out;
    if (!tx_state.alive) return out;

    auto tx = std::make_shared<Transmission>();
    tx->id = next_tx_id_++;
    tx->sender = sender;
    tx->channel = channel;
    tx->start = t_start;
    tx->end = t_start + airtime(frame.size());
    tx->bytes.assign(frame.begin(), frame.end());
    tx->compliant = compliant;
    std::shared_ptr<const Transmission> shared_tx = tx;

    ++stats_.transmissions;
    ++sim_.frame_counts(sender).transmitted;

    for (auto& [rx_id, rx] : nodes_) {
        if (rx_id == sender || !rx.alive) continue;
        if (std::find(rx.listening.begin(), rx.listening.end(), channel) == rx.listening.end()) {
            continue;
        }
        const double d = distance(tx_state.position, rx.position);
        if (d > config_.max_range_m) continue;
        ++stats_.receivers_in_range;

        const SimTime arrival_start = t_start + propagation_delay(d);
        const SimTime arrival_end = arrival_start + (shared_tx->end - shared_tx->start);
        auto corrupted = std::make_shared<bool>(false);

        std::erase_if(rx.active, [&](const Pending& p) { return p.end <= arrival_start; });
        for (auto& other : rx.active) {
            if (other.tx->channel != channel) continue;
            if (other.start < arrival_end && arrival_start < other.end) {
                *other.corrupted = true;
                *corrupted = true;
                ++stats_.collisions;
                if (other.tx->compliant && compliant) ++stats_.compliant_collisions;
            }
        }
        rx.active.push_back(Pending{shared_tx, arrival_start, arrival_end, corrupted});

        const NodeId receiver = rx_id;
        auto handle = sim_.schedule(arrival_end, receiver, [this, receiver, shared_tx, arrival_start,
                                                            arrival_end, d, corrupted] {
            NodeState& r = state(receiver);
            if (!r.alive) return;
            Reception rec{shared_tx, receiver, arrival_start, arrival_end, d, *corrupted};
            ++stats_.deliveries;
            auto& counts = sim_.frame_counts(receiver);
            if (rec.corrupted) {
                ++stats_.corrupted_deliveries;
                ++counts.corrupted;
            } else {
                ++counts.received;
            }
            if (r.handler) r.handler(rec);
        });
        out.push_back(Delivery{receiver, arrival_start, arrival_end, handle});
    }
    return out;
}

} // namespace uwb::engine
