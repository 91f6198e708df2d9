#include "uwb/engine/simulator.hpp"

#include "uwb/engine/radio_medium.hpp"

#include <cmath>
#include <string>

namespace uwb {

Picoseconds from_ns(double ns) { return Picoseconds{std::llround(ns * 1000.0)}; }

Picoseconds propagation_delay(double metres) {
    return from_ns(metres / kSpeedOfLightMPerNs);
}

double distance(const Position& a, const Position& b) {
    return std::hypot(a.x - b.x, a.y - b.y, a.z - b.z);
}

} // namespace uwb

namespace uwb::engine {

EventHandle Simulator::schedule(Event event) {
    if (event.fire_time < now_) {
        throw CausalityError("event scheduled at " + std::to_string(ticks(event.fire_time)) +
                             " ps before current time " + std::to_string(ticks(now_)) + " ps");
    }
    const std::uint64_t seq = next_seq_++;
    queue_.push(Queued{ticks(event.fire_time), event.target, seq, std::move(event.action)});
    live_.insert(seq);
    return EventHandle{seq};
}

bool Simulator::cancel(EventHandle handle) {
    if (live_.erase(handle.seq) == 0) return false;
    cancelled_.insert(handle.seq);
    return true;
}

RunStatistics Simulator::run_until(SimTime t_end) {
    RunStatistics run;
    const auto before = stats_.frames;
    while (!queue_.empty() && queue_.top().time <= ticks(t_end)) {
        // priority_queue::top is const; the action is moved out before pop.
        auto& top = const_cast<Queued&>(queue_.top());
        const std::uint64_t seq = top.seq;
        const SimTime when = at_ps(top.time);
        auto action = std::move(top.action);
        queue_.pop();
        if (cancelled_.erase(seq) != 0) continue;
        live_.erase(seq);
        now_ = when;
        ++run.events_processed;
        ++stats_.events_processed;
        if (action) action();
    }
    if (now_ < t_end) now_ = t_end;
    for (const auto& [node, counts] : stats_.frames) {
        NodeFrameCounts delta = counts;
        if (auto it = before.find(node); it != before.end()) {
            delta.transmitted -= it->second.transmitted;
            delta.received -= it->second.received;
            delta.corrupted -= it->second.corrupted;
        }
        run.frames[node] = delta;
    }
    return run;
}

} // namespace uwb::engine
