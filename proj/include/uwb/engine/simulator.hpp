#pragma once

#include "uwb/engine/sim_time.hpp"
#include "uwb/engine/trace.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <queue>
#include <stdexcept>
#include <unordered_set>
#include <vector>

namespace uwb::engine {

/// Thrown when a protocol tries to schedule into the past.
class CausalityError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct EventHandle {
    std::uint64_t seq = 0;
    friend bool operator==(EventHandle, EventHandle) = default;
};

struct Event {
    SimTime fire_time;
    NodeId target = 0;
    std::function<void()> action;
};

struct NodeFrameCounts {
    std::uint64_t transmitted = 0;
    std::uint64_t received = 0;
    std::uint64_t corrupted = 0;
};

struct RunStatistics {
    std::uint64_t events_processed = 0;
    std::map<NodeId, NodeFrameCounts> frames;
};

/// Deterministic discrete-event kernel.
///
/// Events fire in (fire_time, target, insertion sequence) order. The loop
/// is single threaded; actions may schedule or cancel further events.
class Simulator {
public:
    Simulator() = default;

    [[nodiscard]] SimTime now() const { return now_; }

    EventHandle schedule(Event event);
    EventHandle schedule(SimTime at, NodeId target, std::function<void()> action) {
        return schedule(Event{at, target, std::move(action)});
    }
    /// Returns false if the event already fired or was cancelled.
    bool cancel(EventHandle handle);

    /// Processes every event with fire_time <= t_end and leaves the clock
    /// at t_end (or at the last event time, whichever is later).
    RunStatistics run_until(SimTime t_end);

    /// Cumulative statistics over all run_until calls.
    [[nodiscard]] const RunStatistics& statistics() const { return stats_; }
    NodeFrameCounts& frame_counts(NodeId node) { return stats_.frames[node]; }

    [[nodiscard]] std::size_t pending() const { return queue_.size() - cancelled_.size(); }

    Trace& trace() { return trace_; }

private:
    struct Queued {
        std::int64_t time;
        NodeId target;
        std::uint64_t seq;
        std::function<void()> action;
    };
    struct Later {
        bool operator()(const Queued& a, const Queued& b) const {
            if (a.time != b.time) return a.time > b.time;
            if (a.target != b.target) return a.target > b.target;
            return a.seq > b.seq;
        }
    };

    SimTime now_{};
    std::uint64_t next_seq_ = 1;
    std::priority_queue<Queued, std::vector<Queued>, Later> queue_;
    std::unordered_set<std::uint64_t> live_;
    std::unordered_set<std::uint64_t> cancelled_;
    RunStatistics stats_;
    Trace trace_;
};

} // namespace uwb::engine
