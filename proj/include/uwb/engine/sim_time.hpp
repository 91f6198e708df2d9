#pragma once

#include <chrono>
#include <cstdint>
#include <ratio>

namespace uwb {

/// Integer picosecond duration. Signed so differences between timestamps
/// (clock offsets, ToA discrepancies) stay in the same unit.
using Picoseconds = std::chrono::duration<std::int64_t, std::pico>;

/// Tag clock for simulation time. Epoch is the start of the simulation.
struct SimClock {
    using rep = std::int64_t;
    using period = std::pico;
    using duration = Picoseconds;
    using time_point = std::chrono::time_point<SimClock, duration>;
    static constexpr bool is_steady = true;
};

using SimTime = SimClock::time_point;

using NodeId = std::uint16_t;
inline constexpr NodeId kBroadcast = 0xFFFF;

/// Speed of light in metres per nanosecond.
inline constexpr double kSpeedOfLightMPerNs = 0.299792458;

constexpr SimTime at_ps(std::int64_t ps) { return SimTime{Picoseconds{ps}}; }

constexpr std::int64_t ticks(SimTime t) { return t.time_since_epoch().count(); }

inline double to_ns(Picoseconds d) { return std::chrono::duration<double, std::nano>(d).count(); }
inline double to_ns(SimTime t) { return to_ns(t.time_since_epoch()); }
inline double to_seconds(SimTime t) {
    return std::chrono::duration<double>(t.time_since_epoch()).count();
}

/// Rounds a floating nanosecond quantity to the nearest picosecond.
Picoseconds from_ns(double ns);

/// Time of flight over `metres`, rounded to the nearest picosecond.
Picoseconds propagation_delay(double metres);

inline constexpr Picoseconds kSuperframe = std::chrono::milliseconds{100};

} // namespace uwb
