#include "uwb/mac/clock.hpp"

#include "uwb/mac/beacon.hpp"

#include <cmath>

namespace uwb::mac {

SimTime LocalClock::local_time(SimTime t) const {
    const double since = static_cast<double>((t - last_sync).count());
    return t + offset + Picoseconds{std::llround(drift_ppm * 1e-6 * since)};
}

SimTime LocalClock::true_time(SimTime local) const {
    const auto numerator = (local - offset) - last_sync;
    const double since = static_cast<double>(numerator.count()) / (1.0 + drift_ppm * 1e-6);
    return last_sync + Picoseconds{std::llround(since)};
}

double LocalClock::compensate_ns(Picoseconds local_duration) const {
    const double ns = to_ns(local_duration);
    if (!rate_estimate_ppm) return ns;
    return ns / (1.0 + *rate_estimate_ppm * 1e-6);
}

bool LocalClock::synchronized_at(SimTime true_now, std::uint64_t validity) const {
    if (!synced) return false;
    return true_now - last_sync <= kSuperframe * static_cast<std::int64_t>(validity);
}

LocalClock resync(LocalClock clock, SimTime at, SimTime reference,
                  std::optional<SimTime> rate_reference) {
    const SimTime local_now = clock.local_time(at);
    if (clock.synced && clock.last_reference) {
        const SimTime expected = rate_reference.value_or(reference);
        const auto elapsed = expected - *clock.last_reference;
        if (elapsed > Picoseconds{0}) {
            const double error = static_cast<double>((local_now - expected).count());
            clock.rate_estimate_ppm = error / static_cast<double>(elapsed.count()) * 1e6;
        }
    }
    clock.offset = reference - at;
    clock.last_sync = at;
    clock.last_reference = reference;
    clock.synced = true;
    return clock;
}

LocalClock sync_from_beacon(const LocalClock& clock, const Beacon& beacon, SimTime arrival,
                            double distance_estimate_m) {
    if (clock.last_sequence && beacon.sequence <= *clock.last_sequence) return clock;
    const Picoseconds propagation = propagation_delay(distance_estimate_m);
    LocalClock out = resync(clock, arrival, beacon.timestamp + propagation,
                            beacon.timestamp + clock.last_propagation);
    out.last_sequence = beacon.sequence;
    out.last_propagation = propagation;
    return out;
}

} // namespace uwb::mac
