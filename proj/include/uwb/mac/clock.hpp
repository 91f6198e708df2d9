#pragma once

#include "uwb/engine/sim_time.hpp"

#include <cstdint>
#include <optional>

namespace uwb::mac {

inline constexpr std::uint64_t kSyncValiditySuperframes = 5;

/// Free-running node clock with a constant frequency error.
///
/// local_time(t) = t + offset + drift * (t - last_sync). Syncing rewrites
/// the offset and last_sync; the physical drift never changes. The clock
/// also keeps the node's own estimate of its drift, measured from the error
/// accumulated between consecutive syncs, which ranging uses to convert
/// local durations into reference time.
struct LocalClock {
    Picoseconds offset{0};
    double drift_ppm = 0.0;
    SimTime last_sync{};
    bool synced = false;

    std::optional<std::uint32_t> last_sequence;
    std::optional<SimTime> last_reference;
    std::optional<double> rate_estimate_ppm;
    /// Propagation correction applied at the last beacon sync.
    Picoseconds last_propagation{0};

    [[nodiscard]] SimTime local_time(SimTime true_time) const;
    /// Inverse of local_time.
    [[nodiscard]] SimTime true_time(SimTime local) const;
    /// Converts a locally measured duration into reference-clock units using
    /// the drift estimate (identity before one is available).
    [[nodiscard]] double compensate_ns(Picoseconds local_duration) const;
    [[nodiscard]] bool synchronized_at(SimTime true_now,
                                       std::uint64_t validity = kSyncValiditySuperframes) const;
};

/// Sets the clock so that it reads `reference` at true time `at`, updating
/// the drift estimate from the error accumulated since the previous
/// correction. `rate_reference` (defaults to `reference`) is the value the
/// clock should read if nothing but drift had changed since that correction.
LocalClock resync(LocalClock clock, SimTime at, SimTime reference,
                  std::optional<SimTime> rate_reference = std::nullopt);

struct Beacon;

/// Beacon-driven correction: at arrival the local clock is set to the
/// beacon timestamp plus the propagation time over `distance_estimate_m`.
/// A beacon whose sequence number is not newer than the last one seen is
/// stale and leaves the clock unchanged. The drift estimate is computed
/// against the previous propagation correction so a refined distance
/// estimate is not mistaken for drift.
LocalClock sync_from_beacon(const LocalClock& clock, const Beacon& beacon, SimTime arrival,
                            double distance_estimate_m);

} // namespace uwb::mac
