#pragma once

#include "uwb/engine/sim_time.hpp"
#include "uwb/phy/cir.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <utility>

namespace uwb::phy {

/// Dual time-of-arrival estimate for one received ranging message.
struct ToaPair {
    SimTime sts{};
    SimTime phy{};
};

/// Unordered node pair.
struct Link {
    NodeId a = 0;
    NodeId b = 0;
    Link() = default;
    Link(NodeId x, NodeId y) : a(std::min(x, y)), b(std::max(x, y)) {}
    auto operator<=>(const Link&) const = default;
};

enum class AttackKind { sts_advance, phy_delay };

class UnknownLinkError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Net displacement of the two ToA timelines on one link.
struct TimelineDisplacement {
    Picoseconds sts{0};
    Picoseconds phy{0};
};

/// Active ToA manipulation attacks, keyed by link.
class AttackTable {
public:
    AttackTable() = default;
    explicit AttackTable(std::set<Link> known_links) : known_(std::move(known_links)) {}

    void add_link(Link link) { known_.insert(link); }

    /// `magnitude_ns` must be positive. sts_advance moves the STS timeline
    /// earlier, phy_delay moves the PHY-header timeline later. Attacks on
    /// one link accumulate.
    void inject(AttackKind kind, double magnitude_ns, Link link);
    void clear(Link link) { active_.erase(link); }

    [[nodiscard]] TimelineDisplacement displacement(Link link) const;
    [[nodiscard]] bool attacked(Link link) const { return active_.contains(link); }

private:
    std::set<Link> known_;
    std::map<Link, TimelineDisplacement> active_;
};

void apply(Cir& cir, const TimelineDisplacement& d);

/// Measurement noise of the two timelines. `discrepancy_sigma_ns` is the
/// standard deviation of (toa_sts - toa_phy) under no attack; each timeline
/// gets an independent share of sigma / sqrt(2).
struct ToaNoise {
    double discrepancy_sigma_ns = 0.0;
};

/// Produces the ToaPair a receiver reports for a frame whose first path
/// arrived at `arrival`. Both estimates are clamped to the transmit time.
ToaPair measure_toa_pair(SimTime tx_time, SimTime arrival, const ToaNoise& noise,
                         const TimelineDisplacement& displacement, std::mt19937_64& rng);

/// Both timelines read from a synthesized CIR.
ToaPair measure_toa_pair(const Cir& cir, SimTime tx_time);

} // namespace uwb::phy
