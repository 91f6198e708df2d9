#include "uwb/phy/toa.hpp"

#include <cmath>
#include <string>

namespace uwb::phy {

void AttackTable::inject(AttackKind kind, double magnitude_ns, Link link) {
    if (!(magnitude_ns > 0.0)) throw std::invalid_argument("attack magnitude must be positive");
    if (!known_.contains(link)) {
        throw UnknownLinkError("unknown link " + std::to_string(link.a) + "-" +
                               std::to_string(link.b));
    }
    auto& d = active_[link];
    if (kind == AttackKind::sts_advance) d.sts -= from_ns(magnitude_ns);
    else d.phy += from_ns(magnitude_ns);
}

TimelineDisplacement AttackTable::displacement(Link link) const {
    auto it = active_.find(link);
    return it == active_.end() ? TimelineDisplacement{} : it->second;
}

void apply(Cir& cir, const TimelineDisplacement& d) {
    cir.sts_shift += d.sts;
    cir.phy_shift += d.phy;
}

ToaPair measure_toa_pair(SimTime tx_time, SimTime arrival, const ToaNoise& noise,
                         const TimelineDisplacement& displacement, std::mt19937_64& rng) {
    ToaPair pair{arrival + displacement.sts, arrival + displacement.phy};
    if (noise.discrepancy_sigma_ns > 0.0) {
        std::normal_distribution<double> gauss(0.0, noise.discrepancy_sigma_ns / std::sqrt(2.0));
        pair.sts += from_ns(gauss(rng));
        pair.phy += from_ns(gauss(rng));
    }
    pair.sts = std::max(pair.sts, tx_time);
    pair.phy = std::max(pair.phy, tx_time);
    return pair;
}

ToaPair measure_toa_pair(const Cir& cir, SimTime tx_time) {
    ToaPair pair{measure_toa(cir, ToaMethod::sts), measure_toa(cir, ToaMethod::phy_header)};
    pair.sts = std::max(pair.sts, tx_time);
    pair.phy = std::max(pair.phy, tx_time);
    return pair;
}

} // namespace uwb::phy
