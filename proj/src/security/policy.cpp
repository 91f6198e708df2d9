#include "uwb/security/policy.hpp"

#include <cmath>

namespace uwb::security {

void KeyPolicy::validate() const {
    if (!(max_distance_m > 0.0)) throw std::invalid_argument("max_distance must be positive");
    if (max_frames_per_superframe < 1) {
        throw std::invalid_argument("max_frames_per_superframe must be at least 1");
    }
    if (!(rff_threshold >= -1.0 && rff_threshold <= 1.0)) {
        throw std::invalid_argument("rff_threshold must lie in [-1, 1]");
    }
}

PolicyVerdict enforce_policy(const KeyPolicy& policy, const std::optional<ranging::RangeResult>& range,
                             std::uint32_t frames_this_superframe, RffVerdict rff) {
    PolicyVerdict v;
    if (policy.proximity_active()) {
        if (!range || !range->valid) {
            v.reason = "no-proof-of-proximity";
            return v;
        }
        if (range->distance_m > policy.max_distance_m) {
            v.reason = "proximity";
            return v;
        }
    }
    if (policy.rff_required && rff != RffVerdict::accept) {
        v.reason = "rff";
        return v;
    }
    if (frames_this_superframe >= policy.max_frames_per_superframe) {
        v.reason = "rate";
        return v;
    }
    v.decision = Decision::allow;
    return v;
}

std::uint32_t TokenBucket::used(std::uint64_t superframe) {
    if (superframe != superframe_) {
        superframe_ = superframe;
        used_ = 0;
    }
    return used_;
}

bool TokenBucket::try_consume(std::uint64_t superframe) {
    if (used(superframe) >= capacity_) return false;
    ++used_;
    return true;
}

PolicyVerdict admit(const KeyPolicy& policy, const std::optional<ranging::RangeResult>& range,
                    TokenBucket& bucket, std::uint64_t superframe, RffVerdict rff) {
    auto v = enforce_policy(policy, range, bucket.used(superframe), rff);
    if (v.allowed()) bucket.try_consume(superframe);
    return v;
}

} // namespace uwb::security
