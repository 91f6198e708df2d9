#pragma once

#include "uwb/ranging/ranging.hpp"
#include "uwb/security/fingerprint.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

namespace uwb::security {

/// Per-category key policy. An infinite `max_distance_m` switches the
/// proximity bound off.
struct KeyPolicy {
    double max_distance_m = 10.0;
    std::uint32_t max_frames_per_superframe = 100;
    bool rff_required = false;
    double rff_threshold = kDefaultRffThreshold;

    /// Throws std::invalid_argument on a non-positive distance, a zero frame
    /// budget or a threshold outside [-1, 1].
    void validate() const;
    [[nodiscard]] bool proximity_active() const {
        return max_distance_m < std::numeric_limits<double>::infinity();
    }
};

enum class Decision { allow, deny };

struct PolicyVerdict {
    Decision decision = Decision::deny;
    /// "no-proof-of-proximity", "proximity", "rff" or "rate" when denied.
    std::string reason;
    [[nodiscard]] bool allowed() const { return decision == Decision::allow; }
};

/// Evaluates the policy for one frame on a link. `range` must come from a
/// completed, valid ranging session; an invalidated session never produces
/// one, so it cannot satisfy the proximity check. `frames_this_superframe`
/// counts frames already accepted on the link in the current superframe.
PolicyVerdict enforce_policy(const KeyPolicy& policy, const std::optional<ranging::RangeResult>& range,
                             std::uint32_t frames_this_superframe, RffVerdict rff);

/// Frame budget that refills to capacity at every superframe boundary.
class TokenBucket {
public:
    explicit TokenBucket(std::uint32_t capacity) : capacity_(capacity) {}
    /// Frames accepted so far in `superframe`.
    std::uint32_t used(std::uint64_t superframe);
    /// Takes one token if available.
    bool try_consume(std::uint64_t superframe);
    [[nodiscard]] std::uint32_t capacity() const { return capacity_; }

private:
    std::uint32_t capacity_;
    std::uint64_t superframe_ = 0;
    std::uint32_t used_ = 0;
};

/// enforce_policy plus token accounting: a token is consumed only when the
/// frame is allowed.
PolicyVerdict admit(const KeyPolicy& policy, const std::optional<ranging::RangeResult>& range,
                    TokenBucket& bucket, std::uint64_t superframe, RffVerdict rff);

} // namespace uwb::security
