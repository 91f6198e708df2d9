#pragma once

#include "uwb/engine/sim_time.hpp"
#include "uwb/mac/clock.hpp"
#include "uwb/phy/toa.hpp"

#include <chrono>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uwb::ranging {

class NonCausalTimestamps : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Single-sided two-way ranging: ((t4 - t1) - (t3 - t2)) / 2, all in ns.
/// Requires t4 > t1 and t3 > t2.
double sstwr_tof(double t1, double t2, double t3, double t4);

inline constexpr double kDefaultTauNs = 1.0;
inline constexpr std::chrono::microseconds kDefaultReplyDelay{200};

enum class Consistency { ok, invalidated };

/// ok iff |toa_sts - toa_phy| <= tau.
Consistency check_toa_consistency(const phy::ToaPair& pair, double tau_ns);

struct RangeResult {
    double distance_m = 0.0;
    double tof_ns = 0.0;
    /// False for a completed exchange whose round trip came out negative.
    bool valid = true;
    std::optional<std::string> invalidation_reason;
};

/// One SS-TWR exchange as seen by a participant.
///
/// Poll (t1 -> t2), response (t3 -> t4), final carrying t1/t4 back to the
/// responder. Timestamps are in the local clock of the node that took them.
/// Every received message passes through check_toa_consistency; the first
/// failure moves the session to `invalidated` for good.
class RangingSession {
public:
    enum class State { init, responded, final, complete, invalidated };

    RangingSession(NodeId initiator, NodeId responder, double tau_ns = kDefaultTauNs);

    [[nodiscard]] NodeId initiator() const { return initiator_; }
    [[nodiscard]] NodeId responder() const { return responder_; }
    [[nodiscard]] State state() const { return state_; }
    [[nodiscard]] const std::optional<std::string>& reason() const { return reason_; }
    [[nodiscard]] const std::vector<phy::ToaPair>& toa_pairs() const { return pairs_; }

    /// Applies the consistency check to a received message. Returns false
    /// (and invalidates) on a discrepancy above tau.
    bool receive(const phy::ToaPair& pair);

    enum class Stamp { t1, t2, t3, t4 };
    void record(Stamp which, SimTime t);
    /// Moves the state forward; backward moves throw std::logic_error and
    /// an invalidated or complete session ignores the call.
    void advance(State next);
    void invalidate(std::string reason);

    /// final -> complete once all four stamps are known. The rates are the
    /// participants' own drift estimates, used to bring the two local
    /// durations onto the reference time base.
    std::optional<RangeResult> complete(double initiator_rate_ppm = 0.0,
                                        double responder_rate_ppm = 0.0);

    [[nodiscard]] std::optional<SimTime> t1() const { return t1_; }
    [[nodiscard]] std::optional<SimTime> t2() const { return t2_; }
    [[nodiscard]] std::optional<SimTime> t3() const { return t3_; }
    [[nodiscard]] std::optional<SimTime> t4() const { return t4_; }

private:
    NodeId initiator_;
    NodeId responder_;
    double tau_ns_;
    State state_ = State::init;
    std::optional<std::string> reason_;
    std::vector<phy::ToaPair> pairs_;
    std::optional<SimTime> t1_, t2_, t3_, t4_;
};

std::string to_string(RangingSession::State state);

/// Wire payloads of the three ranging frames.
struct PollMessage {
    std::uint8_t session = 0;
};
struct ResponseMessage {
    std::uint8_t session = 0;
    std::int64_t t2_ps = 0;
    std::int64_t t3_ps = 0;
};
struct FinalMessage {
    std::uint8_t session = 0;
    std::int64_t t1_ps = 0;
    std::int64_t t4_ps = 0;
    float rate_ppm = 0.0F;
};

std::vector<std::uint8_t> encode(const PollMessage& m);
std::vector<std::uint8_t> encode(const ResponseMessage& m);
std::vector<std::uint8_t> encode(const FinalMessage& m);
PollMessage decode_poll(std::span<const std::uint8_t> bytes);
ResponseMessage decode_response(std::span<const std::uint8_t> bytes);
FinalMessage decode_final(std::span<const std::uint8_t> bytes);

/// Two-node ranging setup for run_session.
struct LinkSetup {
    double distance_m = 10.0;
    double initiator_drift_ppm = 0.0;
    double responder_drift_ppm = 0.0;
    Picoseconds reply_delay = kDefaultReplyDelay;
    double tau_ns = kDefaultTauNs;
    phy::ToaNoise noise{};
    /// Applied to every message on the link.
    phy::TimelineDisplacement attack{};
};

struct SessionOutcome {
    RangingSession::State state = RangingSession::State::init;
    /// Present only when the session completed.
    std::optional<RangeResult> result;
    std::optional<std::string> reason;
};

/// Runs one poll/response/final exchange over the event engine inside a
/// 1 ms ranging slot. Both clocks are first disciplined by two syncs one
/// superframe apart, which also gives each node its drift estimate.
/// Throws std::invalid_argument if the reply delay does not exceed the
/// poll frame's airtime.
SessionOutcome run_session(const LinkSetup& setup, std::mt19937_64& rng);

} // namespace uwb::ranging
