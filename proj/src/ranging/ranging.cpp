#include "uwb/ranging/ranging.hpp"

#include "uwb/engine/radio_medium.hpp"
#include "uwb/engine/simulator.hpp"
#include "uwb/phy/bytes.hpp"
#include "uwb/phy/frame.hpp"

#include <cmath>
#include <cstdlib>
#include <memory>

namespace uwb::ranging {

double sstwr_tof(double t1, double t2, double t3, double t4) {
    if (!(t4 > t1)) throw NonCausalTimestamps("t4 must follow t1");
    if (!(t3 > t2)) throw NonCausalTimestamps("t3 must follow t2");
    return ((t4 - t1) - (t3 - t2)) / 2.0;
}

Consistency check_toa_consistency(const phy::ToaPair& pair, double tau_ns) {
    if (!(tau_ns > 0.0)) throw std::invalid_argument("tau must be positive");
    const auto delta = std::llabs((pair.sts - pair.phy).count());
    return delta <= from_ns(tau_ns).count() ? Consistency::ok : Consistency::invalidated;
}

std::string to_string(RangingSession::State state) {
    switch (state) {
    case RangingSession::State::init: return "init";
    case RangingSession::State::responded: return "responded";
    case RangingSession::State::final: return "final";
    case RangingSession::State::complete: return "complete";
    case RangingSession::State::invalidated: return "invalidated";
    }
    return "?";
}

RangingSession::RangingSession(NodeId initiator, NodeId responder, double tau_ns)
    : initiator_(initiator), responder_(responder), tau_ns_(tau_ns) {
    if (!(tau_ns > 0.0)) throw std::invalid_argument("tau must be positive");
}

bool RangingSession::receive(const phy::ToaPair& pair) {
    if (state_ == State::invalidated || state_ == State::complete) return false;
    pairs_.push_back(pair);
    if (check_toa_consistency(pair, tau_ns_) == Consistency::ok) return true;
    invalidate("toa-discrepancy");
    return false;
}

void RangingSession::record(Stamp which, SimTime t) {
    switch (which) {
    case Stamp::t1: t1_ = t; break;
    case Stamp::t2: t2_ = t; break;
    case Stamp::t3: t3_ = t; break;
    case Stamp::t4: t4_ = t; break;
    }
}

void RangingSession::advance(State next) {
    if (state_ == State::invalidated || state_ == State::complete) return;
    if (next == State::invalidated) {
        invalidate("aborted");
        return;
    }
    if (static_cast<int>(next) < static_cast<int>(state_)) {
        throw std::logic_error("ranging session cannot move from " + to_string(state_) + " to " +
                               to_string(next));
    }
    state_ = next;
}

void RangingSession::invalidate(std::string reason) {
    if (state_ == State::complete || state_ == State::invalidated) return;
    state_ = State::invalidated;
    reason_ = std::move(reason);
}

std::optional<RangeResult> RangingSession::complete(double initiator_rate_ppm,
                                                    double responder_rate_ppm) {
    if (state_ != State::final || !t1_ || !t2_ || !t3_ || !t4_) return std::nullopt;
    const double round = to_ns(*t4_ - *t1_) / (1.0 + initiator_rate_ppm * 1e-6);
    const double reply = to_ns(*t3_ - *t2_) / (1.0 + responder_rate_ppm * 1e-6);
    RangeResult r;
    r.tof_ns = sstwr_tof(0.0, 0.0, reply, round);
    r.distance_m = r.tof_ns * kSpeedOfLightMPerNs;
    if (r.tof_ns < 0.0) {
        r.valid = false;
        r.invalidation_reason = "negative-tof";
    }
    state_ = State::complete;
    return r;
}

std::vector<std::uint8_t> encode(const PollMessage& m) { return {m.session}; }

std::vector<std::uint8_t> encode(const ResponseMessage& m) {
    std::vector<std::uint8_t> out;
    phy::ByteWriter w(out);
    w.u8(m.session);
    w.i64(m.t2_ps);
    w.i64(m.t3_ps);
    return out;
}

std::vector<std::uint8_t> encode(const FinalMessage& m) {
    std::vector<std::uint8_t> out;
    phy::ByteWriter w(out);
    w.u8(m.session);
    w.i64(m.t1_ps);
    w.i64(m.t4_ps);
    w.f32(m.rate_ppm);
    return out;
}

PollMessage decode_poll(std::span<const std::uint8_t> bytes) {
    phy::ByteReader r(bytes);
    return PollMessage{r.u8()};
}

ResponseMessage decode_response(std::span<const std::uint8_t> bytes) {
    phy::ByteReader r(bytes);
    ResponseMessage m;
    m.session = r.u8();
    m.t2_ps = r.i64();
    m.t3_ps = r.i64();
    return m;
}

FinalMessage decode_final(std::span<const std::uint8_t> bytes) {
    phy::ByteReader r(bytes);
    FinalMessage m;
    m.session = r.u8();
    m.t1_ps = r.i64();
    m.t4_ps = r.i64();
    m.rate_ppm = static_cast<float>(r.f32());
    return m;
}

namespace {

constexpr NodeId kInitiator = 1;
constexpr NodeId kResponder = 2;

std::vector<std::uint8_t> frame_bytes(phy::FrameType type, NodeId src, NodeId dst,
                                      std::vector<std::uint8_t> payload) {
    phy::Frame f;
    f.header.type = type;
    f.header.has_sts = true;
    f.header.src = src;
    f.header.dst = dst;
    f.payload = std::move(payload);
    return f.encode();
}

} // namespace

SessionOutcome run_session(const LinkSetup& setup, std::mt19937_64& rng) {
    engine::Simulator sim;
    engine::MediumConfig mc;
    mc.max_range_m = std::max(mc.max_range_m, setup.distance_m + 1.0);
    engine::RadioMedium medium(sim, mc);
    medium.add_node(kInitiator, {0.0, 0.0, 0.0}, {0});
    medium.add_node(kResponder, {setup.distance_m, 0.0, 0.0}, {0});
    const auto poll_bytes =
        frame_bytes(phy::FrameType::ranging_poll, kInitiator, kResponder, encode(PollMessage{0}));
    if (setup.reply_delay <= medium.airtime(poll_bytes.size())) {
        throw std::invalid_argument("reply delay must exceed the poll airtime");
    }

    mac::LocalClock ci;
    ci.drift_ppm = setup.initiator_drift_ppm;
    mac::LocalClock cr;
    cr.drift_ppm = setup.responder_drift_ppm;
    // Two disciplined corrections one superframe apart.
    for (const SimTime at : {at_ps(0), SimTime{kSuperframe}}) {
        ci = mac::resync(ci, at, at);
        cr = mac::resync(cr, at, at);
    }
    const double rate_i = ci.rate_estimate_ppm.value_or(0.0);
    const double rate_r = cr.rate_estimate_ppm.value_or(0.0);

    RangingSession init_view(kInitiator, kResponder, setup.tau_ns);
    RangingSession resp_view(kInitiator, kResponder, setup.tau_ns);
    std::optional<RangeResult> result;

    const SimTime slot_start = SimTime{kSuperframe} + std::chrono::milliseconds{10};
    const SimTime t1_local = slot_start + std::chrono::microseconds{50};
    const SimTime poll_true = ci.true_time(t1_local);

    medium.set_handler(kResponder, [&](const engine::Reception& rec) {
        if (rec.corrupted) return;
        const auto frame = phy::Frame::decode(rec.tx->bytes);
        const auto pair = phy::measure_toa_pair(rec.tx->start, rec.arrival_start, setup.noise,
                                                setup.attack, rng);
        if (!resp_view.receive(pair)) return;
        if (frame.header.type == phy::FrameType::ranging_poll) {
            const SimTime t2 = cr.local_time(pair.sts);
            const SimTime t3 = t2 + setup.reply_delay;
            resp_view.record(RangingSession::Stamp::t2, t2);
            const SimTime t3_true = cr.true_time(t3);
            sim.schedule(t3_true, kResponder, [&, t2, t3, t3_true] {
                resp_view.record(RangingSession::Stamp::t3, t3);
                resp_view.advance(RangingSession::State::responded);
                ResponseMessage m{0, ticks(t2), ticks(t3)};
                medium.transmit(kResponder,
                                frame_bytes(phy::FrameType::ranging_response, kResponder,
                                            kInitiator, encode(m)),
                                0, t3_true);
            });
        } else if (frame.header.type == phy::FrameType::ranging_final) {
            const auto m = decode_final(frame.payload);
            resp_view.record(RangingSession::Stamp::t1, at_ps(m.t1_ps));
            resp_view.record(RangingSession::Stamp::t4, at_ps(m.t4_ps));
            resp_view.advance(RangingSession::State::final);
            result = resp_view.complete(m.rate_ppm, rate_r);
        }
    });

    medium.set_handler(kInitiator, [&](const engine::Reception& rec) {
        if (rec.corrupted) return;
        const auto frame = phy::Frame::decode(rec.tx->bytes);
        if (frame.header.type != phy::FrameType::ranging_response) return;
        const auto pair = phy::measure_toa_pair(rec.tx->start, rec.arrival_start, setup.noise,
                                                setup.attack, rng);
        if (!init_view.receive(pair)) return;
        const auto m = decode_response(frame.payload);
        const SimTime t4 = ci.local_time(pair.sts);
        init_view.record(RangingSession::Stamp::t1, t1_local);
        init_view.record(RangingSession::Stamp::t2, at_ps(m.t2_ps));
        init_view.record(RangingSession::Stamp::t3, at_ps(m.t3_ps));
        init_view.record(RangingSession::Stamp::t4, t4);
        init_view.advance(RangingSession::State::responded);
        const SimTime final_true = ci.true_time(t4 + setup.reply_delay);
        sim.schedule(final_true, kInitiator, [&, t4, final_true] {
            init_view.advance(RangingSession::State::final);
            FinalMessage fm{0, ticks(t1_local), ticks(t4), static_cast<float>(rate_i)};
            medium.transmit(kInitiator,
                            frame_bytes(phy::FrameType::ranging_final, kInitiator, kResponder,
                                        encode(fm)),
                            0, final_true);
        });
    });

    sim.schedule(poll_true, kInitiator, [&] {
        medium.transmit(kInitiator, poll_bytes, 0, poll_true);
    });
    sim.run_until(slot_start + std::chrono::milliseconds{1});

    SessionOutcome out;
    if (init_view.state() == RangingSession::State::invalidated) {
        out.state = init_view.state();
        out.reason = init_view.reason();
    } else if (resp_view.state() == RangingSession::State::invalidated) {
        out.state = resp_view.state();
        out.reason = resp_view.reason();
    } else if (result) {
        out.state = RangingSession::State::complete;
        out.result = result;
    } else {
        out.state = resp_view.state();
        out.reason = "timeout";
    }
    return out;
}

} // namespace uwb::ranging
