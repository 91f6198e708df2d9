#include <doctest.h>

#include "uwb/ranging/ranging.hpp"

#include <cmath>
#include <random>

using namespace uwb;
using namespace uwb::ranging;
using namespace std::chrono_literals;

namespace {

phy::ToaPair pair_ns(double sts, double phy) {
    return {SimTime{from_ns(sts)}, SimTime{from_ns(phy)}};
}

} // namespace

TEST_CASE("SS-TWR examples") {
    const double tof = sstwr_tof(0.0, 33.356, 1033.356, 1066.712);
    CHECK(tof == doctest::Approx(33.356).epsilon(1e-12));
    CHECK(tof * kSpeedOfLightMPerNs == doctest::Approx(10.0).epsilon(1e-4));
    CHECK(sstwr_tof(0, 0, 1000, 1000) == 0.0);
    CHECK_THROWS_AS(sstwr_tof(0, 10, 5, 20), NonCausalTimestamps);
    CHECK_THROWS_AS(sstwr_tof(10, 0, 5, 10), NonCausalTimestamps);
}

TEST_CASE("ToA consistency check") {
    CHECK(check_toa_consistency(pair_ns(1000.0, 1000.3), 1.0) == Consistency::ok);
    CHECK(check_toa_consistency(pair_ns(990.0, 1000.0), 1.0) == Consistency::invalidated);
    CHECK(check_toa_consistency(pair_ns(1000.0, 1001.0), 1.0) == Consistency::ok);
    CHECK(check_toa_consistency(pair_ns(1001.0, 1000.0), 1.0) == Consistency::ok);
    CHECK(check_toa_consistency(pair_ns(1000.0, 1001.001), 1.0) == Consistency::invalidated);
    CHECK_THROWS(check_toa_consistency(pair_ns(0, 0), 0.0));
}

TEST_CASE("session states only move forward") {
    RangingSession s(1, 2);
    CHECK(s.state() == RangingSession::State::init);
    s.advance(RangingSession::State::responded);
    CHECK_THROWS_AS(s.advance(RangingSession::State::init), std::logic_error);
    CHECK_FALSE(s.complete());
    s.advance(RangingSession::State::final);
    CHECK_FALSE(s.complete());  // stamps missing
    s.record(RangingSession::Stamp::t1, at_ps(0));
    s.record(RangingSession::Stamp::t2, at_ps(33356));
    s.record(RangingSession::Stamp::t3, at_ps(1033356));
    s.record(RangingSession::Stamp::t4, at_ps(1066712));
    const auto r = s.complete();
    REQUIRE(r);
    CHECK(r->valid);
    CHECK(r->tof_ns == doctest::Approx(33.356));
    CHECK(r->distance_m == doctest::Approx(r->tof_ns * kSpeedOfLightMPerNs));
    CHECK(s.state() == RangingSession::State::complete);
    CHECK_FALSE(s.complete());
}

TEST_CASE("a failed consistency check invalidates for good") {
    RangingSession s(1, 2, 1.0);
    CHECK(s.receive(pair_ns(1000, 1000.5)));
    CHECK_FALSE(s.receive(pair_ns(990, 1000)));
    CHECK(s.state() == RangingSession::State::invalidated);
    CHECK(s.reason() == "toa-discrepancy");
    s.advance(RangingSession::State::final);
    CHECK(s.state() == RangingSession::State::invalidated);
    CHECK_FALSE(s.complete());
    CHECK_FALSE(s.receive(pair_ns(1000, 1000)));
}

TEST_CASE("negative round trip completes as an invalid result") {
    RangingSession s(1, 2);
    s.record(RangingSession::Stamp::t1, at_ps(0));
    s.record(RangingSession::Stamp::t2, at_ps(0));
    s.record(RangingSession::Stamp::t3, at_ps(1000000));
    s.record(RangingSession::Stamp::t4, at_ps(999000));
    s.advance(RangingSession::State::final);
    const auto r = s.complete();
    REQUIRE(r);
    CHECK_FALSE(r->valid);
    CHECK(r->invalidation_reason == "negative-tof");
}

TEST_CASE("ranging message round trips") {
    const ResponseMessage r{3, -5, 1234567890123};
    const auto rb = decode_response(encode(r));
    CHECK(rb.session == 3);
    CHECK(rb.t2_ps == -5);
    CHECK(rb.t3_ps == 1234567890123);
    const FinalMessage f{4, 77, 88, -19.5F};
    const auto fb = decode_final(encode(f));
    CHECK(fb.t1_ps == 77);
    CHECK(fb.t4_ps == 88);
    CHECK(fb.rate_ppm == -19.5F);
    CHECK(decode_poll(encode(PollMessage{9})).session == 9);
    CHECK_THROWS(decode_final(std::vector<std::uint8_t>{1, 2, 3}));
}

TEST_CASE("10 m link without drift or noise is within 1 mm") {
    std::mt19937_64 rng(1);
    LinkSetup setup;
    setup.distance_m = 10.0;
    const auto out = run_session(setup, rng);
    REQUIRE(out.result);
    CHECK(out.state == RangingSession::State::complete);
    CHECK(std::abs(out.result->distance_m - 10.0) <= 1e-3);
}

TEST_CASE("1000 ns reply with 20 ppm drift: analytic SS-TWR bound") {
    // Timestamps from two free-running clocks, no compensation. The error is
    // (e_i * round - e_r * reply) / 2, bounded by |e_i - e_r| * reply / 2
    // plus a second-order term in the time of flight.
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> drift(-20.0, 20.0);
    const double tof = 10.0 / kSpeedOfLightMPerNs;
    const double reply = 1000.0;
    double worst = 0;
    for (int i = 0; i < 10000; ++i) {
        const double ei = drift(rng) * 1e-6;
        const double er = drift(rng) * 1e-6;
        const double t1 = 0.0;
        const double t2 = 0.0;
        const double t3 = reply;
        const double t4 = (2 * tof + reply / (1 + er)) * (1 + ei);
        const double err = sstwr_tof(t1, t2, t3, t4) - tof;
        const double bound = std::abs(ei - er) * reply / 2 + 2 * tof * 20e-6;
        CHECK(std::abs(err) <= bound + 1e-12);
        worst = std::max(worst, std::abs(err));
    }
    // Relative drift reaches 40 ppm, so the worst case approaches 0.02 ns.
    CHECK(worst <= 0.02 + 2 * tof * 20e-6);
}

TEST_CASE("reply shorter than the poll airtime is rejected by the engine harness") {
    std::mt19937_64 rng(2);
    LinkSetup setup;
    setup.reply_delay = 1000ns;
    CHECK_THROWS_AS(run_session(setup, rng), std::invalid_argument);
}

TEST_CASE("200 us reply with 20 ppm drift and drift compensation") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> drift(-20.0, 20.0);
    for (int i = 0; i < 100; ++i) {
        LinkSetup setup;
        setup.initiator_drift_ppm = drift(rng);
        setup.responder_drift_ppm = drift(rng);
        const auto out = run_session(setup, rng);
        REQUIRE(out.result);
        CHECK(std::abs(out.result->distance_m - 10.0) <= 3e-3);
    }
}

TEST_CASE("sts advance of 10 ns is always invalidated") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        LinkSetup setup;
        setup.noise.discrepancy_sigma_ns = 0.2;
        setup.attack.sts = -Picoseconds{10000};
        const auto out = run_session(setup, rng);
        CHECK(out.state == RangingSession::State::invalidated);
        CHECK_FALSE(out.result);
        CHECK(out.reason == "toa-discrepancy");
    }
}

TEST_CASE("swapping initiator and responder changes little") {
    std::mt19937_64 rng(4);
    LinkSetup a;
    a.initiator_drift_ppm = 12.0;
    a.responder_drift_ppm = -7.0;
    a.noise.discrepancy_sigma_ns = 0.05;
    LinkSetup b = a;
    std::swap(b.initiator_drift_ppm, b.responder_drift_ppm);
    const auto ra = run_session(a, rng);
    const auto rb = run_session(b, rng);
    REQUIRE(ra.result);
    REQUIRE(rb.result);
    // Per-trial noise floor: each timestamp carries sigma/sqrt(2) of noise
    // and the tof averages four of them.
    const double floor_m = 0.05 / std::sqrt(2.0) * kSpeedOfLightMPerNs;
    CHECK(std::abs(ra.result->distance_m - rb.result->distance_m) < 2 * 3 * floor_m);
}
