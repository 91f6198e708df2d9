#include <doctest.h>

#include "uwb/phy/cir.hpp"
#include "uwb/phy/frame.hpp"
#include "uwb/phy/toa.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <string_view>

using namespace uwb;
using namespace uwb::phy;

namespace {

// Test-side evaluation of the pulse model, written from the model
// definition rather than shared with the library.
Complex oracle_envelope(const ImpairmentSignature& s, double tau) {
    const double sigma = 1.5;
    auto g = [&](double t) { return std::exp(-t * t / (2 * sigma * sigma)); };
    double re = g(tau) * (1 + s.asymmetry * tau / sigma);
    double im = 0;
    for (int m = 1; m <= 3; ++m) {
        const double a = s.ringing_amplitude * std::exp(-s.ringing_decay * m) * g(tau - s.ringing_period * m);
        re += a * std::cos(m * s.ringing_rotation);
        im += a * std::sin(m * s.ringing_rotation);
    }
    return {re, im};
}

std::size_t argmax(const Cir& c) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c.taps.size(); ++k) {
        if (std::abs(c.taps[k]) > std::abs(c.taps[best])) best = k;
    }
    return best;
}

} // namespace

TEST_CASE("CRC-16/KERMIT check value") {
    const std::string_view s = "123456789";
    std::vector<std::uint8_t> bytes(s.begin(), s.end());
    CHECK(crc16_kermit(bytes) == 0x2189);
}

TEST_CASE("frame round trip and header layout") {
    Frame f;
    f.header.type = FrameType::ranging_final;
    f.header.adaptation = AdaptationKind::fragn;
    f.header.has_sts = true;
    f.header.sequence = 0x42;
    f.header.pan_id = 0xBEEF;
    f.header.dst = 0x0102;
    f.header.src = 0x0304;
    f.payload = {1, 2, 3, 4, 5};
    const auto bytes = f.encode();
    REQUIRE(bytes.size() == 16);
    CHECK(bytes[0] == (4 | (2 << 4) | 0x40));
    CHECK(bytes[1] == 0);
    CHECK(bytes[2] == 0x42);
    CHECK(bytes[3] == 0xEF);
    CHECK(bytes[4] == 0xBE);
    const auto back = Frame::decode(bytes);
    CHECK(back.header.type == f.header.type);
    CHECK(back.header.adaptation == f.header.adaptation);
    CHECK(back.header.has_sts);
    CHECK(back.header.sequence == 0x42);
    CHECK(back.header.pan_id == 0xBEEF);
    CHECK(back.header.dst == 0x0102);
    CHECK(back.header.src == 0x0304);
    CHECK(back.payload == f.payload);
}

TEST_CASE("frame size limits and checksum") {
    Frame f;
    f.payload.assign(116, 7);
    CHECK(f.encode().size() == 127);
    f.payload.push_back(7);
    CHECK_THROWS_AS((void)f.encode(), FrameError);
    f.payload.resize(10);
    auto bytes = f.encode();
    bytes.back() ^= 0x01;
    CHECK_THROWS_AS(Frame::decode(bytes), FrameError);
    bytes.back() ^= 0x01;
    bytes[7] ^= 0x80;
    CHECK_THROWS_AS(Frame::decode(bytes), FrameError);
    CHECK_THROWS_AS(Frame::decode(std::span(bytes).first(10)), FrameError);
}

TEST_CASE("synthesized CIR is deterministic") {
    const auto sig = ImpairmentSignature::for_device(17);
    const auto a = synthesize_cir(7.3, sig, 20.0, 99);
    const auto b = synthesize_cir(7.3, sig, 20.0, 99);
    CHECK(a.taps == b.taps);
    CHECK(a.true_toa == b.true_toa);
    const auto c = synthesize_cir(7.3, sig, 20.0, 100);
    CHECK(a.taps != c.taps);
}

TEST_CASE("doubling distance halves the peak magnitude without noise") {
    // Distances whose time of flight is a whole number of 1 ns taps.
    const double tap_m = kSpeedOfLightMPerNs;  // 1 ns per tap
    for (double taps : {10.0, 20.0, 30.0}) {
        const auto sig = ImpairmentSignature::for_device(3);
        const auto near = synthesize_cir(taps * tap_m, sig, std::nullopt, 0);
        const auto far = synthesize_cir(2 * taps * tap_m, sig, std::nullopt, 0);
        const double pn = std::abs(near.taps[argmax(near)]);
        const double pf = std::abs(far.taps[argmax(far)]);
        CHECK(pf == doctest::Approx(pn / 2).epsilon(1e-9));
    }
}

TEST_CASE("synthesizer matches the pulse model evaluated independently") {
    const auto sig = ImpairmentSignature::for_device(5);
    const double d = 10.0;
    const auto cir = synthesize_cir(d, sig, std::nullopt, 0);
    const double peak_pos = d / kSpeedOfLightMPerNs;  // taps of 1 ns
    for (std::size_t k = 0; k < cir.taps.size(); ++k) {
        double tau = static_cast<double>(k) - peak_pos;
        Complex env{};
        for (int w = -1; w <= 1; ++w) env += oracle_envelope(sig, tau + 128.0 * w);
        const double expected = std::abs(env) / d;
        CHECK(std::abs(cir.taps[k]) == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("two devices differ near the peak without noise") {
    int pairs_checked = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto a = ImpairmentSignature::for_device(2 * s);
        const auto b = ImpairmentSignature::for_device(2 * s + 1);
        CHECK(a != b);
        const auto ca = synthesize_cir(10.0, a, std::nullopt, 0);
        const auto cb = synthesize_cir(10.0, b, std::nullopt, 0);
        const auto p = static_cast<long>(argmax(ca));
        double max_diff = 0;
        for (long k = p - 8; k <= p + 8; ++k) {
            max_diff = std::max(max_diff, std::abs(ca.taps[static_cast<std::size_t>(k)] -
                                                   cb.taps[static_cast<std::size_t>(k)]));
        }
        CHECK(max_diff > 1e-4);
        ++pairs_checked;
    }
    CHECK(pairs_checked == 100);
}

TEST_CASE("additive noise meets the requested SNR on average") {
    const auto sig = ImpairmentSignature::for_device(1);
    const auto clean = synthesize_cir(10.0, sig, std::nullopt, 0);
    double signal = 0;
    for (const auto& t : clean.taps) signal += std::norm(t);
    double noise = 0;
    const int runs = 400;
    for (int r = 0; r < runs; ++r) {
        const auto noisy = synthesize_cir(10.0, sig, 20.0, 1000 + r);
        for (std::size_t k = 0; k < noisy.taps.size(); ++k) {
            noise += std::norm(noisy.taps[k] - clean.taps[k]);
        }
    }
    noise /= runs;
    CHECK(10 * std::log10(signal / noise) == doctest::Approx(20.0).epsilon(0.01));
}

TEST_CASE("clean 10 m CIR: both ToA methods within 50 ps") {
    const auto cir = synthesize_cir(10.0, ImpairmentSignature::ideal(), std::nullopt, 0);
    const auto sts = measure_toa(cir, ToaMethod::sts);
    const auto phy = measure_toa(cir, ToaMethod::phy_header);
    CHECK(std::llabs((sts - cir.true_toa).count()) <= 50);
    CHECK(std::llabs((phy - cir.true_toa).count()) <= 50);
}

TEST_CASE("ToA is exact for the ideal pulse across sub-tap positions and window wrap") {
    for (double d = 0.5; d < 80.0; d += 1.37) {
        const auto cir = synthesize_cir(d, ImpairmentSignature::ideal(), std::nullopt, 0);
        const auto toa = measure_toa(cir, ToaMethod::sts);
        CHECK(std::llabs((toa - cir.true_toa).count()) <= 2);
    }
}

TEST_CASE("ToA is invariant to amplitude scaling") {
    const auto sig = ImpairmentSignature::for_device(11);
    auto cir = synthesize_cir(12.5, sig, 25.0, 4);
    const auto base = measure_toa(cir, ToaMethod::sts);
    for (double k : {0.001, 0.5, 3.0, 1e6}) {
        auto scaled = cir;
        for (auto& t : scaled.taps) t *= k;
        CHECK(measure_toa(scaled, ToaMethod::sts) == base);
    }
}

TEST_CASE("undetectable and invalid CIRs") {
    Cir cir;
    cir.taps.assign(128, Complex{});
    CHECK_THROWS_AS(measure_toa(cir, ToaMethod::sts), UndetectableError);
    CHECK_THROWS_AS(validate(cir), InvalidCir);
    cir.taps[3] = {std::nan(""), 0};
    CHECK_THROWS_AS(validate(cir), InvalidCir);
    CHECK_THROWS_AS(synthesize_cir(0.0, {}, std::nullopt, 0), std::invalid_argument);
}

TEST_CASE("attack hooks displace one timeline only") {
    AttackTable table({Link(1, 2)});
    CHECK_THROWS_AS(table.inject(AttackKind::sts_advance, 10.0, Link(1, 3)), UnknownLinkError);
    CHECK_THROWS_AS(table.inject(AttackKind::sts_advance, 0.0, Link(1, 2)), std::invalid_argument);

    table.inject(AttackKind::sts_advance, 10.0, Link(2, 1));
    auto cir = synthesize_cir(10.0, ImpairmentSignature::ideal(), std::nullopt, 0);
    const auto sts0 = measure_toa(cir, ToaMethod::sts);
    const auto phy0 = measure_toa(cir, ToaMethod::phy_header);
    apply(cir, table.displacement(Link(1, 2)));
    CHECK(measure_toa(cir, ToaMethod::sts) == sts0 - Picoseconds{10000});
    CHECK(measure_toa(cir, ToaMethod::phy_header) == phy0);

    AttackTable delay({Link(4, 5)});
    delay.inject(AttackKind::phy_delay, 5.0, Link(4, 5));
    std::mt19937_64 rng(1);
    const auto pair =
        measure_toa_pair(at_ps(0), at_ps(100000), ToaNoise{}, delay.displacement(Link(5, 4)), rng);
    CHECK(pair.sts == at_ps(100000));
    CHECK(pair.phy == at_ps(105000));
}

TEST_CASE("ToA pairs never precede the transmit time") {
    std::mt19937_64 rng(2);
    TimelineDisplacement d;
    d.sts = -Picoseconds{50000};
    const auto pair = measure_toa_pair(at_ps(1000), at_ps(11000), ToaNoise{}, d, rng);
    CHECK(pair.sts == at_ps(1000));
    CHECK(pair.phy == at_ps(11000));
}

TEST_CASE("no attack: discrepancy stays below tau (noise-only Monte Carlo)") {
    std::mt19937_64 rng(7);
    const ToaNoise noise{0.2};  // tau / 5
    double sum2 = 0;
    std::int64_t worst = 0;
    const int trials = 100000;
    for (int i = 0; i < trials; ++i) {
        const auto p = measure_toa_pair(at_ps(0), at_ps(50000000), noise, {}, rng);
        const auto delta = (p.sts - p.phy).count();
        worst = std::max<std::int64_t>(worst, std::llabs(delta));
        sum2 += static_cast<double>(delta) * static_cast<double>(delta);
    }
    CHECK(worst <= 1000);
    CHECK(std::sqrt(sum2 / trials) == doctest::Approx(200.0).epsilon(0.02));
}

TEST_CASE("CIR CSV export") {
    Cir cir;
    cir.taps = {{1, 0}, {0.5, -0.25}};
    std::ostringstream out;
    write_cir_csv(out, cir);
    CHECK(out.str() == "tap,real,imag\n0,1,0\n1,0.5,-0.25\n");
}
