#include <doctest.h>

#include "uwb/security/benchmark.hpp"
#include "uwb/security/fingerprint.hpp"
#include "uwb/security/policy.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace uwb;
using namespace uwb::security;
using phy::Complex;

namespace {

// Direct evaluation of the band-limited delay, no FFT.
std::vector<Complex> oracle_shift(const std::vector<Complex>& x, double shift) {
    const std::size_t n = x.size();
    const long double pi = std::numbers::pi_v<long double>;
    std::vector<std::complex<long double>> spec(n);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t t = 0; t < n; ++t) {
            const long double a = -2 * pi * (long double)(k * t % n) / (long double)n;
            spec[k] += std::complex<long double>(x[t].real(), x[t].imag()) *
                       std::complex<long double>(std::cos(a), std::sin(a));
        }
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (n % 2 == 0 && k == n / 2) {
            spec[k] *= std::cos(pi * shift);
            continue;
        }
        const long double f = k < (n + 1) / 2 ? (long double)k : (long double)k - (long double)n;
        const long double a = -2 * pi * f * shift / (long double)n;
        spec[k] *= std::complex<long double>(std::cos(a), std::sin(a));
    }
    std::vector<Complex> out(n);
    for (std::size_t t = 0; t < n; ++t) {
        std::complex<long double> acc{};
        for (std::size_t k = 0; k < n; ++k) {
            const long double a = 2 * pi * (long double)(k * t % n) / (long double)n;
            acc += spec[k] * std::complex<long double>(std::cos(a), std::sin(a));
        }
        acc /= (long double)n;
        out[t] = {(double)acc.real(), (double)acc.imag()};
    }
    return out;
}

phy::Cir scaled(phy::Cir c, double k) {
    for (auto& t : c.taps) t *= k;
    return c;
}

phy::Cir rotated(phy::Cir c, std::size_t by) {
    std::rotate(c.taps.begin(), c.taps.begin() + static_cast<std::ptrdiff_t>(by), c.taps.end());
    return c;
}

Embedding embed(const phy::Cir& c) { return extract_embedding(preprocess_cir(c)); }

Embedding basis(std::size_t i) {
    Embedding e{};
    e[i] = 1.0;
    return e;
}

double max_diff(const Embedding& a, const Embedding& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST_CASE("preprocess normalizes and centres the peak") {
    phy::Cir c;
    c.taps.assign(64, Complex{});
    c.taps[12] = {0.0, -4.0};
    c.taps[13] = {1.0, 1.0};
    const auto p = preprocess_cir(c);
    REQUIRE(p.taps.size() == 64);
    CHECK(p.peak == 32);
    CHECK(std::abs(p.taps[32]) == 1.0);
    CHECK(p.taps[32] == Complex{0.0, -1.0});
    CHECK(p.taps[33] == Complex{0.25, 0.25});

    // Scaling by 3 leaves the processed CIR unchanged.
    const auto q = preprocess_cir(scaled(c, 3.0));
    for (std::size_t k = 0; k < 64; ++k) CHECK(std::abs(q.taps[k] - p.taps[k]) <= 1e-15);

    // Already centred with unit peak: identity.
    phy::Cir centred;
    centred.taps = p.taps;
    const auto again = preprocess_cir(centred);
    CHECK(again.taps == p.taps);

    phy::Cir zero;
    zero.taps.assign(8, Complex{});
    CHECK_THROWS_AS(preprocess_cir(zero), phy::InvalidCir);
    CHECK_THROWS_AS(preprocess_cir(phy::Cir{}), phy::InvalidCir);
}

TEST_CASE("fractional shift matches a direct DFT") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g;
    for (std::size_t n : {16u, 17u, 64u}) {
        std::vector<Complex> x(n);
        for (auto& v : x) v = {g(rng), g(rng)};
        for (double s : {0.3, -0.45, 1.75, 5.0}) {
            const auto got = fractional_shift(x, s);
            const auto want = oracle_shift(x, s);
            for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(got[k] - want[k]) <= 1e-12);
        }
        // An integer shift on an odd length is a plain rotation.
        if (n % 2 == 1) {
            const auto got = fractional_shift(x, 3.0);
            for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(got[k] - x[(k + n - 3) % n]) <= 1e-12);
        }
        CHECK(fractional_shift(x, 0.0) == x);
    }
}

TEST_CASE("embedding is unit norm and deterministic") {
    const auto sig = phy::ImpairmentSignature::for_device(42);
    const auto a = embed(phy::synthesize_cir(7.3, sig, std::nullopt, 0));
    const auto b = embed(phy::synthesize_cir(7.3, sig, std::nullopt, 0));
    CHECK(a == b);
    double norm = 0.0;
    for (double v : a) norm += v * v;
    CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-9);

    const auto noisy = embed(phy::synthesize_cir(7.3, sig, 20.0, 9));
    norm = 0.0;
    for (double v : noisy) norm += v * v;
    CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-9);
}

TEST_CASE("ideal pulse falls back to e0") {
    for (double d : {1.0, 2.37, 9.99, 10.0, 18.4, 29.7}) {
        CAPTURE(d);
        CHECK(embed(phy::synthesize_cir(d, phy::ImpairmentSignature::ideal(), std::nullopt, 0)) ==
              basis(0));
    }
}

TEST_CASE("scale invariance") {
    const auto sig = phy::ImpairmentSignature::for_device(7);
    for (std::optional<double> snr : {std::optional<double>{}, std::optional<double>{20.0}}) {
        const auto c = phy::synthesize_cir(11.2, sig, snr, 3);
        const auto base = embed(c);
        // Powers of two scale without rounding, so the result is bit-exact.
        for (double k : {0.125, 2.0, 1024.0}) CHECK(embed(scaled(c, k)) == base);
        // Other factors round the division by the peak in the last place.
        for (double k : {0.37, 3.0, 1e6}) CHECK(max_diff(embed(scaled(c, k)), base) <= 1e-12);
    }
}

TEST_CASE("circular shift invariance") {
    const auto sig = phy::ImpairmentSignature::for_device(8);
    for (std::optional<double> snr : {std::optional<double>{}, std::optional<double>{20.0}}) {
        const auto c = phy::synthesize_cir(4.4, sig, snr, 5);
        const auto base = embed(c);
        for (std::size_t by : {1u, 17u, 64u, 127u}) CHECK(embed(rotated(c, by)) == base);
    }
}

TEST_CASE("noise-free signature pairs stay below the match threshold") {
    double worst = -1.0;
    for (std::uint64_t i = 0; i < 100; ++i) {
        const auto a = phy::ImpairmentSignature::for_device(2 * i + 1);
        const auto b = phy::ImpairmentSignature::for_device(2 * i + 2);
        const double c = cosine(embed(phy::synthesize_cir(10.0, a, std::nullopt, 0)),
                                embed(phy::synthesize_cir(10.0, b, std::nullopt, 0)));
        worst = std::max(worst, c);
    }
    MESSAGE("max pair cosine " << worst);
    CHECK(worst < 0.9);
}

TEST_CASE("enrollment") {
    const auto e = embed(phy::synthesize_cir(5.0, phy::ImpairmentSignature::for_device(3), std::nullopt, 0));
    std::vector<Embedding> same(10, e);
    const auto rec = enroll(17, same, at_ps(123));
    CHECK(max_diff(rec.anchor, e) <= 1e-15);
    CHECK(rec.device == 17);
    CHECK(rec.samples == 10);
    CHECK(rec.enrolled_at == at_ps(123));

    std::vector<Embedding> nine(9, e);
    CHECK_THROWS_AS(enroll(17, nine), EnrollmentError);

    // Anchor from noisy captures against the clean embedding.
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> dist(2.0, 25.0);
    for (std::uint64_t dev = 100; dev < 120; ++dev) {
        const auto sig = phy::ImpairmentSignature::for_device(dev);
        std::vector<Embedding> samples;
        for (int i = 0; i < 10; ++i) samples.push_back(embed(phy::synthesize_cir(dist(rng), sig, 20.0, rng())));
        const auto r = enroll(static_cast<NodeId>(dev), samples);
        const auto clean = embed(phy::synthesize_cir(10.0, sig, std::nullopt, 0));
        CAPTURE(dev);
        CHECK(cosine(r.anchor, clean) >= 0.95);
    }
}

TEST_CASE("reidentify") {
    EnrollmentRecord rec{1, basis(3), {}, 10};
    auto m = reidentify(basis(3), rec);
    CHECK(m.similarity == 1.0);
    CHECK(m.verdict == RffVerdict::accept);
    m = reidentify(basis(4), rec);
    CHECK(m.similarity == 0.0);
    CHECK(m.verdict == RffVerdict::reject);

    // Exactly at the threshold accepts.
    Embedding q{};
    q[3] = 0.9;
    q[5] = std::sqrt(1.0 - 0.81);
    const double at = cosine(q, rec.anchor);
    CHECK(reidentify(q, rec, at).verdict == RffVerdict::accept);
    CHECK(reidentify(q, rec, std::nextafter(at, 2.0)).verdict == RffVerdict::reject);
}

TEST_CASE("macro F1 on a hand-counted confusion") {
    // class 0: 2 tp, 1 fn (unknown); class 1: 1 tp, 1 fn (labelled 0)
    // precision0 = 2/3, recall0 = 2/3; precision1 = 1, recall1 = 1/2
    const std::vector<std::size_t> truth{0, 0, 0, 1, 1};
    const std::vector<std::optional<std::size_t>> pred{0, 0, std::nullopt, 1, 0};
    const auto r = macro_f1(truth, pred, 2);
    const double f0 = 2.0 / 3.0;
    const double f1 = 2.0 * 1.0 * 0.5 / 1.5;
    CHECK(r.macro_f1 == doctest::Approx((f0 + f1) / 2.0).epsilon(1e-15));
    CHECK(r.unknown == 1);
    CHECK(r.precision[1] == 1.0);
    CHECK(r.recall[1] == 0.5);
}

TEST_CASE("synthetic re-identification benchmark") {
    ReidBenchmarkConfig cfg;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        cfg.seed = seed;
        const auto r = run_reid_benchmark(cfg);
        CAPTURE(seed);
        MESSAGE("macro F1 " << r.macro_f1 << " min same-device similarity " << r.min_true_similarity);
        CHECK(r.macro_f1 >= 0.95);
    }
}

TEST_CASE("batch extraction matches the serial reference") {
    std::vector<phy::Cir> caps;
    for (std::uint64_t i = 0; i < 64; ++i) {
        caps.push_back(phy::synthesize_cir(2.0 + 0.3 * double(i), phy::ImpairmentSignature::for_device(i % 5),
                                           i % 2 ? std::optional<double>(20.0) : std::nullopt, i));
    }
    const auto par = extract_embeddings(caps);
    const auto ser = extract_embeddings_serial(caps);
    REQUIRE(par.size() == ser.size());
    for (std::size_t i = 0; i < par.size(); ++i) CHECK(par[i] == ser[i]);
}

TEST_CASE("registry round trip") {
    Registry reg;
    reg.put({5, embed(phy::synthesize_cir(3.0, phy::ImpairmentSignature::for_device(5), std::nullopt, 0)),
             at_ps(1'000'000), 12});
    reg.put({9, basis(0), at_ps(7), 10});
    std::stringstream io;
    reg.write(io);
    const auto back = Registry::read(io);
    REQUIRE(back.find(5) != nullptr);
    REQUIRE(back.find(9) != nullptr);
    CHECK(back.find(5)->anchor == reg.find(5)->anchor);
    CHECK(back.find(5)->enrolled_at == at_ps(1'000'000));
    CHECK(back.find(5)->samples == 12);
    CHECK(back.find(9)->anchor == basis(0));
    CHECK(back.find(1) == nullptr);

    std::stringstream bad("5,1,2,3\n");
    CHECK_THROWS_WITH_AS(Registry::read(bad), doctest::Contains("line 1"), std::runtime_error);
    std::string row = "\n\n2";
    for (int i = 0; i < 64; ++i) row += i == 10 ? ",x" : ",0.5";
    std::stringstream non_numeric(row + "\n");
    CHECK_THROWS_WITH_AS(Registry::read(non_numeric), doctest::Contains("line 3"), std::runtime_error);
}

TEST_CASE("policy examples") {
    KeyPolicy p;
    ranging::RangeResult near{5.0, 5.0 / kSpeedOfLightMPerNs, true, std::nullopt};
    ranging::RangeResult far{15.0, 15.0 / kSpeedOfLightMPerNs, true, std::nullopt};

    auto v = enforce_policy(p, near, 0, RffVerdict::accept);
    CHECK(v.allowed());
    v = enforce_policy(p, far, 0, RffVerdict::accept);
    CHECK_FALSE(v.allowed());
    CHECK(v.reason == "proximity");
    v = enforce_policy(p, near, 100, RffVerdict::accept);
    CHECK(v.reason == "rate");
    v = enforce_policy(p, std::nullopt, 0, RffVerdict::accept);
    CHECK(v.reason == "no-proof-of-proximity");

    ranging::RangeResult bogus = near;
    bogus.valid = false;
    CHECK(enforce_policy(p, bogus, 0, RffVerdict::accept).reason == "no-proof-of-proximity");

    p.rff_required = true;
    CHECK(enforce_policy(p, near, 0, RffVerdict::reject).reason == "rff");
    CHECK(enforce_policy(p, near, 0, RffVerdict::unknown).reason == "rff");
    p.rff_required = false;
    CHECK(enforce_policy(p, near, 0, RffVerdict::reject).allowed());

    KeyPolicy open;
    open.max_distance_m = std::numeric_limits<double>::infinity();
    CHECK(enforce_policy(open, std::nullopt, 0, RffVerdict::unknown).allowed());

    KeyPolicy broken;
    broken.max_frames_per_superframe = 0;
    CHECK_THROWS(broken.validate());
    broken = KeyPolicy{};
    broken.max_distance_m = 0.0;
    CHECK_THROWS(broken.validate());
    CHECK_NOTHROW(KeyPolicy{}.validate());
}

TEST_CASE("101st frame in a superframe is rate limited") {
    KeyPolicy p;
    TokenBucket bucket(p.max_frames_per_superframe);
    ranging::RangeResult near{5.0, 0.0, true, std::nullopt};
    for (int i = 0; i < 100; ++i) REQUIRE(admit(p, near, bucket, 3, RffVerdict::accept).allowed());
    const auto v = admit(p, near, bucket, 3, RffVerdict::accept);
    CHECK(v.reason == "rate");
    CHECK(admit(p, near, bucket, 4, RffVerdict::accept).allowed());
}

TEST_CASE("accepted frames over any window never exceed window times budget") {
    std::mt19937_64 rng(77);
    std::poisson_distribution<int> offered(7);
    KeyPolicy p;
    p.max_frames_per_superframe = 5;
    TokenBucket bucket(p.max_frames_per_superframe);
    ranging::RangeResult near{1.0, 0.0, true, std::nullopt};
    std::vector<int> accepted;
    for (std::uint64_t sf = 0; sf < 400; ++sf) {
        int a = 0;
        // Skip some superframes entirely so the bucket sees gaps.
        const int n = sf % 13 == 0 ? 0 : offered(rng);
        for (int i = 0; i < n; ++i) a += admit(p, near, bucket, sf, RffVerdict::accept).allowed();
        accepted.push_back(a);
    }
    for (std::size_t w = 1; w <= 20; ++w) {
        for (std::size_t s = 0; s + w <= accepted.size(); ++s) {
            int sum = 0;
            for (std::size_t i = s; i < s + w; ++i) sum += accepted[i];
            REQUIRE(sum <= static_cast<int>(w * p.max_frames_per_superframe));
        }
    }
}

TEST_CASE("invalidated ranging cannot satisfy the proximity bound") {
    ranging::LinkSetup setup;
    setup.distance_m = 3.0;
    setup.attack.sts = -Picoseconds{10000};
    std::mt19937_64 rng(5);
    const auto out = ranging::run_session(setup, rng);
    CHECK(out.state == ranging::RangingSession::State::invalidated);
    CHECK_FALSE(out.result.has_value());
    CHECK(enforce_policy(KeyPolicy{}, out.result, 0, RffVerdict::accept).reason ==
          "no-proof-of-proximity");
}
