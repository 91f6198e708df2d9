#include "uwb/phy/cir.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>

namespace uwb::phy {

void validate(const Cir& cir) {
    if (cir.taps.empty()) throw InvalidCir("CIR has no taps");
    bool nonzero = false;
    for (const auto& t : cir.taps) {
        if (!std::isfinite(t.real()) || !std::isfinite(t.imag())) {
            throw InvalidCir("CIR contains non-finite taps");
        }
        nonzero = nonzero || std::norm(t) > 0.0;
    }
    if (!nonzero) throw InvalidCir("CIR has no nonzero tap");
}

ImpairmentSignature ImpairmentSignature::for_device(std::uint64_t device_seed) {
    std::mt19937_64 rng(device_seed ^ 0x5eed'f1a9'0000'0000ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto signed_range = [&](double lo, double hi) {
        const double mag = lo + (hi - lo) * unit(rng);
        return unit(rng) < 0.5 ? -mag : mag;
    };
    ImpairmentSignature s;
    s.asymmetry = signed_range(0.5, 1.2);
    s.ringing_amplitude = 0.4 + 0.4 * unit(rng);
    s.ringing_decay = 0.5 * unit(rng);
    s.ringing_period = 1.6 + 4.4 * unit(rng);
    s.ringing_rotation = 2.0 * std::numbers::pi * unit(rng);
    s.phase_slope = signed_range(0.0, 0.4);
    return s;
}

Complex pulse(const ImpairmentSignature& sig, double tau, const PulseShape& shape) {
    const double sigma = shape.sigma_taps;
    auto gauss = [sigma](double t) { return std::exp(-t * t / (2.0 * sigma * sigma)); };
    Complex envelope = gauss(tau) * (1.0 + sig.asymmetry * tau / sigma);
    // Damped oscillation: echo m is rotated by m times the per-echo phase.
    if (sig.ringing_amplitude != 0.0) {
        for (int m = 1; m <= shape.ringing_echoes; ++m) {
            const double a = sig.ringing_amplitude * std::exp(-sig.ringing_decay * m);
            envelope += std::polar(a, m * sig.ringing_rotation) * gauss(tau - m * sig.ringing_period);
        }
    }
    if (sig.phase_slope == 0.0) return envelope;
    return std::polar(1.0, sig.phase_slope * tau) * envelope;
}

Cir synthesize_cir(double distance_m, const ImpairmentSignature& signature,
                   std::optional<double> snr_db, std::uint64_t seed, const CirOptions& options) {
    if (!(distance_m > 0.0)) throw std::invalid_argument("distance must be positive");
    const auto n = options.taps;
    const double spacing_ps = static_cast<double>(options.tap_spacing.count());
    const double tof_ps = distance_m / kSpeedOfLightMPerNs * 1000.0;
    const double window_ps = spacing_ps * static_cast<double>(n);
    const double window_index = std::floor(tof_ps / window_ps);
    const double peak_pos = (tof_ps - window_index * window_ps) / spacing_ps;

    Cir cir;
    cir.tap_spacing = options.tap_spacing;
    cir.window_start = at_ps(std::llround(window_index * window_ps));
    cir.true_toa = at_ps(std::llround(tof_ps));
    cir.taps.resize(n);

    const double amplitude = 1.0 / distance_m;
    const double carrier_phase =
        std::fmod(-2.0 * std::numbers::pi * options.carrier_hz * tof_ps * 1e-12, 2.0 * std::numbers::pi);
    const Complex rotation = std::polar(amplitude, carrier_phase);
    const double nd = static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) {
        Complex acc{};
        for (int wrap = -1; wrap <= 1; ++wrap) {
            acc += pulse(signature, static_cast<double>(k) - peak_pos + wrap * nd, options.shape);
        }
        cir.taps[k] = rotation * acc;
    }

    if (snr_db) {
        double energy = 0.0;
        for (const auto& t : cir.taps) energy += std::norm(t);
        const double noise_var = energy / (nd * std::pow(10.0, *snr_db / 10.0));
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss(0.0, std::sqrt(noise_var / 2.0));
        for (auto& t : cir.taps) t += Complex{gauss(rng), gauss(rng)};
    }
    return cir;
}

SimTime measure_toa(const Cir& cir, ToaMethod method, double threshold) {
    if (cir.taps.empty()) throw UndetectableError("empty CIR");
    const auto n = cir.taps.size();
    std::vector<double> mag(n);
    std::size_t peak = 0;
    for (std::size_t k = 0; k < n; ++k) {
        mag[k] = std::abs(cir.taps[k]);
        if (!std::isfinite(mag[k])) throw UndetectableError("non-finite CIR tap");
        if (mag[k] > mag[peak]) peak = k;
    }
    if (!(mag[peak] > 0.0)) throw UndetectableError("no tap above leading-edge threshold");
    const double level = threshold * mag[peak];

    // Scan half a window ahead of the peak so pulses straddling tap 0 are
    // found at their true leading edge.
    const std::size_t start = (peak + n - n / 2) % n;
    std::size_t first = peak;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = (start + i) % n;
        if (mag[k] >= level) {
            first = k;
            break;
        }
    }
    std::size_t top = first;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t next = (top + 1) % n;
        if (mag[next] > mag[top]) top = next;
        else break;
    }

    double offset = 0.0;
    const double a = mag[(top + n - 1) % n];
    const double b = mag[top];
    const double c = mag[(top + 1) % n];
    if (a > 0.0 && c > 0.0) {
        const double la = std::log(a), lb = std::log(b), lc = std::log(c);
        const double denom = la - 2.0 * lb + lc;
        if (denom < 0.0) offset = std::clamp(0.5 * (la - lc) / denom, -0.5, 0.5);
    }
    const double position = static_cast<double>(top) + offset;
    const double spacing = static_cast<double>(cir.tap_spacing.count());
    SimTime toa = cir.window_start + Picoseconds{std::llround(position * spacing)};
    toa += method == ToaMethod::sts ? cir.sts_shift : cir.phy_shift;
    return toa;
}

void write_cir_csv(std::ostream& out, const Cir& cir) {
    out << "tap,real,imag\n";
    out.precision(17);
    for (std::size_t k = 0; k < cir.taps.size(); ++k) {
        out << k << ',' << cir.taps[k].real() << ',' << cir.taps[k].imag() << '\n';
    }
}

} // namespace uwb::phy
