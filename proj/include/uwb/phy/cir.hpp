#pragma once

#include "uwb/engine/sim_time.hpp"

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

namespace uwb::phy {

using Complex = std::complex<double>;

inline constexpr std::size_t kDefaultCirTaps = 128;
inline constexpr Picoseconds kDefaultTapSpacing{1000};

/// Channel impulse response estimate.
///
/// `window_start` is the absolute time of tap 0. The two shifts model the
/// separately measurable STS and PHY-header timelines; attack hooks move
/// one without touching the other.
struct Cir {
    std::vector<Complex> taps;
    Picoseconds tap_spacing = kDefaultTapSpacing;
    SimTime window_start{};
    SimTime true_toa{};
    Picoseconds sts_shift{0};
    Picoseconds phy_shift{0};
};

class InvalidCir : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Throws InvalidCir for empty, all-zero or non-finite tap vectors.
void validate(const Cir& cir);

/// Per-device hardware perturbation of the emitted pulse.
///
/// Each parameter is dimensionless: `asymmetry` skews the main lobe,
/// `ringing_amplitude`/`ringing_decay`/`ringing_period` (in taps) and
/// `ringing_rotation` shape the post-cursor echoes (the default rotation of
/// pi alternates their sign) and `phase_slope` is the residual carrier-offset
/// phase rotation per tap.
struct ImpairmentSignature {
    double asymmetry = 0.0;
    double ringing_amplitude = 0.0;
    double ringing_decay = 1.0;
    double ringing_period = 2.5;
    /// Phase advance of each echo over the previous one, radians.
    double ringing_rotation = 3.141592653589793;
    double phase_slope = 0.0;

    /// Deterministic draw for one device.
    static ImpairmentSignature for_device(std::uint64_t device_seed);
    static ImpairmentSignature ideal() { return {}; }

    friend bool operator==(const ImpairmentSignature&, const ImpairmentSignature&) = default;
};

struct PulseShape {
    double sigma_taps = 1.5;
    int ringing_echoes = 3;
};

/// Noise-free complex pulse of `signature` at offset `tau` taps from the
/// peak.
Complex pulse(const ImpairmentSignature& signature, double tau, const PulseShape& shape = {});

struct CirOptions {
    std::size_t taps = kDefaultCirTaps;
    Picoseconds tap_spacing = kDefaultTapSpacing;
    PulseShape shape{};
    /// Carrier frequency used for the distance-dependent global phase.
    double carrier_hz = 6.4896e9;
};

/// Synthesizes a line-of-sight CIR for a link of `distance_m`.
///
/// The main peak sits at (distance / c) modulo the window, its amplitude is
/// 1 / distance, and `snr_db` (energy over all taps) adds complex white
/// noise drawn from `seed`. No noise is added when `snr_db` is empty.
Cir synthesize_cir(double distance_m, const ImpairmentSignature& signature,
                   std::optional<double> snr_db, std::uint64_t seed, const CirOptions& options = {});

enum class ToaMethod { sts, phy_header };

class UndetectableError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kLeadingEdgeThreshold = 0.4;

/// First-path time of arrival.
///
/// The earliest tap reaching `threshold` of the peak magnitude locates the
/// first path; its local maximum is refined to sub-tap precision with a
/// log-parabolic fit. The selected timeline's shift is then applied.
SimTime measure_toa(const Cir& cir, ToaMethod method, double threshold = kLeadingEdgeThreshold);

/// Writes "tap,real,imag" rows with a header line.
void write_cir_csv(std::ostream& out, const Cir& cir);

} // namespace uwb::phy
