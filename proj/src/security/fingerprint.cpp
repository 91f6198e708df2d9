#include "uwb/security/fingerprint.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <istream>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace uwb::security {

namespace {

using phy::Complex;

struct Plans {
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;
};

// FFTW planning is not thread safe; execution with the new-array interface
// is. Plans are made once per length and never destroyed.
const Plans& plans_for(std::size_t n) {
    static std::mutex mutex;
    static std::unordered_map<std::size_t, Plans> cache;
    std::lock_guard lock(mutex);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<Complex> a(n), b(n);
    auto* in = reinterpret_cast<fftw_complex*>(a.data());
    auto* out = reinterpret_cast<fftw_complex*>(b.data());
    const int len = static_cast<int>(n);
    Plans p;
    p.forward = fftw_plan_dft_1d(len, in, out, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    p.backward = fftw_plan_dft_1d(len, in, out, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    return cache.emplace(n, p).first->second;
}

constexpr int kCentroidHalfWidth = 4;
constexpr int kCentroidIterations = 30;

double template_pulse(double tau) {
    const double sigma = phy::PulseShape{}.sigma_taps;
    return std::exp(-tau * tau / (2.0 * sigma * sigma));
}

// Template-weighted energy centroid of the taps around `peak`, in taps.
// The 1.5 gain undoes the pull of the weight toward zero for the ideal
// pulse so the iteration below converges in a few steps.
double centroid_offset(std::span<const Complex> taps, std::size_t peak) {
    const std::size_t n = taps.size();
    double moment = 0.0, mass = 0.0;
    for (int d = -kCentroidHalfWidth; d <= kCentroidHalfWidth; ++d) {
        const auto k = (peak + n + static_cast<std::size_t>(d + static_cast<int>(n))) % n;
        const double w = template_pulse(d) * std::norm(taps[k]);
        moment += w * d;
        mass += w;
    }
    if (!(mass > 0.0)) return 0.0;
    return std::clamp(1.5 * moment / mass, -1.0, 1.0);
}

} // namespace

ProcessedCir preprocess_cir(const phy::Cir& raw, std::size_t peak) {
    phy::validate(raw);
    const std::size_t n = raw.taps.size();
    if (peak >= n) throw std::invalid_argument("peak index outside the CIR");
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double m = std::abs(raw.taps[k]);
        if (m > best) {
            best = m;
            arg = k;
        }
    }
    ProcessedCir p;
    p.peak = peak;
    p.taps.resize(n);
    const std::size_t shift = (peak + n - arg) % n;
    for (std::size_t k = 0; k < n; ++k) p.taps[(k + shift) % n] = raw.taps[k] / best;
    return p;
}

std::vector<Complex> fractional_shift(std::span<const Complex> x, double shift) {
    const std::size_t n = x.size();
    std::vector<Complex> out(x.begin(), x.end());
    if (n == 0 || std::abs(shift) < 1e-12) return out;
    const Plans& plans = plans_for(n);
    std::vector<Complex> spectrum(n);
    fftw_execute_dft(plans.forward,
                     reinterpret_cast<fftw_complex*>(const_cast<Complex*>(out.data())),
                     reinterpret_cast<fftw_complex*>(spectrum.data()));
    const double nd = static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) {
        if (n % 2 == 0 && k == n / 2) {
            spectrum[k] *= std::cos(std::numbers::pi * shift);
            continue;
        }
        const double f = k < n / 2 + n % 2 ? static_cast<double>(k) : static_cast<double>(k) - nd;
        spectrum[k] *= std::polar(1.0, -2.0 * std::numbers::pi * f * shift / nd);
    }
    fftw_execute_dft(plans.backward, reinterpret_cast<fftw_complex*>(spectrum.data()),
                     reinterpret_cast<fftw_complex*>(out.data()));
    for (auto& v : out) v /= nd;
    return out;
}

Embedding extract_embedding(const ProcessedCir& p) {
    const std::size_t n = p.taps.size();
    if (n < 2 * kFeatureHalfWidth || p.peak >= n) {
        throw std::invalid_argument("processed CIR too short for the feature window");
    }
    // Re-centre on the fixed point of the centroid. It is a property of the
    // interpolated pulse, so it does not depend on the sampling phase.
    double mu = 0.0;
    auto y = fractional_shift(p.taps, 0.0);
    for (int it = 0; it < kCentroidIterations; ++it) {
        const double step = centroid_offset(y, p.peak);
        if (std::abs(step) < 1e-10) break;
        mu += step;
        y = fractional_shift(p.taps, -mu);
    }
    const Complex ref = y[p.peak];
    const double ref_mag = std::abs(ref);
    if (!(ref_mag > 0.0)) {
        Embedding e{};
        e[0] = 1.0;
        return e;
    }
    const Complex derotate = std::conj(ref) / (ref_mag * ref_mag);

    Embedding f{};
    for (std::size_t i = 0; i < 2 * kFeatureHalfWidth; ++i) {
        const std::size_t k = (p.peak + n - kFeatureHalfWidth + i) % n;
        const double tau = static_cast<double>(i) - static_cast<double>(kFeatureHalfWidth);
        // Linearised deviations: the in-phase part against the template
        // and the quadrature part, |v| sin(phase). Unlike |v| and arg(v)
        // these stay continuous through zero crossings and phase wraps.
        const Complex v = y[k] * derotate;
        f[i] = v.real() - template_pulse(tau);
        f[2 * kFeatureHalfWidth + i] = v.imag();
    }
    double norm = 0.0;
    for (double v : f) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < kDegenerateNorm) {
        Embedding e{};
        e[0] = 1.0;
        return e;
    }
    for (double& v : f) v /= norm;
    return f;
}

std::vector<Embedding> extract_embeddings_serial(std::span<const phy::Cir> captures) {
    std::vector<Embedding> out;
    out.reserve(captures.size());
    for (const auto& c : captures) out.push_back(extract_embedding(preprocess_cir(c)));
    return out;
}

std::vector<Embedding> extract_embeddings(std::span<const phy::Cir> captures) {
    std::vector<Embedding> out(captures.size());
    if (!captures.empty()) (void)plans_for(captures.front().taps.size());
    const auto count = static_cast<std::ptrdiff_t>(captures.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        out[static_cast<std::size_t>(i)] =
            extract_embedding(preprocess_cir(captures[static_cast<std::size_t>(i)]));
    }
    return out;
}

double cosine(const Embedding& a, const Embedding& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (!(na > 0.0) || !(nb > 0.0)) return 0.0;
    return dot / std::sqrt(na * nb);
}

EnrollmentRecord enroll(NodeId device, std::span<const Embedding> samples, SimTime at,
                        std::size_t min_samples) {
    if (samples.size() < min_samples) {
        throw EnrollmentError("enrollment needs " + std::to_string(min_samples) +
                              " samples, got " + std::to_string(samples.size()));
    }
    Embedding mean{};
    for (const auto& s : samples) {
        for (std::size_t i = 0; i < kEmbeddingDim; ++i) mean[i] += s[i];
    }
    double norm = 0.0;
    for (double v : mean) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) throw EnrollmentError("enrollment samples cancel out");
    for (double& v : mean) v /= norm;
    return EnrollmentRecord{device, mean, at, samples.size()};
}

Match reidentify(const Embedding& query, const EnrollmentRecord& record, double threshold) {
    Match m;
    m.similarity = cosine(query, record.anchor);
    m.verdict = m.similarity >= threshold ? RffVerdict::accept : RffVerdict::reject;
    return m;
}

const EnrollmentRecord* Registry::find(NodeId device) const {
    auto it = records_.find(device);
    return it == records_.end() ? nullptr : &it->second;
}

void Registry::write(std::ostream& out) const {
    const auto old = out.precision(17);
    for (const auto& [id, r] : records_) {
        out << "# device=" << id << " enrolled_at_ps=" << ticks(r.enrolled_at)
            << " samples=" << r.samples << '\n';
        out << id;
        for (double v : r.anchor) out << ',' << v;
        out << '\n';
    }
    out.precision(old);
}

Registry Registry::read(std::istream& in) {
    Registry reg;
    std::string line;
    std::size_t line_no = 0;
    std::int64_t enrolled_at = 0;
    std::size_t samples = 0;
    long meta_device = -1;
    auto fail = [&](const std::string& what) {
        throw std::runtime_error("registry line " + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ms(line.substr(1));
            std::string tok;
            meta_device = -1;
            while (ms >> tok) {
                const auto eq = tok.find('=');
                if (eq == std::string::npos) continue;
                const auto key = tok.substr(0, eq);
                const auto val = tok.substr(eq + 1);
                try {
                    if (key == "device") meta_device = std::stol(val);
                    else if (key == "enrolled_at_ps") enrolled_at = std::stoll(val);
                    else if (key == "samples") samples = std::stoul(val);
                } catch (const std::exception&) {
                    fail("bad metadata value '" + tok + "'");
                }
            }
            continue;
        }
        std::istringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 1 + kEmbeddingDim) {
            fail("expected 65 comma-separated values, got " + std::to_string(cells.size()));
        }
        EnrollmentRecord r;
        try {
            const unsigned long id = std::stoul(cells[0]);
            if (id > 0xFFFF) fail("device id out of range");
            r.device = static_cast<NodeId>(id);
            for (std::size_t i = 0; i < kEmbeddingDim; ++i) r.anchor[i] = std::stod(cells[i + 1]);
        } catch (const std::invalid_argument&) {
            fail("non-numeric value");
        } catch (const std::out_of_range&) {
            fail("value out of range");
        }
        if (meta_device == r.device) {
            r.enrolled_at = at_ps(enrolled_at);
            r.samples = samples;
        }
        meta_device = -1;
        reg.put(r);
    }
    return reg;
}

} // namespace uwb::security
