#pragma once

#include "uwb/engine/sim_time.hpp"
#include "uwb/phy/cir.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uwb::security {

inline constexpr std::size_t kPeakIndex = 32;
inline constexpr std::size_t kEmbeddingDim = 64;
inline constexpr std::size_t kFeatureHalfWidth = 16;
inline constexpr std::size_t kMinEnrollmentSamples = 10;
inline constexpr double kDefaultRffThreshold = 0.9;

/// Feature vectors whose norm falls below this before normalization are
/// treated as impairment free and mapped to the fallback e0. Set well
/// above the fractional-delay resampling residue of an ideal pulse.
inline constexpr double kDegenerateNorm = 1e-3;

/// CIR with its peak tap at index P and peak magnitude 1.
struct ProcessedCir {
    std::vector<phy::Complex> taps;
    std::size_t peak = kPeakIndex;
};

using Embedding = std::array<double, kEmbeddingDim>;

/// Divides by the peak magnitude and circularly shifts the peak to `peak`.
/// Throws phy::InvalidCir for an empty, all-zero or non-finite CIR.
ProcessedCir preprocess_cir(const phy::Cir& raw, std::size_t peak = kPeakIndex);

/// Fractional circular delay by `shift` taps (positive = later) through the
/// DFT. FFTW does the transforms; plans are created once per length.
std::vector<phy::Complex> fractional_shift(std::span<const phy::Complex> x, double shift);

/// Template-deviation fingerprint.
///
/// The processed CIR is re-centred to sub-tap precision on the fixed point
/// of a template-weighted energy centroid, then scaled and de-rotated so
/// tap P is exactly 1. Over taps P-16 .. P+15, with v the tap value, the
/// features are Re(v) - G(k - P) (magnitude deviation from the template)
/// followed by Im(v) (phase deviation, |v| sin arg v). The 64-vector is
/// normalized to unit length; a near-zero vector yields e0.
Embedding extract_embedding(const ProcessedCir& p);

/// Embeds a batch of raw captures. Parallel over captures when built with
/// OpenMP; the result does not depend on the thread count.
std::vector<Embedding> extract_embeddings(std::span<const phy::Cir> captures);
/// Serial reference for extract_embeddings.
std::vector<Embedding> extract_embeddings_serial(std::span<const phy::Cir> captures);

double cosine(const Embedding& a, const Embedding& b);

class EnrollmentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct EnrollmentRecord {
    NodeId device = 0;
    Embedding anchor{};
    SimTime enrolled_at{};
    std::size_t samples = 0;
};

/// Anchor = normalized mean of at least `min_samples` embeddings.
EnrollmentRecord enroll(NodeId device, std::span<const Embedding> samples, SimTime at = {},
                        std::size_t min_samples = kMinEnrollmentSamples);

enum class RffVerdict { accept, reject, unknown };

struct Match {
    RffVerdict verdict = RffVerdict::reject;
    double similarity = 0.0;
};

Match reidentify(const Embedding& query, const EnrollmentRecord& record,
                 double threshold = kDefaultRffThreshold);

/// Node-local set of enrollment records.
///
/// Text format, one record per line: the device id followed by the 64
/// anchor values, comma separated. A preceding `#` line holds the
/// enrollment time and sample count; readers skip `#` lines they do not
/// need.
class Registry {
public:
    void put(EnrollmentRecord record) { records_[record.device] = std::move(record); }
    [[nodiscard]] const EnrollmentRecord* find(NodeId device) const;
    [[nodiscard]] const std::map<NodeId, EnrollmentRecord>& records() const { return records_; }

    void write(std::ostream& out) const;
    /// Throws std::runtime_error with the line number on malformed input.
    static Registry read(std::istream& in);

private:
    std::map<NodeId, EnrollmentRecord> records_;
};

} // namespace uwb::security
