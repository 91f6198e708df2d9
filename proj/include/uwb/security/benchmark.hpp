#pragma once

#include "uwb/security/fingerprint.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace uwb::security {

/// Synthetic re-identification run: each device enrolls from a few noisy
/// captures, then every query is matched against all anchors and labelled
/// with the best one if it clears the threshold, unknown otherwise.
struct ReidBenchmarkConfig {
    std::size_t devices = 10;
    std::size_t enrollment_captures = kMinEnrollmentSamples;
    std::size_t queries_per_device = 100;
    double snr_db = 20.0;
    double min_distance_m = 2.0;
    double max_distance_m = 25.0;
    double threshold = kDefaultRffThreshold;
    std::uint64_t seed = 1;
};

struct ReidBenchmarkResult {
    double macro_f1 = 0.0;
    std::vector<double> precision;
    std::vector<double> recall;
    std::size_t unknown = 0;
    double min_true_similarity = 1.0;
};

/// Macro-averaged F1 over classes 0..classes-1. A prediction of nullopt
/// (unknown) counts as a miss for the true class and against no class.
ReidBenchmarkResult macro_f1(const std::vector<std::size_t>& truth,
                             const std::vector<std::optional<std::size_t>>& predicted,
                             std::size_t classes);

ReidBenchmarkResult run_reid_benchmark(const ReidBenchmarkConfig& config);

} // namespace uwb::security
