#include "uwb/security/benchmark.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace uwb::security {

ReidBenchmarkResult macro_f1(const std::vector<std::size_t>& truth,
                             const std::vector<std::optional<std::size_t>>& predicted,
                             std::size_t classes) {
    if (truth.size() != predicted.size()) throw std::invalid_argument("label count mismatch");
    std::vector<std::size_t> tp(classes), fp(classes), fn(classes);
    ReidBenchmarkResult r;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto t = truth[i];
        if (t >= classes) throw std::invalid_argument("label out of range");
        const auto& p = predicted[i];
        if (!p) {
            ++r.unknown;
            ++fn[t];
        } else if (*p == t) {
            ++tp[t];
        } else {
            ++fp[*p];
            ++fn[t];
        }
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        const double pr = tp[c] + fp[c] ? double(tp[c]) / double(tp[c] + fp[c]) : 0.0;
        const double rc = tp[c] + fn[c] ? double(tp[c]) / double(tp[c] + fn[c]) : 0.0;
        r.precision.push_back(pr);
        r.recall.push_back(rc);
        sum += pr + rc > 0.0 ? 2.0 * pr * rc / (pr + rc) : 0.0;
    }
    r.macro_f1 = classes ? sum / double(classes) : 0.0;
    return r;
}

ReidBenchmarkResult run_reid_benchmark(const ReidBenchmarkConfig& config) {
    if (config.devices == 0) throw std::invalid_argument("benchmark needs devices");
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> distance(config.min_distance_m, config.max_distance_m);

    std::vector<phy::ImpairmentSignature> signatures;
    for (std::size_t d = 0; d < config.devices; ++d) {
        signatures.push_back(phy::ImpairmentSignature::for_device(rng()));
    }
    auto capture = [&](std::size_t d) {
        const double m = distance(rng);
        return phy::synthesize_cir(m, signatures[d], config.snr_db, rng());
    };

    std::vector<EnrollmentRecord> records;
    for (std::size_t d = 0; d < config.devices; ++d) {
        std::vector<phy::Cir> caps;
        for (std::size_t i = 0; i < config.enrollment_captures; ++i) caps.push_back(capture(d));
        records.push_back(enroll(static_cast<NodeId>(d), extract_embeddings(caps), SimTime{},
                                 config.enrollment_captures));
    }

    std::vector<phy::Cir> queries;
    std::vector<std::size_t> truth;
    for (std::size_t d = 0; d < config.devices; ++d) {
        for (std::size_t q = 0; q < config.queries_per_device; ++q) {
            queries.push_back(capture(d));
            truth.push_back(d);
        }
    }
    const auto embeddings = extract_embeddings(queries);

    std::vector<std::optional<std::size_t>> predicted;
    double min_true = 1.0;
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        std::size_t best = 0;
        double best_sim = -2.0;
        for (std::size_t d = 0; d < records.size(); ++d) {
            const double s = cosine(embeddings[i], records[d].anchor);
            if (s > best_sim) {
                best_sim = s;
                best = d;
            }
        }
        min_true = std::min(min_true, cosine(embeddings[i], records[truth[i]].anchor));
        predicted.push_back(best_sim >= config.threshold ? std::optional(best) : std::nullopt);
    }
    auto result = macro_f1(truth, predicted, config.devices);
    result.min_true_similarity = min_true;
    return result;
}

} // namespace uwb::security
