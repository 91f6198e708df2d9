#pragma once

#include "uwb/engine/radio_medium.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace uwb::secrecy {

class SecrecyError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr double kMinDistanceM = 0.1;

/// Log-distance path loss with log-normal shadowing. Defaults: 6.5 GHz
/// free-space loss at 1 m, the -41.3 dBm/MHz mask over 500 MHz, and a noise
/// floor that already includes the despreading gain.
struct PropagationModel {
    double pl0_db = 48.7;
    double d0_m = 1.0;
    double exponent = 2.0;
    double sigma_db = 4.0;
    double noise_floor_dbm = -100.0;
    double tx_power_dbm = -14.3;

    /// Throws SecrecyError unless exponent > 0, sigma >= 0 and d0 > 0.
    void validate() const;
    /// SNR without shadowing; distances below 0.1 m are clamped.
    [[nodiscard]] double mean_snr_db(const Position& tx, const Position& rx) const;
};

/// SNR of one link for a given shadowing realisation X (dB, subtracted).
double snr_at(const Position& tx, const Position& rx, const PropagationModel& model,
              double shadowing_db);

/// Shadowing draws for one (tx, rx) link. The stream depends only on the
/// seed and the two positions (rounded to 1 mm), so the same link sees the
/// same draws whatever else is in the scenario and whichever thread
/// evaluates it.
class LinkShadowing {
public:
    LinkShadowing(std::uint64_t seed, const Position& tx, const Position& rx, double sigma_db);
    double next();

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> dist_;
    bool zero_;
};

struct Grid {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 20.0;
    double y_max = 20.0;
    double resolution_m = 1.0;
    double z = 0.0;

    [[nodiscard]] std::size_t nx() const;
    [[nodiscard]] std::size_t ny() const;
    /// Centre of cell (ix, iy); iy = 0 is the row at y_min.
    [[nodiscard]] Position centre(std::size_t ix, std::size_t iy) const;
    /// Throws SecrecyError for an empty grid or a resolution that does not
    /// divide the bounds.
    void validate() const;
};

/// Rate thresholds separating levels 0..4: level = number of thresholds
/// the rate reaches.
using LevelThresholds = std::array<double, 4>;
inline constexpr LevelThresholds kDefaultThresholds{0.5, 1.0, 2.0, 4.0};

int level_for(double rate, const LevelThresholds& thresholds = kDefaultThresholds);

struct SecrecyScenario {
    std::vector<Position> access_points;
    /// Worst case is taken over all positions.
    std::vector<Position> eavesdroppers;
    double epsilon = 0.1;
    Grid grid;
    std::size_t trials = 10000;
    LevelThresholds thresholds = kDefaultThresholds;

    /// Throws SecrecyError: no access point, no eavesdropper, epsilon outside
    /// (0,1), fewer than 1000 trials, bad grid or thresholds.
    void validate() const;
};

/// Eavesdropper positions covering a rectangular region on a regular grid,
/// for the worst-case-over-region model.
std::vector<Position> region_points(const Grid& region);

/// Per-trial secrecy capacity log2(1+SNR_b) - log2(1+SNR_e), floored at 0,
/// with SNR_b the best access point and SNR_e the best eavesdropper.
std::vector<double> secrecy_trials(const Position& tx, const SecrecyScenario& scenario,
                                   const PropagationModel& model, std::uint64_t seed);

/// Largest r with #{c >= r} >= ceil((1 - epsilon) T), i.e. the element at
/// ascending rank T - ceil((1 - epsilon) T). Reorders `samples`.
double epsilon_quantile(std::vector<double>& samples, double epsilon);

double outage_secrecy_rate(const Position& tx, const SecrecyScenario& scenario,
                           const PropagationModel& model, std::uint64_t seed);

struct MapCell {
    Position position;
    double rate = 0.0;
    int level = 0;
};

struct SecrecyMap {
    std::size_t nx = 0;
    std::size_t ny = 0;
    /// Row-major from y_min: cells[iy * nx + ix].
    std::vector<MapCell> cells;

    [[nodiscard]] const MapCell& at(std::size_t ix, std::size_t iy) const { return cells[iy * nx + ix]; }
};

/// Uplink map: the transmitter sits at each cell centre. Cells run in
/// parallel when built with OpenMP; the result does not depend on the
/// thread count.
SecrecyMap build_map(const SecrecyScenario& scenario, const PropagationModel& model,
                     std::uint64_t seed);
SecrecyMap build_map_serial(const SecrecyScenario& scenario, const PropagationModel& model,
                            std::uint64_t seed);

/// Map from measured samples instead of the model. CSV header
/// `x,y,snr_b_db,snr_e_db`, one row per trial; rows of one cell share x,y.
/// Cells are emitted in first-appearance order with nx = cell count, ny = 1.
SecrecyMap map_from_samples(std::istream& csv, double epsilon,
                            const LevelThresholds& thresholds = kDefaultThresholds);

/// `x,y,rate,level` with 17 significant digits.
void write_csv(std::ostream& out, const SecrecyMap& map);
/// Binary PGM, level l drawn as gray round(255 l / 4), top row = largest y.
void write_pgm(std::ostream& out, const SecrecyMap& map);

} // namespace uwb::secrecy
