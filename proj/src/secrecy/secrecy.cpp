#include "uwb/secrecy/secrecy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

namespace uwb::secrecy {

namespace {

std::int64_t millimetres(double v) { return std::llround(v * 1000.0); }

void push64(std::vector<std::uint32_t>& words, std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
}

std::size_t cells_along(double lo, double hi, double res, const char* axis) {
    if (!(res > 0.0)) throw SecrecyError("grid resolution must be positive");
    const double n = (hi - lo) / res;
    const double rounded = std::round(n);
    if (!(rounded >= 1.0)) throw SecrecyError(std::string("grid is empty along ") + axis);
    if (std::abs(n - rounded) > 1e-9 * std::max(1.0, n)) {
        throw SecrecyError(std::string("resolution does not divide the grid along ") + axis);
    }
    return static_cast<std::size_t>(rounded);
}

double capacity(double snr_db) { return std::log2(1.0 + std::pow(10.0, snr_db / 10.0)); }

} // namespace

void PropagationModel::validate() const {
    if (!(exponent > 0.0)) throw SecrecyError("path-loss exponent must be positive");
    if (!(sigma_db >= 0.0)) throw SecrecyError("shadowing sigma must be non-negative");
    if (!(d0_m > 0.0)) throw SecrecyError("reference distance must be positive");
}

double PropagationModel::mean_snr_db(const Position& tx, const Position& rx) const {
    const double d = std::max(distance(tx, rx), kMinDistanceM);
    return tx_power_dbm - pl0_db - 10.0 * exponent * std::log10(d / d0_m) - noise_floor_dbm;
}

double snr_at(const Position& tx, const Position& rx, const PropagationModel& model,
              double shadowing_db) {
    return model.mean_snr_db(tx, rx) - shadowing_db;
}

LinkShadowing::LinkShadowing(std::uint64_t seed, const Position& tx, const Position& rx,
                             double sigma_db)
    : dist_(0.0, sigma_db > 0.0 ? sigma_db : 1.0), zero_(!(sigma_db > 0.0)) {
    std::vector<std::uint32_t> words;
    push64(words, seed);
    for (double v : {tx.x, tx.y, tx.z, rx.x, rx.y, rx.z}) {
        push64(words, static_cast<std::uint64_t>(millimetres(v)));
    }
    std::seed_seq seq(words.begin(), words.end());
    rng_.seed(seq);
}

double LinkShadowing::next() { return zero_ ? 0.0 : dist_(rng_); }

std::size_t Grid::nx() const { return cells_along(x_min, x_max, resolution_m, "x"); }
std::size_t Grid::ny() const { return cells_along(y_min, y_max, resolution_m, "y"); }

Position Grid::centre(std::size_t ix, std::size_t iy) const {
    return {x_min + (static_cast<double>(ix) + 0.5) * resolution_m,
            y_min + (static_cast<double>(iy) + 0.5) * resolution_m, z};
}

void Grid::validate() const {
    (void)nx();
    (void)ny();
}

int level_for(double rate, const LevelThresholds& thresholds) {
    int level = 0;
    for (double t : thresholds) {
        if (rate >= t) ++level;
    }
    return level;
}

void SecrecyScenario::validate() const {
    if (access_points.empty()) throw SecrecyError("scenario needs at least one access point");
    if (eavesdroppers.empty()) throw SecrecyError("scenario needs at least one eavesdropper position");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw SecrecyError("epsilon must lie strictly in (0,1)");
    if (trials < 1000) throw SecrecyError("at least 1000 trials per cell are required");
    if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
        throw SecrecyError("level thresholds must be non-decreasing");
    }
    grid.validate();
}

std::vector<Position> region_points(const Grid& region) {
    std::vector<Position> out;
    const auto nx = region.nx(), ny = region.ny();
    for (std::size_t iy = 0; iy < ny; ++iy) {
        for (std::size_t ix = 0; ix < nx; ++ix) out.push_back(region.centre(ix, iy));
    }
    return out;
}

std::vector<double> secrecy_trials(const Position& tx, const SecrecyScenario& scenario,
                                   const PropagationModel& model, std::uint64_t seed) {
    std::vector<LinkShadowing> legit, eve;
    std::vector<double> legit_mean, eve_mean;
    for (const auto& ap : scenario.access_points) {
        legit.emplace_back(seed, tx, ap, model.sigma_db);
        legit_mean.push_back(model.mean_snr_db(tx, ap));
    }
    for (const auto& e : scenario.eavesdroppers) {
        eve.emplace_back(seed, tx, e, model.sigma_db);
        eve_mean.push_back(model.mean_snr_db(tx, e));
    }
    std::vector<double> out(scenario.trials);
    for (auto& c : out) {
        double best_b = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < legit.size(); ++i) {
            best_b = std::max(best_b, legit_mean[i] - legit[i].next());
        }
        double best_e = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < eve.size(); ++i) {
            best_e = std::max(best_e, eve_mean[i] - eve[i].next());
        }
        c = best_b > best_e ? std::max(0.0, capacity(best_b) - capacity(best_e)) : 0.0;
    }
    return out;
}

double epsilon_quantile(std::vector<double>& samples, double epsilon) {
    if (samples.empty()) throw SecrecyError("quantile of an empty sample");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw SecrecyError("epsilon must lie strictly in (0,1)");
    const auto t = samples.size();
    // The 1e-9 keeps e.g. 0.9 * 10000 from rounding up to 9001.
    auto need = static_cast<std::size_t>(std::ceil((1.0 - epsilon) * static_cast<double>(t) - 1e-9));
    need = std::clamp<std::size_t>(need, 1, t);
    const auto rank = t - need;
    std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(rank), samples.end());
    return samples[rank];
}

double outage_secrecy_rate(const Position& tx, const SecrecyScenario& scenario,
                           const PropagationModel& model, std::uint64_t seed) {
    scenario.validate();
    model.validate();
    auto trials = secrecy_trials(tx, scenario, model, seed);
    return epsilon_quantile(trials, scenario.epsilon);
}

namespace {

SecrecyMap empty_map(const SecrecyScenario& scenario, const PropagationModel& model) {
    scenario.validate();
    model.validate();
    SecrecyMap map;
    map.nx = scenario.grid.nx();
    map.ny = scenario.grid.ny();
    map.cells.resize(map.nx * map.ny);
    return map;
}

void fill_cell(SecrecyMap& map, std::size_t i, const SecrecyScenario& scenario,
               const PropagationModel& model, std::uint64_t seed) {
    auto& cell = map.cells[i];
    cell.position = scenario.grid.centre(i % map.nx, i / map.nx);
    auto trials = secrecy_trials(cell.position, scenario, model, seed);
    cell.rate = epsilon_quantile(trials, scenario.epsilon);
    cell.level = level_for(cell.rate, scenario.thresholds);
}

} // namespace

SecrecyMap build_map_serial(const SecrecyScenario& scenario, const PropagationModel& model,
                            std::uint64_t seed) {
    auto map = empty_map(scenario, model);
    for (std::size_t i = 0; i < map.cells.size(); ++i) fill_cell(map, i, scenario, model, seed);
    return map;
}

SecrecyMap build_map(const SecrecyScenario& scenario, const PropagationModel& model,
                     std::uint64_t seed) {
    auto map = empty_map(scenario, model);
    const auto count = static_cast<std::ptrdiff_t>(map.cells.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        fill_cell(map, static_cast<std::size_t>(i), scenario, model, seed);
    }
    return map;
}

SecrecyMap map_from_samples(std::istream& csv, double epsilon, const LevelThresholds& thresholds) {
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& what) {
        throw SecrecyError("samples line " + std::to_string(line_no) + ": " + what);
    };
    if (!std::getline(csv, line)) throw SecrecyError("samples file is empty");
    ++line_no;
    if (line != "x,y,snr_b_db,snr_e_db") fail("expected header x,y,snr_b_db,snr_e_db");

    std::map<std::pair<double, double>, std::size_t> index;
    std::vector<Position> positions;
    std::vector<std::vector<double>> trials;
    while (std::getline(csv, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<double> v;
        while (std::getline(ls, cell, ',')) {
            try {
                std::size_t used = 0;
                v.push_back(std::stod(cell, &used));
                if (used != cell.size()) fail("non-numeric value '" + cell + "'");
            } catch (const std::logic_error&) {
                fail("non-numeric value '" + cell + "'");
            }
        }
        if (v.size() != 4) fail("expected 4 values");
        const auto key = std::make_pair(v[0], v[1]);
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, positions.size()).first;
            positions.push_back({v[0], v[1], 0.0});
            trials.emplace_back();
        }
        const double c = v[2] > v[3] ? std::max(0.0, capacity(v[2]) - capacity(v[3])) : 0.0;
        trials[it->second].push_back(c);
    }
    SecrecyMap map;
    map.nx = positions.size();
    map.ny = positions.empty() ? 0 : 1;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        MapCell c;
        c.position = positions[i];
        c.rate = epsilon_quantile(trials[i], epsilon);
        c.level = level_for(c.rate, thresholds);
        map.cells.push_back(c);
    }
    return map;
}

void write_csv(std::ostream& out, const SecrecyMap& map) {
    const auto old = out.precision(17);
    out << "x,y,rate,level\n";
    for (const auto& c : map.cells) {
        out << c.position.x << ',' << c.position.y << ',' << c.rate << ',' << c.level << '\n';
    }
    out.precision(old);
}

void write_pgm(std::ostream& out, const SecrecyMap& map) {
    out << "P5\n" << map.nx << ' ' << map.ny << "\n255\n";
    for (std::size_t row = 0; row < map.ny; ++row) {
        const std::size_t iy = map.ny - 1 - row;
        for (std::size_t ix = 0; ix < map.nx; ++ix) {
            const int level = std::clamp(map.at(ix, iy).level, 0, 4);
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * level / 4.0))));
        }
    }
}

} // namespace uwb::secrecy
