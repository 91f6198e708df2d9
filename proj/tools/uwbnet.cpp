// uwbnet: run scenarios, validate configs, build secrecy maps.

#include "uwb/mac/schedule.hpp"
#include "uwb/scenario/config.hpp"
#include "uwb/scenario/network.hpp"
#include "uwb/secrecy/secrecy.hpp"

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

namespace {

using namespace uwb;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitInvariant = 3;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> duration;
    std::string out_dir = ".";
    bool quiet = false;
    int jobs = 0;
};

void set_jobs(int jobs) {
#ifdef _OPENMP
    if (jobs > 0) omp_set_num_threads(jobs);
#else
    (void)jobs;
#endif
}

scenario::ScenarioConfig load(const Options& o) {
    auto cfg = scenario::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.duration) cfg.duration_s = *o.duration;
    const auto violations = scenario::validate(cfg);
    if (!violations.empty()) {
        std::ostringstream msg;
        msg << o.config << ": " << violations.size() << " violation(s)";
        for (const auto& v : violations) msg << "\n  " << v;
        throw scenario::ConfigError(msg.str());
    }
    return cfg;
}

void print_summary(const scenario::RunArtifacts& art) {
    const auto& m = art.metrics_snapshot;
    const double n = static_cast<double>(m.ranging_completed);
    std::uint64_t denials = 0;
    for (const auto& [reason, count] : m.policy_denials) denials += count;
    std::printf("superframes        %llu\n", static_cast<unsigned long long>(m.superframes));
    std::printf("delivery ratio     %.4f (%llu/%llu)\n", m.delivery_ratio(),
                static_cast<unsigned long long>(m.datagrams_delivered()),
                static_cast<unsigned long long>(m.datagrams_generated()));
    std::printf("ranging sessions   %llu completed, %llu invalidated\n",
                static_cast<unsigned long long>(m.ranging_completed),
                static_cast<unsigned long long>(m.ranging_invalidated));
    std::printf("ranging error      mean %.4f m, rms %.4f m, max %.4f m\n", n > 0 ? m.ranging_error_sum_m / n : 0.0,
                n > 0 ? std::sqrt(m.ranging_error_sq_sum_m2 / n) : 0.0, m.ranging_error_max_m);
    std::printf("attack detections  %llu\n", static_cast<unsigned long long>(m.attack_detections));
    std::printf("policy denials     %llu\n", static_cast<unsigned long long>(denials));
    std::printf("compliant coll.    %llu\n", static_cast<unsigned long long>(m.compliant_collisions));
    std::printf("trace              %s\n", art.trace.string().c_str());
    std::printf("metrics            %s\n", art.metrics.string().c_str());
    if (art.map) std::printf("secrecy map        %s\n", art.map->string().c_str());
}

int cmd_run(const Options& o) {
    set_jobs(o.jobs);
    const auto cfg = load(o);
    const auto art = scenario::run_scenario(cfg, o.out_dir);
    if (!o.quiet) print_summary(art);
    return kExitOk;
}

int cmd_validate(const Options& o) {
    const auto cfg = scenario::load_config(o.config);
    const auto violations = scenario::validate(cfg);
    for (const auto& v : violations) std::cout << o.config << ": " << v << "\n";
    if (!violations.empty()) return kExitConfig;
    if (!o.quiet) std::cout << o.config << ": ok\n";
    return kExitOk;
}

int cmd_secrecy(const Options& o) {
    set_jobs(o.jobs);
    // Only the secrecy section matters here; a map-only file may list no nodes.
    const auto cfg = scenario::load_config(o.config);
    if (!cfg.secrecy) throw scenario::ConfigError(o.config + ": no secrecy section");
    const auto& s = *cfg.secrecy;
    try {
        s.scenario.validate();
        s.model.validate();
    } catch (const secrecy::SecrecyError& e) {
        throw scenario::ConfigError(o.config + ": secrecy: " + e.what());
    }
    const auto map = secrecy::build_map(s.scenario, s.model, o.seed ? *o.seed : s.seed.value_or(cfg.seed));
    const std::filesystem::path dir(o.out_dir);
    std::filesystem::path csv_path(cfg.outputs.map);
    if (csv_path.is_relative()) csv_path = dir / csv_path;
    auto pgm_path = csv_path;
    pgm_path.replace_extension(".pgm");
    std::ostringstream csv;
    secrecy::write_csv(csv, map);
    scenario::write_atomic(csv_path, csv.str());
    std::ostringstream pgm;
    secrecy::write_pgm(pgm, map);
    scenario::write_atomic(pgm_path, pgm.str());
    if (!o.quiet) {
        std::size_t levels[5] = {};
        for (const auto& c : map.cells) ++levels[c.level];
        std::printf("cells %zu x %zu, levels 0..4: %zu %zu %zu %zu %zu\n", map.nx, map.ny, levels[0], levels[1],
                    levels[2], levels[3], levels[4]);
        std::printf("wrote %s and %s\n", csv_path.string().c_str(), pgm_path.string().c_str());
    }
    return kExitOk;
}

int cmd_schedule(const Options& o) {
    const auto cfg = load(o);
    const auto leaders = cfg.leaders();
    const auto schedule = mac::build_schedule(
        leaders, std::chrono::duration_cast<Picoseconds>(std::chrono::duration<double, std::micro>(
                     cfg.superframe.slot_length_us)));
    std::cout << mac::dump(schedule);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"UWB mesh network simulator"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&o](CLI::App* sub, bool runs) {
        sub->add_option("config", o.config, "Scenario JSON file")->required();
        sub->add_flag("-q,--quiet", o.quiet, "Suppress the summary");
        if (!runs) return;
        sub->add_option("--seed", o.seed, "Override the scenario seed");
        sub->add_option("--out-dir", o.out_dir, "Directory for outputs");
        sub->add_option("--jobs", o.jobs, "Worker threads for parallel kernels (0 = default)")
            ->check(CLI::NonNegativeNumber);
    };

    auto* run = app.add_subcommand("run", "Run a scenario and write trace and metrics");
    add_common(run, true);
    run->add_option("--duration", o.duration, "Override the simulated duration in seconds")
        ->check(CLI::PositiveNumber);
    auto* val = app.add_subcommand("validate", "Check a scenario without running it");
    add_common(val, false);
    auto* map = app.add_subcommand("secrecy-map", "Build the scenario's secrecy map");
    add_common(map, true);
    auto* dump = app.add_subcommand("schedule-dump", "Print the superframe slot table");
    add_common(dump, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) return cmd_run(o);
        if (*val) return cmd_validate(o);
        if (*map) return cmd_secrecy(o);
        if (*dump) return cmd_schedule(o);
    } catch (const scenario::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const scenario::InvariantViolation& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return kExitInvariant;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}
