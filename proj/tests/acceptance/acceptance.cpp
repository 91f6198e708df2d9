// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "uwb/adaptation/adaptation.hpp"
#include "uwb/mac/schedule.hpp"
#include "uwb/phy/cir.hpp"
#include "uwb/ranging/ranging.hpp"
#include "uwb/scenario/config.hpp"
#include "uwb/scenario/network.hpp"
#include "uwb/secrecy/secrecy.hpp"
#include "uwb/security/benchmark.hpp"
#include "uwb/security/fingerprint.hpp"
#include "uwb/security/policy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

using namespace uwb;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;

    // Records a failed condition and keeps the first message.
    void require(bool ok, const std::string& what) {
        if (ok) return;
        if (pass) detail = what;
        pass = false;
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

scenario::ScenarioConfig scenario_file(const std::string& name) {
    return scenario::load_config((fs::path(UWBNET_SOURCE_DIR) / "scenarios" / name).string());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

Verdict tdma_collision_freedom() {
    Verdict v;
    auto cfg = scenario_file("reference.json");
    cfg.outputs.trace_level = "off";
    const auto t0 = Clock::now();
    scenario::Network net(cfg);
    net.run();
    const double secs = seconds_since(t0);
    const auto& m = net.metrics();
    v.require(cfg.nodes.size() == 40 && cfg.zones().size() == 3, "reference scenario is not 40 nodes in 3 zones");
    v.require(cfg.drift_ppm == 20.0, "reference drift is not 20 ppm");
    v.require(m.superframes >= 1000, fmt("only %llu superframes", (unsigned long long)m.superframes));
    v.require(m.compliant_collisions == 0,
              fmt("%llu collisions among compliant frames", (unsigned long long)m.compliant_collisions));
    v.require(secs < 30.0, fmt("runtime %.1f s", secs));
    if (v.pass)
        v.detail = fmt("%llu superframes, %llu frames, 0 compliant collisions, %.1f s",
                       (unsigned long long)m.superframes, (unsigned long long)m.frames_sent, secs);
    return v;
}

Verdict superframe_structure() {
    Verdict v;
    const std::vector<NodeId> leaders{1, 2, 3};
    const auto s = mac::build_schedule(leaders, std::chrono::microseconds(1000));
    int beacon = 0, ranging = 0, data = 0;
    std::set<NodeId> data_owners;
    for (const auto& slot : s.slots) {
        switch (slot.kind) {
        case mac::SlotKind::beacon: ++beacon; break;
        case mac::SlotKind::ranging: ++ranging; break;
        case mac::SlotKind::leader_data:
            ++data;
            if (slot.owner) data_owners.insert(*slot.owner);
            break;
        }
    }
    v.require(s.slot_count() == 100, "slot count is not 100");
    v.require(beacon == 3 && ranging == 94 && data == 3, fmt("%d beacon, %d ranging, %d data", beacon, ranging, data));
    v.require(data_owners.size() == 3, "leader-data owners are not pairwise distinct");
    if (v.pass) v.detail = "3 beacon + 94 ranging + 3 leader-data, distinct owners";
    return v;
}

Verdict ranging_accuracy() {
    Verdict v;
    std::mt19937_64 rng(2024);
    ranging::LinkSetup clean;
    clean.distance_m = 10.0;
    const auto out = ranging::run_session(clean, rng);
    v.require(out.result.has_value(), "clean session did not complete");
    const double clean_err = out.result ? std::abs(out.result->distance_m - 10.0) : 1.0;
    v.require(clean_err <= 1e-3, fmt("clean error %.6f m", clean_err));

    std::uniform_real_distribution<double> drift(-20.0, 20.0);
    double worst = 0.0;
    int failed = 0;
    for (int i = 0; i < 1000; ++i) {
        ranging::LinkSetup s;
        s.distance_m = 10.0;
        s.reply_delay = std::chrono::microseconds(200);
        s.initiator_drift_ppm = drift(rng);
        s.responder_drift_ppm = drift(rng);
        const auto r = ranging::run_session(s, rng);
        if (!r.result) {
            ++failed;
            continue;
        }
        worst = std::max(worst, std::abs(r.result->distance_m - 10.0));
    }
    v.require(failed == 0, fmt("%d drift sessions did not complete", failed));
    v.require(worst <= 0.01, fmt("worst drift error %.4f m", worst));
    if (v.pass) v.detail = fmt("clean %.2e m, worst of 1000 drifted sessions %.2e m", clean_err, worst);
    return v;
}

Verdict toa_defense() {
    Verdict v;
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> magnitude(5.0, 50.0);
    int detected = 0;
    int leaked = 0;
    for (int i = 0; i < 1000; ++i) {
        ranging::LinkSetup s;
        s.tau_ns = 1.0;
        s.noise.discrepancy_sigma_ns = 0.2;
        // Endpoints of the range are covered explicitly.
        const double ns = i == 0 ? 5.0 : i == 1 ? 50.0 : magnitude(rng);
        s.attack.sts = -std::chrono::duration_cast<Picoseconds>(std::chrono::duration<double, std::nano>(ns));
        const auto r = ranging::run_session(s, rng);
        detected += r.state == ranging::RangingSession::State::invalidated;
        leaked += r.result.has_value();
    }
    v.require(detected == 1000, fmt("detected %d/1000", detected));
    v.require(leaked == 0, fmt("%d attacked sessions emitted a range", leaked));

    // Every received message goes through the check, so false positives are
    // counted per message across clean sessions.
    int sessions = 0, false_alarms = 0;
    for (int i = 0; i < 2000; ++i) {
        ranging::LinkSetup s;
        s.tau_ns = 1.0;
        s.noise.discrepancy_sigma_ns = 0.2;
        const auto r = ranging::run_session(s, rng);
        ++sessions;
        false_alarms += r.state == ranging::RangingSession::State::invalidated;
    }
    const double fp_rate = static_cast<double>(false_alarms) / sessions;
    v.require(fp_rate < 1e-3, fmt("false positive rate %.4f", fp_rate));
    if (v.pass) v.detail = fmt("1000/1000 attacks detected, %d/%d clean sessions flagged", false_alarms, sessions);
    return v;
}

Verdict self_healing() {
    Verdict v;
    const auto cfg = scenario_file("diamond.json");
    scenario::Network net(cfg);
    net.run();
    const auto& m = net.metrics();
    v.require(m.kills.size() == 1, "diamond scenario has no kill");
    if (!v.pass) return v;
    const auto& k = m.kills[0];
    v.require(k.recovery_ms.contains(0), "delivery never resumed");
    const double rec = k.recovery_ms.contains(0) ? k.recovery_ms.at(0) : 1e9;
    v.require(rec <= 300.0, fmt("recovery %.1f ms", rec));
    v.require(m.loops == 0, fmt("%llu routing loops", (unsigned long long)m.loops));
    if (v.pass) v.detail = fmt("relay %u killed, delivery resumed after %.1f ms, 0 loops", k.node, rec);
    return v;
}

Verdict leader_promotion() {
    Verdict v;
    const auto cfg = scenario_file("promotion.json");
    scenario::Network net(cfg);
    net.run();
    const auto& m = net.metrics();
    v.require(m.promotions.size() == 1, fmt("%zu promotions", m.promotions.size()));
    if (!v.pass) return v;
    const auto& p = m.promotions[0];
    const auto* winner = cfg.find(p.winner);
    v.require(winner && winner->role == mesh::Role::full, "winner was not a full node");
    v.require(p.first_beacon_superframe && *p.first_beacon_superframe <= p.detected_superframe + 1,
              "no beacon by the superframe after detection");
    v.require(net.schedule().beacon_slot(p.winner) && net.schedule().data_slot(p.winner),
              "winner does not own beacon and data slots");
    v.require(p.first_ranging_superframe.has_value(), "zone ranging did not resume");
    v.require(net.leader_of(p.zone) == p.winner, "zone leader is not the winner");
    if (v.pass)
        v.detail = fmt("node %u promoted: detected sf %llu, beacon sf %llu, ranging sf %llu", p.winner,
                       (unsigned long long)p.detected_superframe, (unsigned long long)*p.first_beacon_superframe,
                       (unsigned long long)*p.first_ranging_superframe);
    return v;
}

adaptation::Address random_address(std::mt19937_64& rng, const adaptation::LinkAddresses& link) {
    std::uniform_int_distribution<int> byte(0, 255);
    const auto mac = static_cast<NodeId>(rng());
    adaptation::Address a{};
    switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0:
        for (auto& b : a) b = static_cast<std::uint8_t>(byte(rng));
        return a;
    case 1: return adaptation::link_local_from_mac(link.src);
    case 2: return adaptation::mesh_local_from_mac(mac);
    default: return adaptation::link_local_from_mac(mac);
    }
}

Verdict adaptation_codecs() {
    Verdict v;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> byte(0, 255);
    int mismatches = 0;
    for (int i = 0; i < 10000; ++i) {
        const adaptation::LinkAddresses link{static_cast<NodeId>(rng()), static_cast<NodeId>(rng())};
        adaptation::Ipv6Header h;
        h.traffic_class = byte(rng) < 128 ? 0 : static_cast<std::uint8_t>(byte(rng));
        h.flow_label = byte(rng) < 128 ? 0 : static_cast<std::uint32_t>(rng() & 0xFFFFF);
        h.payload_length = static_cast<std::uint16_t>(rng() & 0x7FF);
        h.next_header = static_cast<std::uint8_t>(byte(rng));
        h.hop_limit = static_cast<std::uint8_t>(byte(rng));
        h.src = random_address(rng, link);
        h.dst = random_address(rng, link);
        const auto c = adaptation::compress(h, link);
        const auto back = adaptation::decompress(c.bytes, link, h.payload_length);
        mismatches += !(back.header == h) || back.consumed != c.size() ||
                      adaptation::serialize(back.header) != adaptation::serialize(h);
    }
    v.require(mismatches == 0, fmt("%d headers did not round trip", mismatches));

    const adaptation::LinkAddresses link{0x0102, 0x0304};
    adaptation::Ipv6Header best;
    best.next_header = 17;
    best.hop_limit = 64;
    best.src = adaptation::link_local_from_mac(link.src);
    best.dst = adaptation::link_local_from_mac(link.dst);
    const auto best_size = adaptation::compress(best, link).size();
    v.require(best_size == 3, fmt("best case compresses to %zu bytes", best_size));

    std::vector<std::uint8_t> datagram(1280);
    for (auto& b : datagram) b = static_cast<std::uint8_t>(byte(rng));
    datagram[0] = 0x60;
    auto frags = adaptation::fragment(datagram, 42);
    v.require(frags.size() == 13, fmt("%zu fragments", frags.size()));
    if (frags.size() == 13) {
        bool layout = frags[0].bytes.size() == adaptation::kFrag1HeaderBytes + 112 &&
                      frags[12].bytes.size() == adaptation::kFragnHeaderBytes + 24;
        for (std::size_t i = 1; i < 12; ++i)
            layout = layout && frags[i].bytes.size() == adaptation::kFragnHeaderBytes + 104;
        v.require(layout, "fragment payloads are not 112 + 11x104 + 24");
    }
    int bad_orders = 0;
    for (int round = 0; round < 200; ++round) {
        if (round == 0) std::reverse(frags.begin(), frags.end());
        else std::shuffle(frags.begin(), frags.end(), rng);
        adaptation::Reassembler r;
        adaptation::Reassembler::Outcome out;
        for (const auto& f : frags) out = r.add({5, 6}, f.kind, f.bytes, SimTime{});
        bad_orders += out.status != adaptation::Reassembler::Status::delivered || out.datagram != datagram;
    }
    v.require(bad_orders == 0, fmt("%d arrival orders failed to reassemble", bad_orders));
    const double secs = seconds_since(t0);
    v.require(secs < 5.0, fmt("runtime %.2f s", secs));
    if (v.pass) v.detail = fmt("10^4 headers bit-exact, best case 3 B, 13 fragments, 200 orders, %.2f s", secs);
    return v;
}

Verdict fingerprint_pipeline() {
    Verdict v;
    auto embed = [](const phy::Cir& c) { return security::extract_embedding(security::preprocess_cir(c)); };
    int broken = 0, checked = 0;
    for (std::uint64_t dev = 1; dev <= 10; ++dev) {
        const auto sig = phy::ImpairmentSignature::for_device(dev);
        const auto c = phy::synthesize_cir(2.0 + 2.0 * static_cast<double>(dev), sig, 20.0, dev);
        const auto base = embed(c);
        for (double k : {0.25, 2.0, 4096.0}) {
            auto s = c;
            for (auto& t : s.taps) t *= k;
            broken += embed(s) != base;
            ++checked;
        }
        for (std::size_t by = 1; by < c.taps.size(); by += 13) {
            auto s = c;
            std::rotate(s.taps.begin(), s.taps.begin() + static_cast<std::ptrdiff_t>(by), s.taps.end());
            broken += embed(s) != base;
            ++checked;
        }
    }
    v.require(broken == 0, fmt("%d/%d transformed captures changed the embedding", broken, checked));

    security::ReidBenchmarkConfig bench;
    bench.devices = 10;
    bench.queries_per_device = 100;
    bench.snr_db = 20.0;
    const auto r = security::run_reid_benchmark(bench);
    v.require(r.macro_f1 >= 0.95, fmt("macro F1 %.4f", r.macro_f1));
    if (v.pass) v.detail = fmt("%d invariance checks exact, re-ID macro F1 %.4f", checked, r.macro_f1);
    return v;
}

Verdict policy_enforcement() {
    Verdict v;
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> bound_d(1.0, 30.0);
    int cases = 0, allowed = 0;
    for (int i = 0; i < 10000; ++i) {
        security::KeyPolicy p;
        p.max_distance_m = bound_d(rng);
        const double d = p.max_distance_m * std::uniform_real_distribution<double>(1.0 + 1e-9, 5.0)(rng);
        std::optional<ranging::RangeResult> proof;
        switch (i % 3) {
        case 0: break;                                                   // no session at all
        case 1: proof = ranging::RangeResult{d, d / 0.2998, true, {}}; break;  // measured beyond the bound
        default: proof = ranging::RangeResult{1.0, 3.3, false, {}}; break;     // invalid result
        }
        const auto verdict = security::enforce_policy(p, proof, 0, security::RffVerdict::accept);
        ++cases;
        allowed += verdict.allowed();
    }
    v.require(allowed == 0, fmt("%d/%d frames without a valid proof were allowed", allowed, cases));

    std::poisson_distribution<int> offered(12);
    security::KeyPolicy p;
    p.max_frames_per_superframe = 8;
    security::TokenBucket bucket(p.max_frames_per_superframe);
    const ranging::RangeResult near{1.0, 3.3, true, {}};
    std::vector<int> accepted;
    for (std::uint64_t sf = 0; sf < 500; ++sf) {
        int a = 0;
        const int n = sf % 7 == 0 ? 0 : offered(rng);
        for (int i = 0; i < n; ++i) a += security::admit(p, near, bucket, sf, security::RffVerdict::accept).allowed();
        accepted.push_back(a);
    }
    int over = 0;
    for (std::size_t w = 1; w <= 50; ++w) {
        for (std::size_t s = 0; s + w <= accepted.size(); ++s) {
            int sum = 0;
            for (std::size_t i = s; i < s + w; ++i) sum += accepted[i];
            over += sum > static_cast<int>(w * p.max_frames_per_superframe);
        }
    }
    v.require(over == 0, fmt("%d windows exceeded budget x superframes", over));
    if (v.pass) v.detail = fmt("%d/%d denied, 0 windows over budget", cases - allowed, cases);
    return v;
}

Verdict secrecy_maps() {
    Verdict v;
    secrecy::SecrecyScenario s;
    s.eavesdroppers = {{18.0, 2.0, 0.0}};
    s.epsilon = 0.1;
    s.trials = 10000;
    s.grid = {0.0, 0.0, 20.0, 20.0, 1.0, 0.0};
    const secrecy::PropagationModel model;
    const std::uint64_t seed = 2024;
    const std::vector<Position> aps{{5.0, 5.0, 0.0}, {15.0, 15.0, 0.0}, {5.0, 15.0, 0.0}};

    std::vector<secrecy::SecrecyMap> maps;
    double slowest = 0.0;
    for (std::size_t n = 1; n <= aps.size(); ++n) {
        s.access_points.assign(aps.begin(), aps.begin() + static_cast<std::ptrdiff_t>(n));
        const auto t0 = Clock::now();
        maps.push_back(secrecy::build_map(s, model, seed));
        slowest = std::max(slowest, seconds_since(t0));
    }
    int non_monotone = 0;
    for (std::size_t i = 0; i < maps[0].cells.size(); ++i) {
        non_monotone += maps[1].cells[i].rate < maps[0].cells[i].rate;
        non_monotone += maps[2].cells[i].rate < maps[1].cells[i].rate;
    }
    v.require(maps[0].cells.size() == 400, "grid is not 20x20");
    v.require(non_monotone == 0, fmt("%d cells lost rate when an AP was added", non_monotone));
    v.require(slowest < 60.0, fmt("map took %.1f s", slowest));

    // Eavesdropper sitting in the cell centre.
    auto colo = s;
    colo.eavesdroppers = {s.grid.centre(18, 2), s.grid.centre(3, 11)};
    const auto cmap = secrecy::build_map(colo, model, seed);
    v.require(cmap.at(18, 2).rate == 0.0 && cmap.at(3, 11).rate == 0.0, "co-located eavesdropper cell has rate > 0");

    // Quantile against a full sort: largest r with at least ceil((1-eps)T)
    // trials at or above it.
    int quantile_mismatch = 0;
    for (std::size_t c : {0u, 57u, 210u, 399u}) {
        const auto pos = maps[2].cells[c].position;
        auto trials = secrecy::secrecy_trials(pos, s, model, seed);
        std::vector<double> sorted = trials;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        const auto need = static_cast<std::size_t>(std::ceil((1.0 - s.epsilon) * static_cast<double>(sorted.size())));
        const double oracle = sorted[need - 1];
        quantile_mismatch += secrecy::epsilon_quantile(trials, s.epsilon) != oracle;
        quantile_mismatch += maps[2].cells[c].rate != oracle;
    }
    v.require(quantile_mismatch == 0, fmt("%d quantile mismatches", quantile_mismatch));
    if (v.pass) v.detail = fmt("400 cells monotone over 1-2-3 APs, co-located rate 0, quantile exact, %.2f s/map", slowest);
    return v;
}

Verdict determinism() {
    Verdict v;
    const fs::path base = fs::temp_directory_path() / "uwbnet_acceptance";
    int compared = 0;
    for (const char* name : {"reference.json", "diamond.json", "promotion.json"}) {
        const auto cfg = scenario_file(name);
        fs::remove_all(base);
        const auto a = scenario::run_scenario(cfg, base / "a");
        const auto b = scenario::run_scenario(cfg, base / "b");
        v.require(slurp(a.trace) == slurp(b.trace), fmt("%s: trace differs", name));
        v.require(slurp(a.metrics) == slurp(b.metrics), fmt("%s: metrics differ", name));
        v.require(!slurp(a.trace).empty(), fmt("%s: empty trace", name));
        ++compared;
    }
    fs::remove_all(base);
    if (v.pass) v.detail = fmt("%d scenarios re-run with byte-identical trace and metrics", compared);
    return v;
}

} // namespace

int main() {
    const std::pair<const char*, std::function<Verdict()>> criteria[] = {
        {"tdma collision freedom", tdma_collision_freedom},
        {"superframe structure", superframe_structure},
        {"ranging accuracy", ranging_accuracy},
        {"toa defense", toa_defense},
        {"self-healing", self_healing},
        {"leader promotion", leader_promotion},
        {"adaptation codecs", adaptation_codecs},
        {"fingerprint pipeline", fingerprint_pipeline},
        {"policy enforcement", policy_enforcement},
        {"secrecy maps", secrecy_maps},
        {"determinism", determinism},
    };
    int failed = 0;
    int index = 0;
    for (const auto& [name, fn] : criteria) {
        ++index;
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v.pass = false;
            v.detail = std::string("exception: ") + e.what();
        }
        failed += !v.pass;
        std::printf("%s %2d %-24s %s\n", v.pass ? "PASS" : "FAIL", index, name, v.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
