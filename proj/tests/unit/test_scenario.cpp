#include <doctest.h>

#include "uwb/mac/schedule.hpp"
#include "uwb/scenario/config.hpp"
#include "uwb/scenario/network.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace uwb;
using namespace uwb::scenario;

namespace {

std::filesystem::path source(const std::string& rel) { return std::filesystem::path(UWBNET_SOURCE_DIR) / rel; }

ScenarioConfig scenario_file(const std::string& name) { return load_config(source("scenarios/" + name).string()); }

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

bool contains(const std::vector<std::string>& v, const std::string& needle) {
    for (const auto& s : v) {
        if (s.find(needle) != std::string::npos) return true;
    }
    return false;
}

const char* kMinimal = R"({
  "nodes": [
    {"id": 1, "role": "leader", "zone": 0, "position": [0, 0]},
    {"id": 2, "role": "full", "zone": 0, "position": [5, 0]},
    {"id": 3, "role": "leaf", "zone": 0, "position": [0, 5]}
  ],
  "flows": [{"src": 3, "dst": 2, "size": 20, "period_ms": 100, "start_s": 0.5}]
})";

std::filesystem::path temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("uwbnet_test_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("syntax errors report line and column") {
    try {
        (void)parse_config("{\n  \"nodes\": [\n    {\"id\": 1,, }\n  ]\n}");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("field errors name the JSON path") {
    CHECK_THROWS_WITH_AS(parse_config(R"({"nodes": [{"id": 1, "role": "leader", "position": "here"}]})"),
                         doctest::Contains("nodes[0].position"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config(R"({"nodes": [{"id": 1, "role": "boss", "position": [0, 0]}]})"),
                         doctest::Contains("nodes[0].role"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config(R"({"nodes": [], "colour": 3})"), doctest::Contains("colour"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config(R"({"nodes": [{"id": 70000, "role": "leaf", "position": [0, 0]}]})"),
                         doctest::Contains("nodes[0].id"), ConfigError);
}

TEST_CASE("validation lists every violation") {
    auto c = parse_config(kMinimal);
    CHECK(validate(c).empty());

    auto dup = c;
    dup.nodes.push_back(dup.nodes[1]);
    CHECK(contains(validate(dup), "duplicate node id 2"));

    auto leaderless = c;
    leaderless.nodes[2].zone = 4;
    CHECK(contains(validate(leaderless), "zone 4 lacks leader"));

    auto two = c;
    two.nodes[1].role = mesh::Role::leader;
    CHECK(contains(validate(two), "zone 0 has more than one leader"));

    auto flow = c;
    flow.flows[0].dst = 99;
    CHECK(contains(validate(flow), "flows[0].dst references unknown node 99"));

    auto slots = c;
    slots.superframe.slot_length_us = 300.0;
    CHECK(contains(validate(slots), "slot_length_us must divide 100 ms"));

    auto big = c;
    for (NodeId id = 100; id < 100 + kMaxZoneMembers; ++id) big.nodes.push_back({id, mesh::Role::leaf, 0, {1, 1, 0}});
    CHECK(contains(validate(big), "at most 21"));

    auto tight = c;
    tight.superframe.reply_delay_us = 600.0;
    CHECK(contains(validate(tight), "too short for a ranging exchange"));

    auto imp = c;
    imp.nodes[2].impersonates = 2;
    CHECK(contains(validate(imp), "only smart devices may impersonate"));
}

TEST_CASE("shipped scenarios validate") {
    for (const char* name : {"reference.json", "diamond.json", "promotion.json"}) {
        CAPTURE(name);
        CHECK(validate(scenario_file(name)).empty());
    }
    const auto ref = scenario_file("reference.json");
    CHECK(ref.nodes.size() == 40);
    CHECK(ref.leaders().size() == 3);
    CHECK(ref.zones().size() == 3);
}

TEST_CASE("policy lookup order") {
    auto c = parse_config(R"({
      "policy": {"default": {"max_frames_per_superframe": 7}, "leaf": {"max_distance_m": 4}},
      "nodes": [
        {"id": 1, "role": "leader", "position": [0, 0]},
        {"id": 2, "role": "leaf", "position": [1, 0]},
        {"id": 3, "role": "leaf", "position": [2, 0], "policy": {"max_distance_m": null}},
        {"id": 4, "role": "half", "position": [3, 0]}
      ]})");
    CHECK(c.policy_for(*c.find(2)).max_distance_m == 4.0);
    CHECK(c.policy_for(*c.find(2)).max_frames_per_superframe == 7);
    CHECK_FALSE(c.policy_for(*c.find(3)).proximity_active());
    CHECK(c.policy_for(*c.find(3)).max_frames_per_superframe == 7);
    CHECK(c.policy_for(*c.find(4)).max_frames_per_superframe == 7);

    const auto bare = parse_config(kMinimal);
    CHECK(bare.policy_for(*bare.find(3)).max_distance_m == 10.0);
    CHECK_FALSE(bare.policy_for(*bare.find(2)).proximity_active());
}

TEST_CASE("an invalid config cannot be simulated") {
    auto c = parse_config(kMinimal);
    c.nodes[0].role = mesh::Role::full;
    CHECK_THROWS_AS(Network{c}, ConfigError);
}

TEST_CASE("small zone: sync, ranging and delivery") {
    auto c = parse_config(kMinimal);
    c.duration_s = 3.0;
    Network net(c);
    net.run();
    const auto& m = net.metrics();
    CHECK(net.synchronized(2));
    CHECK(net.synchronized(3));
    CHECK(net.parent_of(3) == std::optional<NodeId>(1));
    CHECK(m.ranging_completed > 40);
    CHECK(m.ranging_error_max_m < 0.2);
    CHECK(m.compliant_collisions == 0);
    CHECK(m.frames_noncompliant == 0);
    CHECK(m.slot_violations == 0);
    CHECK(m.datagrams_generated() > 20);
    CHECK(m.delivery_ratio() > 0.9);
    CHECK(std::abs(to_ns(net.clock_error(3))) < 3000.0);
}

TEST_CASE("grant tables follow the round-robin formula and agree across the zone") {
    auto c = scenario_file("reference.json");
    c.duration_s = 1.5;
    c.outputs.trace_level = "off";
    Network net(c);
    net.run_until(SimTime{std::chrono::milliseconds(1450)});
    const std::uint64_t k = 14;
    const auto& sched = net.schedule();
    for (int zone : c.zones()) {
        const NodeId leader = *net.leader_of(zone);
        const auto roster = net.roster(leader);
        REQUIRE_FALSE(roster.empty());
        const auto table = net.grants(leader, k);
        REQUIRE(table.size() == sched.slot_count());
        for (std::size_t s = 0; s < sched.slot_count(); ++s) {
            const auto want = mac::ranging_grantee(sched, s, roster, k);
            CHECK(table[s] == want.value_or(kBroadcast));
        }
        for (const auto& n : c.nodes) {
            if (n.zone != zone || n.id == leader || n.out_of_slot) continue;
            if (!net.synchronized(n.id)) continue;
            CAPTURE(n.id);
            CHECK(net.grants(n.id, k) == table);
        }
    }
}

TEST_CASE("runs are deterministic") {
    auto c = scenario_file("diamond.json");
    c.duration_s = 6.0;
    const auto a = temp_dir("det_a");
    const auto b = temp_dir("det_b");
    const auto ra = run_scenario(c, a);
    const auto rb = run_scenario(c, b);
    CHECK(ra.trace_digest == rb.trace_digest);
    CHECK(slurp(ra.trace) == slurp(rb.trace));
    CHECK(slurp(ra.metrics) == slurp(rb.metrics));
    CHECK_FALSE(std::filesystem::exists(a / "trace.log.tmp"));
    CHECK_FALSE(std::filesystem::exists(a / "metrics.json.tmp"));

    c.seed += 1;
    const auto rc = run_scenario(c, temp_dir("det_c"));
    CHECK(rc.trace_digest != ra.trace_digest);
}

TEST_CASE("reference scenario golden: first second") {
    auto c = scenario_file("reference.json");
    c.duration_s = 1.0;
    Network net(c);
    net.run();
    std::ostringstream got;
    char digest[17];
    std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(net.trace_digest()));
    got << "events " << net.events_processed() << "\nrecords " << net.trace_records() << "\ndigest " << digest
        << "\n";
    const auto golden = source("tests/golden/reference_1s.txt");
    if (std::getenv("UWBNET_REGENERATE_GOLDENS")) write_atomic(golden, got.str());
    REQUIRE_MESSAGE(std::filesystem::exists(golden), "missing golden " << golden);
    CHECK(got.str() == slurp(golden));
}

TEST_CASE("diamond: traffic reroutes after a relay dies") {
    const auto c = scenario_file("diamond.json");
    Network net(c);
    net.run();
    const auto& m = net.metrics();
    REQUIRE(m.kills.size() == 1);
    REQUIRE(m.kills[0].recovery_ms.contains(0));
    CHECK(m.kills[0].recovery_ms.at(0) <= 300.0);
    CHECK(m.loops == 0);
    CHECK(m.link_removals >= 2);
    CHECK(m.flows[0].delivered + 4 >= m.flows[0].generated);
    const auto routes = net.routes(1);
    REQUIRE(routes.contains(4));
    CHECK(routes.at(4).next_hop == 3);
}

TEST_CASE("promotion: a full node takes over the zone") {
    const auto c = scenario_file("promotion.json");
    Network net(c);
    net.run();
    const auto& m = net.metrics();
    REQUIRE(m.promotions.size() == 1);
    const auto& p = m.promotions[0];
    CHECK(p.failed == 1);
    CHECK(p.winner == 10);
    REQUIRE(p.first_beacon_superframe);
    CHECK(*p.first_beacon_superframe <= p.detected_superframe + 1);
    REQUIRE(p.first_ranging_superframe);
    CHECK(*p.first_ranging_superframe <= p.detected_superframe + 3);
    CHECK(net.leader_of(0) == std::optional<NodeId>(10));
    CHECK(net.role(10) == mesh::Role::leader);
    CHECK(net.schedule().beacon_slot(10).has_value());
    CHECK(net.schedule().data_slot(10).has_value());
    CHECK_FALSE(net.schedule().beacon_slot(1).has_value());
    CHECK(m.compliant_collisions == 0);
    CHECK(m.role_violations == 0);
    CHECK(m.degraded_zones.empty());
}

TEST_CASE("killed and revived member rejoins") {
    auto c = parse_config(kMinimal);
    c.duration_s = 4.0;
    c.events = {{NodeEventConfig::Kind::kill, 2, 1.0}, {NodeEventConfig::Kind::revive, 2, 2.0}};
    Network net(c);
    net.run();
    CHECK(net.synchronized(2));
    CHECK(net.parent_of(2) == std::optional<NodeId>(1));
    CHECK(net.metrics().flows[0].delivered > 0);
}

TEST_CASE("a zone without eligible members degrades") {
    auto c = parse_config(R"({
      "duration_s": 2.0,
      "nodes": [
        {"id": 1, "role": "leader", "position": [0, 0]},
        {"id": 2, "role": "half", "position": [5, 0]},
        {"id": 3, "role": "leaf", "position": [0, 5]}
      ],
      "events": [{"kind": "kill", "node": 1, "at_s": 0.55}]})");
    Network net(c);
    net.run();
    CHECK(net.metrics().promotions.empty());
    REQUIRE(net.metrics().degraded_zones.size() == 1);
    CHECK(net.metrics().degraded_zones[0] == 0);
}

TEST_CASE("attacked link: sessions invalidated and proximity proofs lapse") {
    auto c = scenario_file("reference.json");
    c.duration_s = 16.0;
    c.outputs.trace_level = "off";
    Network net(c);
    net.run();
    const auto& m = net.metrics();
    CHECK(m.attack_detections >= 50);
    CHECK(m.ranging_invalidated == m.attack_detections);
    REQUIRE(m.policy_denials.contains("no-proof-of-proximity"));
    CHECK(m.policy_denials.at("no-proof-of-proximity") > 0);
    CHECK(m.associations_accepted >= 3);
    CHECK(m.associations_rejected.contains("authentication"));
    CHECK(m.compliant_collisions == 0);
}

TEST_CASE("metrics json is sorted and complete") {
    auto c = parse_config(kMinimal);
    c.duration_s = 1.0;
    Network net(c);
    net.run();
    const auto j = net.metrics_json();
    for (const char* key : {"\"delivery\"", "\"ranging\"", "\"attack_detections\"", "\"policy_denials\"",
                            "\"trace\"", "\"promotions\""}) {
        CHECK(j.find(key) != std::string::npos);
    }
    CHECK(j.find("\"attack_detections\"") < j.find("\"delivery\""));
}
