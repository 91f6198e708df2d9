#include "uwb/scenario/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace uwb::scenario {

using nlohmann::json;

namespace {

/// Field access with the JSON path kept for error messages.
class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    void allow(std::initializer_list<const char*> keys) const {
        for (const auto& [k, v] : j_.items()) {
            if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
                throw ConfigError(field(k) + ": unknown field");
            }
        }
    }

    [[nodiscard]] bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    [[nodiscard]] bool present(const char* key) const { return j_.contains(key); }
    [[nodiscard]] const json& at(const char* key) const {
        if (!j_.contains(key)) throw ConfigError(field(key) + ": missing");
        return j_.at(key);
    }
    [[nodiscard]] std::string field(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

    double number(const char* key) const {
        const auto& v = at(key);
        if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ConfigError(field(key) + ": not finite");
        return d;
    }
    double number(const char* key, double fallback) const { return has(key) ? number(key) : fallback; }

    std::uint64_t unsigned_int(const char* key) const {
        const auto& v = at(key);
        if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0 && !v.is_number_unsigned())) {
            throw ConfigError(field(key) + ": expected a non-negative integer");
        }
        return v.get<std::uint64_t>();
    }
    std::uint64_t unsigned_int(const char* key, std::uint64_t fallback) const {
        return has(key) ? unsigned_int(key) : fallback;
    }

    NodeId node_id(const char* key) const {
        const auto v = unsigned_int(key);
        if (v >= kBroadcast) throw ConfigError(field(key) + ": node id must be below 65535");
        return static_cast<NodeId>(v);
    }

    int integer(const char* key, int fallback) const {
        if (!has(key)) return fallback;
        const auto& v = at(key);
        if (!v.is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
        return v.get<int>();
    }

    bool boolean(const char* key, bool fallback) const {
        if (!has(key)) return fallback;
        const auto& v = at(key);
        if (!v.is_boolean()) throw ConfigError(field(key) + ": expected true or false");
        return v.get<bool>();
    }

    std::string string(const char* key, const std::string& fallback) const {
        if (!has(key)) return fallback;
        const auto& v = at(key);
        if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
        return v.get<std::string>();
    }

    const json& array(const char* key) const {
        const auto& v = at(key);
        if (!v.is_array()) throw ConfigError(field(key) + ": expected an array");
        return v;
    }

    Obj object(const char* key) const { return Obj(at(key), field(key)); }

private:
    const json& j_;
    std::string path_;
};

Position position(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() < 2 || v.size() > 3 ||
        !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); })) {
        throw ConfigError(path + ": expected [x, y] or [x, y, z] in metres");
    }
    return {v[0].get<double>(), v[1].get<double>(), v.size() == 3 ? v[2].get<double>() : 0.0};
}

std::vector<Position> positions(const Obj& o, const char* key) {
    std::vector<Position> out;
    const auto& arr = o.array(key);
    for (std::size_t i = 0; i < arr.size(); ++i) {
        out.push_back(position(arr[i], o.field(key) + "[" + std::to_string(i) + "]"));
    }
    return out;
}

security::KeyPolicy policy(const Obj& o, security::KeyPolicy base) {
    o.allow({"max_distance_m", "max_frames_per_superframe", "rff_required", "rff_threshold"});
    // null lifts the proximity bound
    if (o.has("max_distance_m")) base.max_distance_m = o.number("max_distance_m");
    else if (o.present("max_distance_m")) base.max_distance_m = std::numeric_limits<double>::infinity();
    if (o.has("max_frames_per_superframe")) {
        base.max_frames_per_superframe = static_cast<std::uint32_t>(o.unsigned_int("max_frames_per_superframe"));
    }
    base.rff_required = o.boolean("rff_required", base.rff_required);
    base.rff_threshold = o.number("rff_threshold", base.rff_threshold);
    try {
        base.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("policy: ") + e.what());
    }
    return base;
}

secrecy::Grid grid(const Obj& o) {
    o.allow({"x_min", "y_min", "x_max", "y_max", "resolution_m", "z"});
    secrecy::Grid g;
    g.x_min = o.number("x_min", g.x_min);
    g.y_min = o.number("y_min", g.y_min);
    g.x_max = o.number("x_max", g.x_max);
    g.y_max = o.number("y_max", g.y_max);
    g.resolution_m = o.number("resolution_m", g.resolution_m);
    g.z = o.number("z", g.z);
    return g;
}

SecrecyConfig secrecy_config(const Obj& o) {
    o.allow({"access_points", "eavesdroppers", "eavesdropper_region", "epsilon", "grid", "trials",
             "thresholds", "model", "seed"});
    SecrecyConfig c;
    auto& s = c.scenario;
    s.access_points = positions(o, "access_points");
    if (o.has("eavesdroppers")) s.eavesdroppers = positions(o, "eavesdroppers");
    if (o.has("eavesdropper_region")) {
        const auto region = grid(o.object("eavesdropper_region"));
        try {
            for (const auto& p : secrecy::region_points(region)) s.eavesdroppers.push_back(p);
        } catch (const secrecy::SecrecyError& e) {
            throw ConfigError(o.field("eavesdropper_region") + ": " + e.what());
        }
    }
    s.epsilon = o.number("epsilon", s.epsilon);
    if (o.has("grid")) s.grid = grid(o.object("grid"));
    s.trials = o.unsigned_int("trials", s.trials);
    if (o.has("thresholds")) {
        const auto& t = o.array("thresholds");
        if (t.size() != 4 || !std::all_of(t.begin(), t.end(), [](const json& e) { return e.is_number(); })) {
            throw ConfigError(o.field("thresholds") + ": expected four numbers");
        }
        for (std::size_t i = 0; i < 4; ++i) s.thresholds[i] = t[i].get<double>();
    }
    if (o.has("model")) {
        const auto m = o.object("model");
        m.allow({"pl0_db", "d0_m", "exponent", "sigma_db", "noise_floor_dbm", "tx_power_dbm"});
        c.model.pl0_db = m.number("pl0_db", c.model.pl0_db);
        c.model.d0_m = m.number("d0_m", c.model.d0_m);
        c.model.exponent = m.number("exponent", c.model.exponent);
        c.model.sigma_db = m.number("sigma_db", c.model.sigma_db);
        c.model.noise_floor_dbm = m.number("noise_floor_dbm", c.model.noise_floor_dbm);
        c.model.tx_power_dbm = m.number("tx_power_dbm", c.model.tx_power_dbm);
    }
    if (o.has("seed")) c.seed = o.unsigned_int("seed");
    return c;
}

std::string line_col(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    // nlohmann reports the byte after the offending character.
    return "line " + std::to_string(line) + ", column " + std::to_string(col > 1 ? col - 1 : col);
}

} // namespace

std::string to_string(ZoneSeparation s) { return s == ZoneSeparation::channel ? "channel" : "shared"; }

security::KeyPolicy ScenarioConfig::policy_for(const NodeConfig& node) const {
    if (node.policy) return *node.policy;
    auto it = policies.find(mesh::to_string(node.role));
    if (it != policies.end()) return it->second;
    auto d = policies.find("default");
    if (d != policies.end()) return d->second;
    security::KeyPolicy p;
    if (node.role != mesh::Role::leaf && node.role != mesh::Role::smart_device) {
        p.max_distance_m = std::numeric_limits<double>::infinity();
    }
    return p;
}

const NodeConfig* ScenarioConfig::find(NodeId id) const {
    auto it = std::find_if(nodes.begin(), nodes.end(), [&](const NodeConfig& n) { return n.id == id; });
    return it == nodes.end() ? nullptr : &*it;
}

std::vector<int> ScenarioConfig::zones() const {
    std::set<int> z;
    for (const auto& n : nodes) z.insert(n.zone);
    return {z.begin(), z.end()};
}

std::vector<NodeId> ScenarioConfig::leaders() const {
    std::vector<NodeId> out;
    for (const auto& n : nodes) {
        if (n.role == mesh::Role::leader) out.push_back(n.id);
    }
    std::sort(out.begin(), out.end());
    return out;
}

ScenarioConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(line_col(text, e.byte) + ": " + e.what());
    }
    const Obj root(doc, "");
    root.allow({"$schema", "name", "seed", "duration_s", "drift_ppm", "superframe", "radio", "ranging",
                "policy", "nodes", "flows", "attacks", "events", "secrecy", "outputs"});
    ScenarioConfig c;
    c.name = root.string("name", c.name);
    c.seed = root.unsigned_int("seed", c.seed);
    c.duration_s = root.number("duration_s", c.duration_s);
    c.drift_ppm = root.number("drift_ppm", c.drift_ppm);

    if (root.has("superframe")) {
        const auto o = root.object("superframe");
        o.allow({"slot_length_us", "guard_us", "sync_validity", "reply_delay_us", "ranging_period"});
        auto& s = c.superframe;
        s.slot_length_us = o.number("slot_length_us", s.slot_length_us);
        s.guard_us = o.number("guard_us", s.guard_us);
        s.sync_validity = o.unsigned_int("sync_validity", s.sync_validity);
        s.reply_delay_us = o.number("reply_delay_us", s.reply_delay_us);
        s.ranging_period = o.unsigned_int("ranging_period", s.ranging_period);
    }
    if (root.has("radio")) {
        const auto o = root.object("radio");
        o.allow({"max_range_m", "datarate_bps", "preamble_us", "zone_separation"});
        auto& r = c.radio;
        r.max_range_m = o.number("max_range_m", r.max_range_m);
        r.datarate_bps = o.number("datarate_bps", r.datarate_bps);
        r.preamble_us = o.number("preamble_us", r.preamble_us);
        const auto sep = o.string("zone_separation", "channel");
        if (sep == "channel") r.separation = ZoneSeparation::channel;
        else if (sep == "shared") r.separation = ZoneSeparation::shared;
        else throw ConfigError(o.field("zone_separation") + ": expected \"channel\" or \"shared\"");
    }
    if (root.has("ranging")) {
        const auto o = root.object("ranging");
        o.allow({"tau_ns", "noise_sigma_ns", "proof_validity"});
        c.ranging.tau_ns = o.number("tau_ns", c.ranging.tau_ns);
        c.ranging.noise_sigma_ns = o.number("noise_sigma_ns", c.ranging.noise_sigma_ns);
        c.ranging.proof_validity = o.unsigned_int("proof_validity", c.ranging.proof_validity);
    }
    if (root.has("policy")) {
        const auto o = root.object("policy");
        o.allow({"default", "leader", "full", "half", "leaf", "border", "smart_device"});
        security::KeyPolicy base;
        if (o.has("default")) {
            base = policy(o.object("default"), base);
            c.policies["default"] = base;
        }
        for (const char* role : {"leader", "full", "half", "leaf", "border", "smart_device"}) {
            if (o.has(role)) c.policies[role] = policy(o.object(role), base);
        }
    }

    const auto& nodes = root.array("nodes");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const Obj o(nodes[i], "nodes[" + std::to_string(i) + "]");
        o.allow({"id", "role", "zone", "position", "drift_ppm", "device_seed", "impersonates", "enrolled",
                 "out_of_slot", "policy"});
        NodeConfig n;
        n.id = o.node_id("id");
        try {
            n.role = mesh::role_from_string(o.string("role", ""));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(o.field("role") + ": " + e.what());
        }
        n.zone = o.integer("zone", 0);
        n.position = position(o.at("position"), o.field("position"));
        if (o.has("drift_ppm")) n.drift_ppm = o.number("drift_ppm");
        if (o.has("device_seed")) n.device_seed = o.unsigned_int("device_seed");
        if (o.has("impersonates")) n.impersonates = o.node_id("impersonates");
        n.enrolled = o.boolean("enrolled", true);
        n.out_of_slot = o.boolean("out_of_slot", false);
        c.nodes.push_back(n);
    }
    // Policy overrides resolve against the role defaults, so read them last.
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const Obj o(nodes[i], "nodes[" + std::to_string(i) + "]");
        if (o.has("policy")) c.nodes[i].policy = policy(o.object("policy"), c.policy_for(c.nodes[i]));
    }

    if (root.has("flows")) {
        const auto& flows = root.array("flows");
        for (std::size_t i = 0; i < flows.size(); ++i) {
            const Obj o(flows[i], "flows[" + std::to_string(i) + "]");
            o.allow({"src", "dst", "size", "period_ms", "start_s", "stop_s"});
            FlowConfig f;
            f.src = o.node_id("src");
            f.dst = o.node_id("dst");
            f.size = o.unsigned_int("size", f.size);
            f.period_ms = o.number("period_ms", f.period_ms);
            f.start_s = o.number("start_s", f.start_s);
            if (o.has("stop_s")) f.stop_s = o.number("stop_s");
            c.flows.push_back(f);
        }
    }
    if (root.has("attacks")) {
        const auto& attacks = root.array("attacks");
        for (std::size_t i = 0; i < attacks.size(); ++i) {
            const Obj o(attacks[i], "attacks[" + std::to_string(i) + "]");
            o.allow({"kind", "magnitude_ns", "link", "start_s", "stop_s"});
            AttackConfig a;
            const auto kind = o.string("kind", "");
            if (kind == "sts_advance") a.kind = phy::AttackKind::sts_advance;
            else if (kind == "phy_delay") a.kind = phy::AttackKind::phy_delay;
            else throw ConfigError(o.field("kind") + ": expected \"sts_advance\" or \"phy_delay\"");
            a.magnitude_ns = o.number("magnitude_ns");
            const auto& link = o.array("link");
            if (link.size() != 2 || !link[0].is_number_unsigned() || !link[1].is_number_unsigned()) {
                throw ConfigError(o.field("link") + ": expected [node, node]");
            }
            a.a = link[0].get<NodeId>();
            a.b = link[1].get<NodeId>();
            a.start_s = o.number("start_s", 0.0);
            if (o.has("stop_s")) a.stop_s = o.number("stop_s");
            c.attacks.push_back(a);
        }
    }
    if (root.has("events")) {
        const auto& events = root.array("events");
        for (std::size_t i = 0; i < events.size(); ++i) {
            const Obj o(events[i], "events[" + std::to_string(i) + "]");
            o.allow({"kind", "node", "at_s"});
            NodeEventConfig e;
            const auto kind = o.string("kind", "");
            if (kind == "kill") e.kind = NodeEventConfig::Kind::kill;
            else if (kind == "revive") e.kind = NodeEventConfig::Kind::revive;
            else throw ConfigError(o.field("kind") + ": expected \"kill\" or \"revive\"");
            e.node = o.node_id("node");
            e.at_s = o.number("at_s");
            c.events.push_back(e);
        }
    }
    if (root.has("secrecy")) c.secrecy = secrecy_config(root.object("secrecy"));
    if (root.has("outputs")) {
        const auto o = root.object("outputs");
        o.allow({"trace", "metrics", "map", "trace_level"});
        c.outputs.trace = o.string("trace", c.outputs.trace);
        c.outputs.metrics = o.string("metrics", c.outputs.metrics);
        c.outputs.map = o.string("map", c.outputs.map);
        c.outputs.trace_level = o.string("trace_level", c.outputs.trace_level);
    }
    return c;
}

ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot read file");
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::vector<std::string> validate(const ScenarioConfig& c) {
    std::vector<std::string> v;
    auto node_ref = [&](const std::string& field, NodeId id) {
        if (!c.find(id)) v.push_back(field + " references unknown node " + std::to_string(id));
    };

    if (!(c.duration_s > 0.0)) v.push_back("duration_s must be positive");
    if (!(c.drift_ppm >= 0.0)) v.push_back("drift_ppm must be non-negative");
    const auto& sf = c.superframe;
    const double slot_ps = sf.slot_length_us * 1e6;
    if (!(sf.slot_length_us > 0.0) || std::fmod(1e11, slot_ps) != 0.0 ||
        slot_ps != std::floor(slot_ps)) {
        v.push_back("superframe.slot_length_us must divide 100 ms");
    }
    if (!(sf.guard_us >= 0.0) || !(2.0 * sf.guard_us < sf.slot_length_us)) {
        v.push_back("superframe.guard_us must be below half a slot");
    }
    if (sf.sync_validity < 1) v.push_back("superframe.sync_validity must be at least 1");
    if (sf.ranging_period < 1) v.push_back("superframe.ranging_period must be at least 1");
    if (!(sf.reply_delay_us > 0.0)) v.push_back("superframe.reply_delay_us must be positive");
    if (c.radio.datarate_bps > 0.0 && sf.reply_delay_us > 0.0) {
        // poll, response after one reply delay, final after another
        auto air_us = [&](double bytes) { return c.radio.preamble_us + bytes * 8.0 / c.radio.datarate_bps * 1e6; };
        if (sf.reply_delay_us <= air_us(28.0)) v.push_back("superframe.reply_delay_us is shorter than a response frame");
        if (2.0 * sf.guard_us + 2.0 * sf.reply_delay_us + air_us(32.0) > sf.slot_length_us) {
            v.push_back("superframe.slot_length_us is too short for a ranging exchange");
        }
    }
    if (!(c.radio.max_range_m > 0.0)) v.push_back("radio.max_range_m must be positive");
    if (!(c.radio.datarate_bps > 0.0)) v.push_back("radio.datarate_bps must be positive");
    if (!(c.radio.preamble_us >= 0.0)) v.push_back("radio.preamble_us must be non-negative");
    if (!(c.ranging.tau_ns > 0.0)) v.push_back("ranging.tau_ns must be positive");
    if (!(c.ranging.noise_sigma_ns >= 0.0)) v.push_back("ranging.noise_sigma_ns must be non-negative");

    if (c.nodes.empty()) v.push_back("no nodes");
    std::set<NodeId> seen;
    std::map<int, int> leaders_per_zone;
    for (const auto& n : c.nodes) {
        if (!seen.insert(n.id).second) v.push_back("duplicate node id " + std::to_string(n.id));
        leaders_per_zone[n.zone] += n.role == mesh::Role::leader ? 1 : 0;
        if (n.impersonates) {
            node_ref("node " + std::to_string(n.id) + " impersonates", *n.impersonates);
            if (n.role != mesh::Role::smart_device) {
                v.push_back("node " + std::to_string(n.id) + ": only smart devices may impersonate");
            }
        }
        if (n.drift_ppm && !std::isfinite(*n.drift_ppm)) v.push_back("node " + std::to_string(n.id) + ": bad drift");
    }
    std::map<int, std::size_t> members_per_zone;
    for (const auto& n : c.nodes) {
        if (n.zone < 0 || n.zone > 254) v.push_back("node " + std::to_string(n.id) + ": zone must lie in 0..254");
        if (n.role != mesh::Role::leader) ++members_per_zone[n.zone];
    }
    for (const auto& [zone, count] : members_per_zone) {
        if (count > kMaxZoneMembers) {
            v.push_back("zone " + std::to_string(zone) + " has " + std::to_string(count) + " members (at most " +
                        std::to_string(kMaxZoneMembers) + " fit a beacon roster)");
        }
    }
    for (const auto& [zone, count] : leaders_per_zone) {
        if (count == 0) v.push_back("zone " + std::to_string(zone) + " lacks leader");
        if (count > 1) v.push_back("zone " + std::to_string(zone) + " has more than one leader");
    }
    if (!c.leaders().empty()) {
        const double slots = 1e11 / slot_ps;
        if (slots < 2.0 * static_cast<double>(c.leaders().size()) + 1.0) {
            v.push_back("superframe has too few slots for " + std::to_string(c.leaders().size()) + " leaders");
        }
    }

    for (std::size_t i = 0; i < c.flows.size(); ++i) {
        const auto& f = c.flows[i];
        const auto p = "flows[" + std::to_string(i) + "]";
        node_ref(p + ".src", f.src);
        node_ref(p + ".dst", f.dst);
        if (f.src == f.dst) v.push_back(p + ": src equals dst");
        if (f.size < 1 || f.size > 1232) v.push_back(p + ".size must lie in 1..1232");
        if (!(f.period_ms > 0.0)) v.push_back(p + ".period_ms must be positive");
        if (!(f.start_s >= 0.0)) v.push_back(p + ".start_s must be non-negative");
    }
    for (std::size_t i = 0; i < c.attacks.size(); ++i) {
        const auto& a = c.attacks[i];
        const auto p = "attacks[" + std::to_string(i) + "]";
        node_ref(p + ".link", a.a);
        node_ref(p + ".link", a.b);
        if (a.a == a.b) v.push_back(p + ".link joins a node to itself");
        if (!(a.magnitude_ns > 0.0)) v.push_back(p + ".magnitude_ns must be positive");
        if (!(a.start_s >= 0.0)) v.push_back(p + ".start_s must be non-negative");
    }
    for (std::size_t i = 0; i < c.events.size(); ++i) {
        const auto p = "events[" + std::to_string(i) + "]";
        node_ref(p + ".node", c.events[i].node);
        if (!(c.events[i].at_s >= 0.0)) v.push_back(p + ".at_s must be non-negative");
    }
    if (c.secrecy) {
        try {
            c.secrecy->scenario.validate();
            c.secrecy->model.validate();
        } catch (const secrecy::SecrecyError& e) {
            v.push_back(std::string("secrecy: ") + e.what());
        }
    }
    const auto& lvl = c.outputs.trace_level;
    if (lvl != "off" && lvl != "protocol" && lvl != "full") {
        v.push_back("outputs.trace_level must be off, protocol or full");
    }
    for (const auto& n : c.nodes) {
        try {
            mesh::NodeDescriptor::make(n.id, n.role, n.position).validate();
        } catch (const mesh::RoleError& e) {
            v.push_back(e.what());
        }
    }
    return v;
}

} // namespace uwb::scenario
