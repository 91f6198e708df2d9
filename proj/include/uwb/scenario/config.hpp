#pragma once

#include "uwb/engine/radio_medium.hpp"
#include "uwb/mesh/mesh.hpp"
#include "uwb/phy/toa.hpp"
#include "uwb/secrecy/secrecy.hpp"
#include "uwb/security/policy.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace uwb::scenario {

/// Malformed or invalid configuration. The message names the offending
/// field (JSON path) or the line and column of a syntax error.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ZoneSeparation { channel, shared };

/// Largest zone (excluding the leader) whose roster fits one beacon.
inline constexpr std::size_t kMaxZoneMembers = 21;

struct NodeConfig {
    NodeId id = 0;
    mesh::Role role = mesh::Role::leaf;
    int zone = 0;
    Position position{};
    /// Clock frequency error; drawn uniformly in +-drift_ppm when absent.
    std::optional<double> drift_ppm;
    /// Seed of the hardware impairment signature (defaults to the id).
    std::optional<std::uint64_t> device_seed;
    /// Smart device that claims this identity but has its own hardware.
    std::optional<NodeId> impersonates;
    /// Smart devices only: false keeps it out of the leader's registry.
    bool enrolled = true;
    /// Misbehaving node that also transmits outside its slots.
    bool out_of_slot = false;
    std::optional<security::KeyPolicy> policy;
};

struct FlowConfig {
    NodeId src = 0;
    NodeId dst = 0;
    std::size_t size = 64;  // IPv6 payload bytes
    double period_ms = 100.0;
    double start_s = 1.0;
    std::optional<double> stop_s;
};

struct AttackConfig {
    phy::AttackKind kind = phy::AttackKind::sts_advance;
    double magnitude_ns = 10.0;
    NodeId a = 0;
    NodeId b = 0;
    double start_s = 0.0;
    std::optional<double> stop_s;
};

struct NodeEventConfig {
    enum class Kind { kill, revive };
    Kind kind = Kind::kill;
    NodeId node = 0;
    double at_s = 0.0;
};

struct SuperframeConfig {
    double slot_length_us = 1000.0;
    double guard_us = 50.0;
    std::uint64_t sync_validity = 5;
    double reply_delay_us = 200.0;
    /// Members range with their parent every N superframes.
    std::uint64_t ranging_period = 1;
};

struct RadioConfig {
    double max_range_m = 30.0;
    double datarate_bps = 6.8e6;
    double preamble_us = 64.0;
    ZoneSeparation separation = ZoneSeparation::channel;
};

struct RangingConfig {
    double tau_ns = 1.0;
    double noise_sigma_ns = 0.2;
    /// A range proof counts for policy checks this many superframes.
    std::uint64_t proof_validity = 10;
};

struct SecrecyConfig {
    secrecy::SecrecyScenario scenario;
    secrecy::PropagationModel model;
    std::optional<std::uint64_t> seed;
};

struct OutputConfig {
    std::string trace = "trace.log";
    std::string metrics = "metrics.json";
    std::string map = "secrecy_map.csv";
    std::string trace_level = "protocol";
};

struct ScenarioConfig {
    std::string name = "scenario";
    std::uint64_t seed = 1;
    double duration_s = 10.0;
    double drift_ppm = 20.0;
    SuperframeConfig superframe;
    RadioConfig radio;
    RangingConfig ranging;
    /// Defaults per role name plus "default".
    std::map<std::string, security::KeyPolicy> policies;
    std::vector<NodeConfig> nodes;
    std::vector<FlowConfig> flows;
    std::vector<AttackConfig> attacks;
    std::vector<NodeEventConfig> events;
    std::optional<SecrecyConfig> secrecy;
    OutputConfig outputs;

    /// Policy applied to frames sent by `node`: its override, else its role
    /// entry, else "default", else the built-in default (10 m bound for
    /// leaf and smart devices, no bound for forwarding roles).
    [[nodiscard]] security::KeyPolicy policy_for(const NodeConfig& node) const;
    [[nodiscard]] const NodeConfig* find(NodeId id) const;
    /// Sorted distinct zone ids.
    [[nodiscard]] std::vector<int> zones() const;
    /// Leader ids in ascending order.
    [[nodiscard]] std::vector<NodeId> leaders() const;
};

/// Parses JSON text. Throws ConfigError on syntax errors (with line and
/// column) and on missing or mistyped fields (with the field path).
ScenarioConfig parse_config(const std::string& text);
ScenarioConfig load_config(const std::string& path);

/// Every invariant violation, e.g. "duplicate node id 7", "zone 2 lacks
/// leader", "flows[0].dst references unknown node 99". Empty means valid.
std::vector<std::string> validate(const ScenarioConfig& config);

std::string to_string(ZoneSeparation s);

} // namespace uwb::scenario
