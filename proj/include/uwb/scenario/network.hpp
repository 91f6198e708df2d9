#pragma once

#include "uwb/engine/simulator.hpp"
#include "uwb/mac/schedule.hpp"
#include "uwb/mesh/mesh.hpp"
#include "uwb/scenario/config.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace uwb::scenario {

/// A protocol invariant broke during a run (exit status 3 in the CLI).
class InvariantViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PromotionRecord {
    int zone = 0;
    NodeId failed = 0;
    NodeId winner = 0;
    std::uint64_t detected_superframe = 0;
    std::optional<std::uint64_t> first_beacon_superframe;
    std::optional<std::uint64_t> first_ranging_superframe;
};

struct KillRecord {
    NodeId node = 0;
    double at_s = 0.0;
    /// Per flow index: time from the kill to the first delivery of a
    /// datagram generated after it.
    std::map<std::size_t, double> recovery_ms;
};

struct FlowMetrics {
    std::uint64_t generated = 0;
    std::uint64_t delivered = 0;
    double latency_sum_ms = 0.0;
    double latency_max_ms = 0.0;
};

struct Metrics {
    std::uint64_t superframes = 0;
    std::uint64_t events = 0;
    std::uint64_t frames_sent = 0;
    std::uint64_t frames_noncompliant = 0;
    std::uint64_t frames_received = 0;
    std::uint64_t frames_corrupted = 0;
    std::uint64_t collisions = 0;
    std::uint64_t compliant_collisions = 0;

    std::vector<FlowMetrics> flows;

    std::uint64_t ranging_started = 0;
    std::uint64_t ranging_completed = 0;
    std::uint64_t ranging_invalidated = 0;
    std::uint64_t ranging_timeouts = 0;
    double ranging_error_sum_m = 0.0;
    double ranging_error_sq_sum_m2 = 0.0;
    double ranging_error_max_m = 0.0;

    std::uint64_t attack_detections = 0;
    std::map<std::string, std::uint64_t> policy_denials;
    std::uint64_t slot_violations = 0;
    std::map<std::string, std::uint64_t> drops;
    std::uint64_t loops = 0;
    std::uint64_t role_violations = 0;
    std::uint64_t link_removals = 0;
    std::uint64_t lsa_frames = 0;
    std::vector<PromotionRecord> promotions;
    std::vector<int> degraded_zones;
    std::uint64_t associations_accepted = 0;
    std::map<std::string, std::uint64_t> associations_rejected;
    std::vector<KillRecord> kills;

    [[nodiscard]] std::uint64_t datagrams_generated() const;
    [[nodiscard]] std::uint64_t datagrams_delivered() const;
    [[nodiscard]] double delivery_ratio() const;
};

/// Whole-network simulation of one scenario.
///
/// Zones use their own radio channel (or one shared channel); leaders also
/// meet on a backbone channel in their leader-data slots. Every node runs
/// the MAC, ranging, link-state routing and policy state machines over the
/// shared event engine.
class Network {
public:
    explicit Network(const ScenarioConfig& config);
    ~Network();
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    /// Streams the trace to `path` (temp file renamed on close).
    void open_trace(const std::string& path);
    void close_trace();

    /// Runs to the configured duration.
    void run();
    void run_until(SimTime t_end);

    [[nodiscard]] SimTime now() const;
    [[nodiscard]] const Metrics& metrics() const;
    /// Metrics as a JSON document (stable key order).
    [[nodiscard]] std::string metrics_json() const;
    [[nodiscard]] std::uint64_t trace_digest() const;
    [[nodiscard]] std::uint64_t trace_records() const;
    [[nodiscard]] std::uint64_t events_processed() const;

    [[nodiscard]] const mac::SuperframeSchedule& schedule() const;
    [[nodiscard]] std::optional<NodeId> leader_of(int zone) const;
    [[nodiscard]] std::optional<NodeId> parent_of(NodeId node) const;
    [[nodiscard]] bool synchronized(NodeId node) const;
    [[nodiscard]] mesh::RouteTable routes(NodeId node);
    [[nodiscard]] std::vector<NodeId> neighbors(NodeId node) const;
    [[nodiscard]] mesh::Role role(NodeId node) const;
    /// Ranging roster the node applies in the current superframe.
    [[nodiscard]] std::vector<NodeId> roster(NodeId node) const;
    /// Grantee per slot as the node sees superframe `k` (kBroadcast for
    /// non-ranging slots); empty unless `k` is current or just past.
    [[nodiscard]] std::vector<NodeId> grants(NodeId node, std::uint64_t k) const;
    /// Clock error of a node against true time.
    [[nodiscard]] Picoseconds clock_error(NodeId node) const;

    struct Impl;

private:
    std::unique_ptr<Impl> impl_;
};

struct RunArtifacts {
    std::filesystem::path trace;
    std::filesystem::path metrics;
    std::optional<std::filesystem::path> map;
    Metrics metrics_snapshot;
    std::uint64_t trace_digest = 0;
};

/// Runs the scenario and writes trace, metrics and (when configured) the
/// secrecy map into `out_dir`. Relative output names resolve against
/// `out_dir`. On an InvariantViolation the partial trace is flushed before
/// the exception propagates.
RunArtifacts run_scenario(const ScenarioConfig& config, const std::filesystem::path& out_dir);

/// Writes `content` to `path` via a temporary file and rename.
void write_atomic(const std::filesystem::path& path, const std::string& content);

} // namespace uwb::scenario
