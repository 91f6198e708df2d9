#pragma once

#include "uwb/engine/sim_time.hpp"

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uwb::mac {

enum class SlotKind { beacon, ranging, leader_data };

std::string to_string(SlotKind kind);

struct SlotAssignment {
    SlotKind kind = SlotKind::ranging;
    /// Leader owning a beacon or leader-data slot; empty for ranging slots,
    /// which the zone leader grants per superframe.
    std::optional<NodeId> owner;
    std::size_t index = 0;
};

class ScheduleError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr std::chrono::microseconds kDefaultSlotLength{1000};
inline constexpr std::chrono::microseconds kDefaultGuard{50};

/// 100 ms TDMA superframe: beacon slots first, ranging slots, then one
/// leader-data slot per leader.
struct SuperframeSchedule {
    Picoseconds duration = kSuperframe;
    Picoseconds slot_length = kDefaultSlotLength;
    std::vector<SlotAssignment> slots;

    [[nodiscard]] std::size_t slot_count() const { return slots.size(); }
    [[nodiscard]] Picoseconds slot_start(std::size_t index) const {
        return slot_length * static_cast<std::int64_t>(index);
    }
    [[nodiscard]] std::optional<std::size_t> beacon_slot(NodeId leader) const;
    [[nodiscard]] std::optional<std::size_t> data_slot(NodeId leader) const;
    [[nodiscard]] std::vector<NodeId> leaders() const;
    /// Indices of the ranging slots, in order.
    [[nodiscard]] std::vector<std::size_t> ranging_slots() const;
    /// Hands a failed leader's beacon and leader-data slots to `successor`.
    /// Returns false if `failed` owns no slot.
    bool reassign(NodeId failed, NodeId successor);
};

/// Throws ScheduleError for zero leaders, a slot length that does not
/// divide 100 ms, or too few slots for the leaders.
SuperframeSchedule build_schedule(std::span<const NodeId> leaders,
                                  Picoseconds slot_length = kDefaultSlotLength);

struct SlotPosition {
    const SlotAssignment* slot = nullptr;
    Picoseconds into_slot{0};
    Picoseconds slot_length{0};
    /// Superframe number since the epoch.
    std::uint64_t superframe = 0;
};

/// Maps a local time modulo the superframe onto its unique slot.
SlotPosition slot_at(const SuperframeSchedule& schedule, SimTime local_time);

/// Round-robin owner of a ranging slot among a zone's roster. The rotation
/// advances by one member every superframe so the remainder slots are
/// shared fairly.
std::optional<NodeId> ranging_grantee(const SuperframeSchedule& schedule, std::size_t slot_index,
                                      std::span<const NodeId> roster, std::uint64_t superframe);

/// Who may use a ranging slot besides its owner: the grantee and its
/// ranging responder.
struct RangingGrant {
    std::optional<NodeId> grantee;
    std::optional<NodeId> responder;
};

/// True iff `node` owns the slot (or holds / answers its ranging grant),
/// the node is synchronized, and the air interval
/// [into_slot, into_slot + airtime] stays inside the guarded slot.
bool may_transmit(NodeId node, const SlotPosition& at, const RangingGrant& grant,
                  bool synchronized, Picoseconds guard = kDefaultGuard,
                  Picoseconds airtime = Picoseconds{0});

/// Text table "index kind owner" for debugging.
std::string dump(const SuperframeSchedule& schedule);

} // namespace uwb::mac
