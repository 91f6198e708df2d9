#include "uwb/mac/schedule.hpp"

#include <algorithm>
#include <sstream>

namespace uwb::mac {

std::string to_string(SlotKind kind) {
    switch (kind) {
    case SlotKind::beacon: return "beacon";
    case SlotKind::ranging: return "ranging";
    case SlotKind::leader_data: return "leader_data";
    }
    return "?";
}

std::optional<std::size_t> SuperframeSchedule::beacon_slot(NodeId leader) const {
    for (const auto& s : slots) {
        if (s.kind == SlotKind::beacon && s.owner == leader) return s.index;
    }
    return std::nullopt;
}

std::optional<std::size_t> SuperframeSchedule::data_slot(NodeId leader) const {
    for (const auto& s : slots) {
        if (s.kind == SlotKind::leader_data && s.owner == leader) return s.index;
    }
    return std::nullopt;
}

std::vector<NodeId> SuperframeSchedule::leaders() const {
    std::vector<NodeId> out;
    for (const auto& s : slots) {
        if (s.kind == SlotKind::beacon && s.owner) out.push_back(*s.owner);
    }
    return out;
}

std::vector<std::size_t> SuperframeSchedule::ranging_slots() const {
    std::vector<std::size_t> out;
    for (const auto& s : slots) {
        if (s.kind == SlotKind::ranging) out.push_back(s.index);
    }
    return out;
}

bool SuperframeSchedule::reassign(NodeId failed, NodeId successor) {
    bool changed = false;
    for (auto& s : slots) {
        if (s.owner == failed) {
            s.owner = successor;
            changed = true;
        }
    }
    return changed;
}

SuperframeSchedule build_schedule(std::span<const NodeId> leaders, Picoseconds slot_length) {
    if (leaders.empty()) throw ScheduleError("schedule needs at least one leader");
    if (slot_length <= Picoseconds{0} || kSuperframe % slot_length != Picoseconds{0}) {
        throw ScheduleError("slot length must divide the 100 ms superframe");
    }
    std::vector<NodeId> ordered(leaders.begin(), leaders.end());
    std::sort(ordered.begin(), ordered.end());
    if (std::adjacent_find(ordered.begin(), ordered.end()) != ordered.end()) {
        throw ScheduleError("duplicate leader id");
    }
    const auto count = static_cast<std::size_t>(kSuperframe / slot_length);
    if (count < 2 * ordered.size() + 1) {
        throw ScheduleError("superframe has too few slots for " + std::to_string(ordered.size()) +
                            " leaders");
    }

    SuperframeSchedule schedule;
    schedule.slot_length = slot_length;
    schedule.slots.resize(count);
    const std::size_t leaders_n = ordered.size();
    for (std::size_t i = 0; i < count; ++i) {
        auto& s = schedule.slots[i];
        s.index = i;
        if (i < leaders_n) {
            s.kind = SlotKind::beacon;
            s.owner = ordered[i];
        } else if (i >= count - leaders_n) {
            s.kind = SlotKind::leader_data;
            s.owner = ordered[i - (count - leaders_n)];
        } else {
            s.kind = SlotKind::ranging;
        }
    }
    return schedule;
}

SlotPosition slot_at(const SuperframeSchedule& schedule, SimTime local_time) {
    const auto since_epoch = local_time.time_since_epoch();
    auto within = since_epoch % schedule.duration;
    auto superframe = since_epoch / schedule.duration;
    if (within < Picoseconds{0}) {
        within += schedule.duration;
        --superframe;
    }
    const auto index = static_cast<std::size_t>(within / schedule.slot_length);
    SlotPosition pos;
    pos.slot = &schedule.slots.at(index);
    pos.into_slot = within - schedule.slot_start(index);
    pos.slot_length = schedule.slot_length;
    pos.superframe = static_cast<std::uint64_t>(std::max<std::int64_t>(superframe, 0));
    return pos;
}

std::optional<NodeId> ranging_grantee(const SuperframeSchedule& schedule, std::size_t slot_index,
                                      std::span<const NodeId> roster, std::uint64_t superframe) {
    if (roster.empty() || slot_index >= schedule.slots.size()) return std::nullopt;
    if (schedule.slots[slot_index].kind != SlotKind::ranging) return std::nullopt;
    std::size_t ordinal = 0;
    for (std::size_t i = 0; i < slot_index; ++i) {
        if (schedule.slots[i].kind == SlotKind::ranging) ++ordinal;
    }
    return roster[(ordinal + superframe) % roster.size()];
}

bool may_transmit(NodeId node, const SlotPosition& at, const RangingGrant& grant,
                  bool synchronized, Picoseconds guard, Picoseconds airtime) {
    if (!synchronized || at.slot == nullptr) return false;
    const auto& slot = *at.slot;
    bool permitted = false;
    if (slot.kind == SlotKind::ranging) {
        permitted = grant.grantee == node || (grant.grantee && grant.responder == node);
    } else {
        permitted = slot.owner == node;
    }
    if (!permitted) return false;
    return at.into_slot >= guard && at.into_slot + airtime <= at.slot_length - guard;
}

std::string dump(const SuperframeSchedule& schedule) {
    std::ostringstream out;
    out << "index\tkind\towner\n";
    for (const auto& s : schedule.slots) {
        out << s.index << '\t' << to_string(s.kind) << '\t';
        if (s.owner) out << *s.owner;
        else out << "open";
        out << '\n';
    }
    return out.str();
}

} // namespace uwb::mac
