#pragma once

#include "goct/tempo.h"

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

namespace goct {

using Tick = std::int64_t;

inline constexpr Tick kTicksPerBeat = 48;
inline constexpr int kColumns = 4;

/// Per-column event kind. A tap is a lone onset; a hold is onset...release.
enum class EventKind : std::uint8_t { onset, release };

struct ChartEvent {
    Tick tick = 0;
    int column = 0;
    EventKind kind = EventKind::onset;

    friend auto operator<=>(const ChartEvent&, const ChartEvent&) = default;
};

struct Chart {
    TempoMap tempo;
    double difficulty = 0.0;
    std::vector<ChartEvent> events;  // sorted by (tick, column)
    std::int64_t n_beats = 0;

    friend bool operator==(const Chart&, const Chart&) = default;
};

/// Throws ValidationError describing the first broken chart invariant.
void validate_chart(const Chart& chart);

/// Sorts events by (tick, column) in place.
void sort_events(std::vector<ChartEvent>& events);

/// Smallest beat count covering every event (0 for an empty list).
std::int64_t beats_covering(const std::vector<ChartEvent>& events);

/// Distinct ticks that carry at least one event, ascending.
std::vector<Tick> occupied_ticks(const std::vector<ChartEvent>& events);

const char* to_string(EventKind kind);

} // namespace goct
