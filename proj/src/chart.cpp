#include "goct/chart.h"

#include "goct/errors.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

namespace goct {

namespace {

std::string describe(const ChartEvent& e) {
    return std::string(to_string(e.kind)) + " at tick " + std::to_string(e.tick) + " column " +
           std::to_string(e.column);
}

} // namespace

const char* to_string(EventKind kind) {
    return kind == EventKind::onset ? "onset" : "release";
}

void sort_events(std::vector<ChartEvent>& events) {
    std::sort(events.begin(), events.end(), [](const ChartEvent& a, const ChartEvent& b) {
        return a.tick != b.tick ? a.tick < b.tick : a.column < b.column;
    });
}

std::int64_t beats_covering(const std::vector<ChartEvent>& events) {
    Tick last = -1;
    for (const auto& e : events) {
        last = std::max(last, e.tick);
    }
    return last < 0 ? 0 : last / kTicksPerBeat + 1;
}

std::vector<Tick> occupied_ticks(const std::vector<ChartEvent>& events) {
    std::vector<Tick> ticks;
    ticks.reserve(events.size());
    for (const auto& e : events) {
        ticks.push_back(e.tick);
    }
    std::sort(ticks.begin(), ticks.end());
    ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
    return ticks;
}

void validate_chart(const Chart& chart) {
    if (!std::isfinite(chart.difficulty) || chart.difficulty < 0.0) {
        throw ValidationError("difficulty must be finite and >= 0");
    }
    if (chart.n_beats < 0) {
        throw ValidationError("n_beats must be >= 0");
    }
    const Tick end = chart.n_beats * kTicksPerBeat;
    std::array<std::optional<ChartEvent>, kColumns> last{};
    const ChartEvent* prev = nullptr;
    for (const auto& e : chart.events) {
        if (e.column < 0 || e.column >= kColumns) {
            throw ValidationError("column out of range: " + describe(e));
        }
        if (e.tick < 0 || e.tick >= end) {
            throw ValidationError("tick outside [0, 48*n_beats): " + describe(e));
        }
        if (prev != nullptr && (prev->tick > e.tick || (prev->tick == e.tick && prev->column >= e.column))) {
            if (prev->tick == e.tick && prev->column == e.column) {
                throw ValidationError("duplicate tick on one column: " + describe(e));
            }
            throw ValidationError("events not sorted by (tick, column) at " + describe(e));
        }
        auto& slot = last[static_cast<std::size_t>(e.column)];
        if (e.kind == EventKind::release && (!slot || slot->kind != EventKind::onset)) {
            throw ValidationError("release without a preceding onset: " + describe(e));
        }
        slot = e;
        prev = &e;
    }
}

} // namespace goct
