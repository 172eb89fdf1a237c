#include "goct/cchart.h"

#include "goct/errors.h"
#include "goct/text.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <sstream>

namespace goct {

namespace {

struct Item {
    Tick start;
    int column;
    std::optional<Tick> end;  // set for holds
};

std::vector<Item> items_from_events(const std::vector<ChartEvent>& events) {
    std::vector<Item> items;
    std::array<std::optional<std::size_t>, kColumns> open{};
    for (const auto& e : events) {
        auto& slot = open[static_cast<std::size_t>(e.column)];
        if (e.kind == EventKind::onset) {
            slot = items.size();
            items.push_back({e.tick, e.column, std::nullopt});
        } else {
            items[*slot].end = e.tick;
            slot.reset();
        }
    }
    return items;
}

} // namespace

Chart parse_cchart(std::string_view text) {
    const auto all_lines = text::lines(text);
    bool seen_header = false;
    bool seen_keys = false;
    std::optional<double> difficulty;
    std::optional<std::int64_t> beats;
    std::vector<TimingSection> timing;
    std::vector<ChartEvent> events;
    std::vector<std::size_t> event_lines;

    for (std::size_t n = 0; n < all_lines.size(); ++n) {
        const std::size_t line_no = n + 1;
        std::string_view line = all_lines[n];
        if (!seen_header) {
            if (text::trim(line) != "#cchart v1") {
                throw ParseError(line_no, 1, "expected header '#cchart v1'");
            }
            seen_header = true;
            continue;
        }
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        const auto fields = text::split_fields(line);
        if (fields.empty()) {
            continue;
        }
        const auto& key = fields[0].text;
        const auto expect_args = [&](std::size_t n_args) {
            if (fields.size() != n_args + 1) {
                const std::size_t col = fields.size() > n_args + 1 ? fields[n_args + 1].column : fields.back().column;
                throw ParseError(line_no, col,
                                 "'" + std::string(key) + "' takes " + std::to_string(n_args) + " argument(s)");
            }
        };
        const auto int_at = [&](std::size_t i) {
            const auto v = text::parse_int(fields[i].text);
            if (!v) {
                throw ParseError(line_no, fields[i].column, "expected integer, got '" + std::string(fields[i].text) + "'");
            }
            return *v;
        };
        const auto real_at = [&](std::size_t i) {
            const auto v = text::parse_real(fields[i].text);
            if (!v) {
                throw ParseError(line_no, fields[i].column, "expected number, got '" + std::string(fields[i].text) + "'");
            }
            return *v;
        };
        const auto column_at = [&](std::size_t i) {
            const auto c = int_at(i);
            if (c < 0 || c >= kColumns) {
                throw ParseError(line_no, fields[i].column, "column out of range [0,4): " + std::to_string(c));
            }
            return static_cast<int>(c);
        };
        const auto tick_at = [&](std::size_t i) {
            const auto t = int_at(i);
            if (t < 0) {
                throw ParseError(line_no, fields[i].column, "negative tick");
            }
            return t;
        };
        const bool is_event = key == "note" || key == "hold";
        if (!is_event && !events.empty()) {
            throw ParseError(line_no, fields[0].column, "'" + std::string(key) + "' must precede note/hold lines");
        }

        if (key == "keys") {
            expect_args(1);
            if (int_at(1) != kColumns) {
                throw ParseError(line_no, fields[1].column, "only 4-key charts are supported");
            }
            seen_keys = true;
        } else if (key == "difficulty") {
            expect_args(1);
            const double d = real_at(1);
            if (!(d >= 0.0) || !std::isfinite(d)) {
                throw ParseError(line_no, fields[1].column, "difficulty must be finite and >= 0");
            }
            difficulty = d;
        } else if (key == "beats") {
            expect_args(1);
            const auto b = int_at(1);
            if (b < 0) {
                throw ParseError(line_no, fields[1].column, "beats must be >= 0");
            }
            beats = b;
        } else if (key == "timing") {
            expect_args(2);
            const TimingSection s{real_at(1), real_at(2)};
            if (!(s.start_ms >= 0.0) || !std::isfinite(s.start_ms)) {
                throw ParseError(line_no, fields[1].column, "timing start must be finite and >= 0");
            }
            if (!(s.bpm > 0.0) || !std::isfinite(s.bpm)) {
                throw ParseError(line_no, fields[2].column, "bpm must be finite and > 0");
            }
            if (!timing.empty() && !(s.start_ms > timing.back().start_ms)) {
                throw ParseError(line_no, fields[1].column, "timing lines must have ascending start times");
            }
            timing.push_back(s);
        } else if (key == "note") {
            expect_args(2);
            events.push_back({tick_at(2), column_at(1), EventKind::onset});
            event_lines.push_back(line_no);
        } else if (key == "hold") {
            expect_args(3);
            const int col = column_at(1);
            const Tick start = tick_at(2);
            const Tick end = tick_at(3);
            if (end <= start) {
                throw ParseError(line_no, fields[3].column, "hold end tick must exceed start tick");
            }
            events.push_back({start, col, EventKind::onset});
            events.push_back({end, col, EventKind::release});
            event_lines.push_back(line_no);
            event_lines.push_back(line_no);
        } else {
            throw ParseError(line_no, fields[0].column, "unknown directive '" + std::string(key) + "'");
        }
    }

    if (!seen_header) {
        throw ParseError(1, 1, "empty input; expected header '#cchart v1'");
    }
    if (!seen_keys) {
        throw ParseError(0, 0, "missing 'keys' line");
    }
    if (!difficulty) {
        throw ParseError(0, 0, "missing 'difficulty' line");
    }
    if (timing.empty()) {
        throw ParseError(0, 0, "at least one 'timing' line is required");
    }

    // semantic checks in time order, reported against the source line
    std::vector<std::size_t> order(events.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ea = events[a];
        const auto& eb = events[b];
        return ea.tick != eb.tick ? ea.tick < eb.tick : ea.column < eb.column;
    });
    const Tick end_tick = beats ? *beats * kTicksPerBeat : -1;
    std::array<std::optional<EventKind>, kColumns> state{};
    std::array<Tick, kColumns> last_tick{};
    for (const std::size_t i : order) {
        const auto& e = events[i];
        auto& slot = state[static_cast<std::size_t>(e.column)];
        if (slot && last_tick[static_cast<std::size_t>(e.column)] == e.tick) {
            throw ParseError(event_lines[i], 1, "duplicate tick " + std::to_string(e.tick) + " on column " +
                                                    std::to_string(e.column));
        }
        if (e.kind == EventKind::release && slot != EventKind::onset) {
            throw ParseError(event_lines[i], 1, "release at tick " + std::to_string(e.tick) + " on column " +
                                                    std::to_string(e.column) + " has no open onset");
        }
        if (end_tick >= 0 && e.tick >= end_tick) {
            throw ParseError(event_lines[i], 1, "tick " + std::to_string(e.tick) + " lies beyond 'beats'");
        }
        slot = e.kind;
        last_tick[static_cast<std::size_t>(e.column)] = e.tick;
    }

    Chart chart;
    chart.tempo = TempoMap(std::move(timing));
    chart.difficulty = *difficulty;
    sort_events(events);
    chart.n_beats = beats ? *beats : beats_covering(events);
    chart.events = std::move(events);
    validate_chart(chart);
    return chart;
}

std::string serialize_cchart(const Chart& chart) {
    validate_chart(chart);
    std::ostringstream out;
    out << "#cchart v1\n";
    out << "keys " << kColumns << "\n";
    out << "difficulty " << text::format_real(chart.difficulty) << "\n";
    out << "beats " << chart.n_beats << "\n";
    for (const auto& s : chart.tempo.sections()) {
        out << "timing " << text::format_real(s.start_ms) << " " << text::format_real(s.bpm) << "\n";
    }
    for (const auto& item : items_from_events(chart.events)) {
        if (item.end) {
            out << "hold " << item.column << " " << item.start << " " << *item.end << "\n";
        } else {
            out << "note " << item.column << " " << item.start << "\n";
        }
    }
    return out.str();
}

Chart load_cchart(const std::string& path) {
    try {
        return parse_cchart(text::read_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path, e.line(), e.column(), e.message());
    }
}

void save_cchart(const std::string& path, const Chart& chart) {
    text::write_file(path, serialize_cchart(chart));
}

} // namespace goct
