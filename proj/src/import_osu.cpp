#include "goct/importers.h"

#include "goct/errors.h"
#include "goct/text.h"

#include <algorithm>
#include <cmath>
#include <map>

namespace goct {

namespace {

struct RawObject {
    double time_ms;
    int column;
    bool hold;
    double end_ms;
    std::size_t line;
};

struct OsuFile {
    std::map<std::string, std::string, std::less<>> general;
    std::map<std::string, std::string, std::less<>> difficulty;
    std::vector<TimingSection> timing;
    std::vector<RawObject> objects;
};

std::string_view section_name(std::string_view line) {
    line = text::trim(line);
    if (line.size() >= 2 && line.front() == '[' && line.back() == ']') {
        return line.substr(1, line.size() - 2);
    }
    return {};
}

double real_field(std::string_view s, std::size_t line, std::string_view what) {
    const auto v = text::parse_real(text::trim(s));
    if (!v || !std::isfinite(*v)) {
        throw ParseError(line, 1, "bad " + std::string(what) + " '" + std::string(s) + "'");
    }
    return *v;
}

OsuFile read_osu(std::string_view input) {
    OsuFile f;
    std::string_view section;
    const auto all = text::lines(input);
    for (std::size_t n = 0; n < all.size(); ++n) {
        const std::size_t line_no = n + 1;
        const auto line = text::trim(all[n]);
        if (line.empty() || line.starts_with("//")) {
            continue;
        }
        if (const auto name = section_name(line); !name.empty()) {
            section = name;
            continue;
        }
        if (section == "General" || section == "Difficulty") {
            const auto colon = line.find(':');
            if (colon == std::string_view::npos) {
                continue;
            }
            auto& target = section == "General" ? f.general : f.difficulty;
            target[std::string(text::trim(line.substr(0, colon)))] = std::string(text::trim(line.substr(colon + 1)));
        } else if (section == "TimingPoints") {
            const auto parts = text::split(line, ',');
            if (parts.size() < 2) {
                throw ParseError(line_no, 1, "timing point needs at least time and beatLength");
            }
            const double time = real_field(parts[0], line_no, "timing point time");
            const double beat_length = real_field(parts[1], line_no, "beatLength");
            bool uninherited = beat_length > 0.0;
            if (parts.size() >= 7) {
                uninherited = text::trim(parts[6]) == "1";
            }
            if (!uninherited) {
                continue;
            }
            if (beat_length <= 0.0) {
                throw ParseError(line_no, 1, "uninherited timing point with non-positive beatLength");
            }
            f.timing.push_back({time, 60000.0 / beat_length});
        } else if (section == "HitObjects") {
            const auto parts = text::split(line, ',');
            if (parts.size() < 5) {
                throw ParseError(line_no, 1, "hit object needs x,y,time,type,hitSound");
            }
            const double x = real_field(parts[0], line_no, "x");
            const double time = real_field(parts[2], line_no, "time");
            const auto type = text::parse_int(text::trim(parts[3]));
            if (!type) {
                throw ParseError(line_no, 1, "bad hit object type");
            }
            RawObject obj{time, std::clamp(static_cast<int>(std::floor(x * kColumns / 512.0)), 0, kColumns - 1),
                          (*type & 128) != 0, 0.0, line_no};
            if (obj.hold) {
                if (parts.size() < 6) {
                    throw ParseError(line_no, 1, "hold object without end time");
                }
                obj.end_ms = real_field(text::split(parts[5], ':')[0], line_no, "hold end time");
                if (!(obj.end_ms > obj.time_ms)) {
                    throw ParseError(line_no, 1, "hold end time must exceed start time");
                }
            }
            f.objects.push_back(obj);
        }
    }
    return f;
}

} // namespace

int osu_key_count(std::string_view text) {
    const auto f = read_osu(text);
    const auto it = f.difficulty.find("CircleSize");
    if (it == f.difficulty.end()) {
        throw FormatError("osu: [Difficulty] CircleSize missing");
    }
    const auto v = text::parse_real(it->second);
    if (!v) {
        throw FormatError("osu: bad CircleSize '" + it->second + "'");
    }
    return static_cast<int>(std::lround(*v));
}

OsuImport import_osu(std::string_view input, double difficulty) {
    const auto f = read_osu(input);
    if (const auto it = f.general.find("Mode"); it == f.general.end() || it->second != "3") {
        throw FormatError("osu: not an osu!mania beatmap (Mode != 3)");
    }
    const int keys = osu_key_count(input);
    if (keys != kColumns) {
        throw FormatError("osu: " + std::to_string(keys) + "-key map rejected; only 4-key maps are supported");
    }
    if (f.timing.empty()) {
        throw FormatError("osu: no uninherited timing points");
    }
    std::vector<TimingSection> sections;
    for (const auto& s : f.timing) {
        // a later uninherited point at the same time replaces the earlier one
        if (!sections.empty() && s.start_ms == sections.back().start_ms) {
            sections.back() = s;
        } else if (!sections.empty() && s.start_ms < sections.back().start_ms) {
            throw FormatError("osu: timing points out of order");
        } else {
            sections.push_back(s);
        }
    }
    if (sections.front().start_ms < 0.0) {
        throw FormatError("osu: first timing point lies before 0 ms");
    }

    OsuImport result;
    result.chart.tempo = TempoMap(std::move(sections));
    result.chart.difficulty = difficulty;
    const auto& tempo = result.chart.tempo;
    const double origin = tempo.sections().front().start_ms;

    const auto quantize = [&](double t_ms, std::size_t line) -> Tick {
        const Tick tick = std::llround(tempo.beat_at_time(t_ms) * static_cast<double>(kTicksPerBeat));
        const double err = std::abs(tempo.time_at_beat(static_cast<double>(tick) / kTicksPerBeat) - t_ms);
        result.max_quantization_error_ms = std::max(result.max_quantization_error_ms, err);
        if (err > kQuantizationWarningMs) {
            result.warnings.push_back("line " + std::to_string(line) + ": event at " + text::format_real(t_ms) +
                                      " ms is " + text::format_real(err) + " ms off the 1/48-beat grid");
        }
        return tick;
    };

    std::vector<ChartEvent> events;
    for (const auto& obj : f.objects) {
        if (obj.time_ms < origin) {
            result.warnings.push_back("line " + std::to_string(obj.line) +
                                      ": object before the first timing point dropped");
            continue;
        }
        events.push_back({quantize(obj.time_ms, obj.line), obj.column, EventKind::onset});
        if (obj.hold) {
            events.push_back({quantize(obj.end_ms, obj.line), obj.column, EventKind::release});
        }
    }
    sort_events(events);
    result.chart.n_beats = beats_covering(events);
    result.chart.events = std::move(events);
    validate_chart(result.chart);
    return result;
}

} // namespace goct
