#include "goct/importers.h"

#include "goct/errors.h"
#include "goct/text.h"

#include <algorithm>
#include <cmath>
#include <optional>

namespace goct {

namespace {

struct Tag {
    std::string name;
    std::string value;
};

std::string strip_comments(std::string_view input) {
    std::string out;
    out.reserve(input.size());
    for (const auto line : text::lines(input)) {
        const auto pos = line.find("//");
        out.append(pos == std::string_view::npos ? line : line.substr(0, pos));
        out.push_back('\n');
    }
    return out;
}

std::vector<Tag> read_tags(const std::string& body) {
    std::vector<Tag> tags;
    std::size_t pos = 0;
    while ((pos = body.find('#', pos)) != std::string::npos) {
        const auto colon = body.find(':', pos);
        if (colon == std::string::npos) {
            break;
        }
        auto end = body.find(';', colon);
        if (end == std::string::npos) {
            end = body.size();
        }
        tags.push_back({std::string(text::trim(std::string_view(body).substr(pos + 1, colon - pos - 1))),
                        body.substr(colon + 1, end - colon - 1)});
        pos = end;
    }
    return tags;
}

TempoMap read_bpms(std::string_view value, double offset_s) {
    std::vector<std::pair<double, double>> changes;  // (beat, bpm)
    for (const auto item : text::split(value, ',')) {
        const auto entry = text::trim(item);
        if (entry.empty()) {
            continue;
        }
        const auto kv = text::split(entry, '=');
        const auto beat = kv.size() == 2 ? text::parse_real(text::trim(kv[0])) : std::nullopt;
        const auto bpm = kv.size() == 2 ? text::parse_real(text::trim(kv[1])) : std::nullopt;
        if (!beat || !bpm || !(*bpm > 0.0) || !std::isfinite(*bpm) || !(*beat >= 0.0)) {
            throw FormatError("sm: malformed #BPMS entry '" + std::string(entry) + "'");
        }
        if (!changes.empty() && !(*beat > changes.back().first)) {
            throw FormatError("sm: #BPMS beats must increase");
        }
        changes.emplace_back(*beat, *bpm);
    }
    if (changes.empty() || changes.front().first != 0.0) {
        throw FormatError("sm: #BPMS must start at beat 0");
    }
    const double origin_ms = -offset_s * 1000.0;
    if (origin_ms < 0.0) {
        throw FormatError("sm: positive #OFFSET places beat 0 before the audio start");
    }
    std::vector<TimingSection> sections;
    double t = origin_ms;
    for (std::size_t i = 0; i < changes.size(); ++i) {
        if (i > 0) {
            t += (changes[i].first - changes[i - 1].first) * 60000.0 / changes[i - 1].second;
        }
        sections.push_back({t, changes[i].second});
    }
    return TempoMap(std::move(sections));
}

} // namespace

SmImport import_sm(std::string_view input) {
    const auto body = strip_comments(input);
    const auto tags = read_tags(body);

    double offset_s = 0.0;
    std::optional<std::string> bpms;
    for (const auto& tag : tags) {
        if (tag.name == "OFFSET") {
            const auto v = text::parse_real(text::trim(tag.value));
            if (!v) {
                throw FormatError("sm: malformed #OFFSET '" + tag.value + "'");
            }
            offset_s = *v;
        } else if (tag.name == "BPMS") {
            bpms = tag.value;
        }
    }
    if (!bpms) {
        throw FormatError("sm: missing #BPMS");
    }
    const TempoMap tempo = read_bpms(*bpms, offset_s);

    SmImport result;
    std::size_t chart_index = 0;
    for (const auto& tag : tags) {
        if (tag.name != "NOTES") {
            continue;
        }
        const auto fields = text::split(tag.value, ':');
        const std::string label = "chart " + std::to_string(chart_index++);
        if (fields.size() < 6) {
            result.warnings.push_back(label + ": #NOTES block needs 6 fields, skipped");
            continue;
        }
        if (text::trim(fields[0]) != "dance-single") {
            result.warnings.push_back(label + ": type '" + std::string(text::trim(fields[0])) + "' skipped");
            continue;
        }
        const auto meter = text::parse_real(text::trim(fields[3]));
        if (!meter || *meter < 0.0) {
            result.warnings.push_back(label + ": bad meter '" + std::string(text::trim(fields[3])) + "', skipped");
            continue;
        }

        std::vector<ChartEvent> events;
        std::optional<std::string> reject;
        const auto measures = text::split(fields[5], ',');
        for (std::size_t m = 0; m < measures.size() && !reject; ++m) {
            std::vector<std::string_view> rows;
            for (const auto line : text::lines(measures[m])) {
                const auto row = text::trim(line);
                if (!row.empty()) {
                    rows.push_back(row);
                }
            }
            const auto n_rows = static_cast<Tick>(rows.size());
            for (Tick r = 0; r < n_rows && !reject; ++r) {
                const auto row = rows[static_cast<std::size_t>(r)];
                if (row.size() != static_cast<std::size_t>(kColumns)) {
                    reject = label + ": measure " + std::to_string(m) + " row " + std::to_string(r) +
                             " has " + std::to_string(row.size()) + " columns";
                    break;
                }
                if (row == "0000") {
                    continue;
                }
                // 4 beats per measure, 48 ticks per beat
                const Tick scaled = 4 * kTicksPerBeat * r;
                if (scaled % n_rows != 0) {
                    reject = label + ": measure " + std::to_string(m) + " row " + std::to_string(r) + " of " +
                             std::to_string(n_rows) + " is off the 1/48-beat grid";
                    break;
                }
                const Tick tick = static_cast<Tick>(m) * 4 * kTicksPerBeat + scaled / n_rows;
                for (int c = 0; c < kColumns; ++c) {
                    const char ch = row[static_cast<std::size_t>(c)];
                    switch (ch) {
                    case '1':
                    case '2':
                    case '4':
                        events.push_back({tick, c, EventKind::onset});
                        break;
                    case '3':
                        events.push_back({tick, c, EventKind::release});
                        break;
                    case '0':
                    case 'M':
                        break;
                    default:
                        result.warnings.push_back(label + ": unsupported note character '" + std::string(1, ch) +
                                                  "' at tick " + std::to_string(tick) + " ignored");
                    }
                }
            }
        }
        if (reject) {
            result.warnings.push_back(*reject + "; chart rejected");
            continue;
        }

        Chart chart;
        chart.tempo = tempo;
        chart.difficulty = *meter;
        sort_events(events);
        chart.events = std::move(events);
        chart.n_beats = std::max<std::int64_t>(static_cast<std::int64_t>(measures.size()) * 4,
                                               beats_covering(chart.events));
        try {
            validate_chart(chart);
        } catch (const ValidationError& e) {
            result.warnings.push_back(label + ": " + e.what() + "; chart rejected");
            continue;
        }
        result.descriptions.push_back(std::string(text::trim(fields[2])) + " " + text::format_real(*meter));
        result.charts.push_back(std::move(chart));
    }
    return result;
}

} // namespace goct
