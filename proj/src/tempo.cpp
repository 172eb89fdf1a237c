#include "goct/tempo.h"

#include "goct/errors.h"

#include <algorithm>
#include <cmath>
#include <string>

namespace goct {

TempoMap::TempoMap() : TempoMap(std::vector<TimingSection>{{0.0, 120.0}}) {}

TempoMap::TempoMap(std::vector<TimingSection> sections) : sections_(std::move(sections)) {
    if (sections_.empty()) {
        throw ValidationError("tempo map has no timing sections");
    }
    start_beats_.reserve(sections_.size());
    for (std::size_t i = 0; i < sections_.size(); ++i) {
        const auto& s = sections_[i];
        if (!std::isfinite(s.bpm) || s.bpm <= 0.0) {
            throw ValidationError("timing section " + std::to_string(i) + ": bpm must be finite and > 0");
        }
        if (!std::isfinite(s.start_ms) || s.start_ms < 0.0) {
            throw ValidationError("timing section " + std::to_string(i) + ": start_ms must be finite and >= 0");
        }
        if (i == 0) {
            start_beats_.push_back(0.0);
            continue;
        }
        const auto& prev = sections_[i - 1];
        if (!(s.start_ms > prev.start_ms)) {
            throw ValidationError("timing section " + std::to_string(i) + ": start_ms not strictly increasing");
        }
        start_beats_.push_back(start_beats_.back() + (s.start_ms - prev.start_ms) * prev.bpm / 60000.0);
    }
}

double TempoMap::time_at_beat(double beat) const {
    if (!(beat >= 0.0) || !std::isfinite(beat)) {
        throw DomainError("time_at_beat: beat must be finite and >= 0");
    }
    // last section whose start beat is <= beat
    const auto it = std::upper_bound(start_beats_.begin(), start_beats_.end(), beat);
    const std::size_t i = static_cast<std::size_t>(it - start_beats_.begin()) - 1;
    const auto& s = sections_[i];
    return s.start_ms + (beat - start_beats_[i]) * 60000.0 / s.bpm;
}

double TempoMap::beat_at_time(double t_ms) const {
    if (!std::isfinite(t_ms) || t_ms < sections_.front().start_ms) {
        throw DomainError("beat_at_time: time precedes the first timing section");
    }
    const auto it = std::upper_bound(sections_.begin(), sections_.end(), t_ms,
                                     [](double t, const TimingSection& s) { return t < s.start_ms; });
    const std::size_t i = static_cast<std::size_t>(it - sections_.begin()) - 1;
    const auto& s = sections_[i];
    return start_beats_[i] + (t_ms - s.start_ms) * s.bpm / 60000.0;
}

std::vector<std::size_t> detect_offbeat_tempo_changes(const TempoMap& tempo) {
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i < tempo.sections().size(); ++i) {
        // start beat of section i is computed from sections [0, i) only
        const double beat = tempo.section_start_beat(i);
        if (std::abs(beat - std::round(beat)) > kOffbeatToleranceBeats) {
            out.push_back(i);
        }
    }
    return out;
}

} // namespace goct
