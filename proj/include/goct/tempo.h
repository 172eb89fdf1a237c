#pragma once

#include <cstddef>
#include <vector>

namespace goct {

/// One constant-BPM stretch of a tempo map.
struct TimingSection {
    double start_ms = 0.0;
    double bpm = 120.0;

    friend bool operator==(const TimingSection&, const TimingSection&) = default;
};

/// Piecewise-constant BPM timeline. Beat 0 sits at the first section's start.
///
/// Construction validates the sections, so every TempoMap in existence is
/// well formed: at least one section, finite positive BPMs, finite
/// non-negative and strictly increasing start times.
class TempoMap {
public:
    explicit TempoMap(std::vector<TimingSection> sections);
    TempoMap();  // single 120 bpm section at 0 ms

    const std::vector<TimingSection>& sections() const { return sections_; }

    /// Beat position at which section `i` starts.
    double section_start_beat(std::size_t i) const { return start_beats_[i]; }

    /// Milliseconds at a (non-negative) beat position.
    double time_at_beat(double beat) const;

    /// Beat position at a time; throws DomainError before the first section.
    double beat_at_time(double t_ms) const;

    friend bool operator==(const TempoMap& a, const TempoMap& b) { return a.sections_ == b.sections_; }

private:
    std::vector<TimingSection> sections_;
    std::vector<double> start_beats_;
};

inline constexpr double kOffbeatToleranceBeats = 1e-4;

/// Indices i >= 1 of sections that start off the beat grid of the sections before them.
std::vector<std::size_t> detect_offbeat_tempo_changes(const TempoMap& tempo);

} // namespace goct
