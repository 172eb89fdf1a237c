#pragma once

#include "goct/audio.h"
#include "goct/chart.h"
#include "goct/dataset.h"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace goct::testing {

/// Click track: a decaying sine burst at each tick of `ticks`.
AudioBuffer render_clicks(const TempoMap& tempo, const std::vector<Tick>& ticks, std::int64_t n_beats,
                          double tail_beats = 1.0, int sample_rate = kTargetSampleRate, double click_hz = 2000.0);

struct SyntheticSong {
    std::string id;
    TempoMap tempo;
    std::int64_t n_beats = 0;
    std::vector<Tick> clicks;  // every click in the audio
    AudioBuffer audio;
};

/// Song whose clicks fall on every beat plus a seeded subset of the
/// off-beat eighths. The audio is quantized to 16-bit PCM.
SyntheticSong make_song(const std::string& id, double bpm, std::int64_t n_beats, std::uint64_t seed,
                        double click_hz = 2000.0);

inline constexpr double kEasy = 1.0;
inline constexpr double kHard = 4.0;

/// Easy charts tap the on-beat clicks, hard charts every click. The column
/// cycles with the eighth-note index.
Chart chart_for(const SyntheticSong& song, double difficulty);

/// Writes `<dir>/<id>.wav`, `<dir>/<id>-{easy,hard}.cchart` per song and a
/// manifest `<dir>/manifest.tsv` with the given split for each song.
std::string write_corpus(const std::string& dir, const std::vector<SyntheticSong>& songs,
                         const std::vector<data::Split>& splits);

/// Random valid chart: multi-section tempo map, taps and holds on all
/// columns, up to `max_beats` beats.
Chart random_chart(std::mt19937_64& rng, std::int64_t max_beats = 64);

/// Random tempo map with 1..max_sections sections.
TempoMap random_tempo(std::mt19937_64& rng, int max_sections = 4);

/// Fresh empty directory under the system temp dir.
std::string scratch_dir(const std::string& name);

} // namespace goct::testing
