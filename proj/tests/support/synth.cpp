#include "synth.h"

#include "goct/cchart.h"
#include "goct/text.h"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

namespace goct::testing {

namespace fs = std::filesystem;

AudioBuffer render_clicks(const TempoMap& tempo, const std::vector<Tick>& ticks, std::int64_t n_beats,
                          double tail_beats, int sample_rate, double click_hz) {
    AudioBuffer out;
    out.sample_rate = sample_rate;
    const double end_ms = tempo.time_at_beat(static_cast<double>(n_beats) + tail_beats);
    out.samples.assign(static_cast<std::size_t>(std::ceil(end_ms * sample_rate / 1000.0)), 0.0f);
    const int burst = sample_rate * 3 / 20;  // 150 ms, decayed to silence
    for (const Tick t : ticks) {
        const double ms = tempo.time_at_beat(static_cast<double>(t) / kTicksPerBeat);
        const auto start = static_cast<std::int64_t>(std::llround(ms * sample_rate / 1000.0));
        for (int k = 0; k < burst; ++k) {
            const auto i = start + k;
            if (i < 0 || i >= static_cast<std::int64_t>(out.samples.size())) {
                continue;
            }
            const double s = static_cast<double>(k) / sample_rate;
            out.samples[static_cast<std::size_t>(i)] +=
                static_cast<float>(0.6 * std::exp(-s / 0.008) * std::sin(2.0 * std::numbers::pi * click_hz * s));
        }
    }
    return out;
}

SyntheticSong make_song(const std::string& id, double bpm, std::int64_t n_beats, std::uint64_t seed,
                        double click_hz) {
    SyntheticSong song;
    song.id = id;
    song.tempo = TempoMap({{0.0, bpm}});
    song.n_beats = n_beats;
    std::mt19937_64 rng(seed);
    for (std::int64_t b = 0; b < n_beats; ++b) {
        song.clicks.push_back(b * kTicksPerBeat);
        if (rng() % 2 == 0) {
            song.clicks.push_back(b * kTicksPerBeat + kTicksPerBeat / 2);
        }
    }
    // exactly what write_corpus stores, so features match the shards
    song.audio = downmix_and_resample(
        parse_wav(encode_wav16(render_clicks(song.tempo, song.clicks, n_beats, 1.0, kTargetSampleRate, click_hz))));
    return song;
}

Chart chart_for(const SyntheticSong& song, double difficulty) {
    Chart chart;
    chart.tempo = song.tempo;
    chart.difficulty = difficulty;
    chart.n_beats = song.n_beats;
    for (const Tick t : song.clicks) {
        if (difficulty < kHard && t % kTicksPerBeat != 0) {
            continue;
        }
        chart.events.push_back({t, static_cast<int>((t / (kTicksPerBeat / 2)) % kColumns), EventKind::onset});
    }
    return chart;
}

std::string write_corpus(const std::string& dir, const std::vector<SyntheticSong>& songs,
                         const std::vector<data::Split>& splits) {
    fs::create_directories(dir);
    data::Manifest manifest;
    for (std::size_t i = 0; i < songs.size(); ++i) {
        const auto& s = songs[i];
        const auto wav = s.id + ".wav";
        text::write_file((fs::path(dir) / wav).string(), encode_wav16(s.audio));
        for (const double d : {kEasy, kHard}) {
            const auto name = s.id + (d < kHard ? "-easy" : "-hard") + ".cchart";
            save_cchart((fs::path(dir) / name).string(), chart_for(s, d));
            manifest.rows.push_back({s.id, wav, name, d, splits.at(i)});
        }
    }
    const auto path = (fs::path(dir) / "manifest.tsv").string();
    text::write_file(path, data::format_manifest(manifest));
    return path;
}

TempoMap random_tempo(std::mt19937_64& rng, int max_sections) {
    std::uniform_real_distribution<double> bpm(60.0, 240.0), gap(100.0, 30000.0);
    std::vector<TimingSection> s{{std::floor(gap(rng) / 100.0), bpm(rng)}};
    const int n = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_sections));
    for (int i = 1; i < n; ++i) {
        s.push_back({s.back().start_ms + gap(rng), bpm(rng)});
    }
    return TempoMap(std::move(s));
}

Chart random_chart(std::mt19937_64& rng, std::int64_t max_beats) {
    Chart c;
    c.tempo = random_tempo(rng);
    c.difficulty = static_cast<double>(rng() % 2000) / 64.0;
    c.n_beats = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(max_beats + 1));
    const Tick end = c.n_beats * kTicksPerBeat;
    // density varies per chart so sparse and crowded windows both occur
    const double p = std::uniform_real_distribution<double>(0.005, 0.3)(rng);
    std::bernoulli_distribution place(p), hold(0.3);
    for (int col = 0; col < kColumns; ++col) {
        for (Tick t = 0; t < end; ++t) {
            if (!place(rng)) {
                continue;
            }
            c.events.push_back({t, col, EventKind::onset});
            if (hold(rng)) {
                const Tick len = 1 + static_cast<Tick>(rng() % 150);
                if (t + len < end) {
                    c.events.push_back({t + len, col, EventKind::release});
                    t += len;
                }
            }
        }
    }
    sort_events(c.events);
    return c;
}

std::string scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("goct-test-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

} // namespace goct::testing
