#include "goct/dataset.h"

#include "goct/cchart.h"
#include "goct/errors.h"
#include "goct/eval.h"
#include "goct/features.h"
#include "goct/text.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace goct::data {

namespace fs = std::filesystem;

const char* to_string(Split split) {
    switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
    }
    return "?";
}

std::optional<Split> parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "valid") return Split::valid;
    if (s == "test") return Split::test;
    return std::nullopt;
}

const char* to_string(RejectReason reason) {
    switch (reason) {
    case RejectReason::non_4k: return "non_4k";
    case RejectReason::offbeat_tempo: return "offbeat_tempo";
    case RejectReason::density: return "density";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Manifest

Manifest parse_manifest(std::string_view input, const std::string& base_dir) {
    Manifest m;
    const auto all = text::lines(input);
    bool header = false;
    for (std::size_t n = 0; n < all.size(); ++n) {
        const auto line = all[n];
        if (text::trim(line).empty()) {
            continue;
        }
        const auto cols = text::split(line, '\t');
        if (!header) {
            if (cols.size() != 5 || cols[0] != "song_id" || cols[1] != "audio" || cols[2] != "chart" ||
                cols[3] != "difficulty" || text::trim(cols[4]) != "split") {
                throw ParseError(n + 1, 1, "manifest header must be 'song_id\\taudio\\tchart\\tdifficulty\\tsplit'");
            }
            header = true;
            continue;
        }
        if (cols.size() != 5) {
            throw ParseError(n + 1, 1, "manifest row needs 5 tab-separated columns");
        }
        ManifestRow row;
        row.song_id = std::string(text::trim(cols[0]));
        if (row.song_id.empty() || row.song_id.find('/') != std::string::npos) {
            throw ParseError(n + 1, 1, "song_id must be non-empty and contain no '/'");
        }
        const auto resolve = [&](std::string_view p) {
            fs::path path{std::string(text::trim(p))};
            if (!base_dir.empty() && path.is_relative()) {
                path = fs::path(base_dir) / path;
            }
            return path.string();
        };
        row.audio_path = resolve(cols[1]);
        row.chart_path = resolve(cols[2]);
        const auto d = text::parse_real(text::trim(cols[3]));
        if (!d || !(*d >= 0.0)) {
            throw ParseError(n + 1, 1, "bad difficulty '" + std::string(cols[3]) + "'");
        }
        row.difficulty = *d;
        const auto split = parse_split(text::trim(cols[4]));
        if (!split) {
            throw ParseError(n + 1, 1, "split must be train, valid or test");
        }
        row.split = *split;
        m.rows.push_back(std::move(row));
    }
    if (!header) {
        throw ParseError(1, 1, "manifest is empty; header line required");
    }
    return m;
}

std::string format_manifest(const Manifest& manifest) {
    std::ostringstream out;
    out << "song_id\taudio\tchart\tdifficulty\tsplit\n";
    for (const auto& r : manifest.rows) {
        out << r.song_id << '\t' << r.audio_path << '\t' << r.chart_path << '\t' << text::format_real(r.difficulty)
            << '\t' << to_string(r.split) << '\n';
    }
    return out.str();
}

Manifest load_manifest(const std::string& path) {
    return parse_manifest(text::read_file(path), fs::path(path).parent_path().string());
}

void validate_manifest(const Manifest& manifest) {
    std::map<std::string, Split> seen;
    for (const auto& r : manifest.rows) {
        const auto [it, inserted] = seen.emplace(r.song_id, r.split);
        if (!inserted && it->second != r.split) {
            throw ValidationError("manifest: song '" + r.song_id + "' appears in splits " + to_string(it->second) +
                                  " and " + to_string(r.split));
        }
    }
}

// ---------------------------------------------------------------------------
// Filtering

std::optional<Rejection> check_candidate(const FilterCandidate& c) {
    if (c.key_count != kColumns) {
        return Rejection{c.id, RejectReason::non_4k, std::to_string(c.key_count) + " keys"};
    }
    if (const auto off = detect_offbeat_tempo_changes(c.chart.tempo); !off.empty()) {
        const auto i = off.front();
        return Rejection{c.id, RejectReason::offbeat_tempo,
                         "timing section " + std::to_string(i) + " starts at beat " +
                             text::format_real(c.chart.tempo.section_start_beat(i))};
    }
    std::map<std::int64_t, std::size_t> per_beat;
    for (const auto& e : c.chart.events) {
        const auto beat = e.tick / kTicksPerBeat;
        if (++per_beat[beat] > kMaxEventsPerBeat) {
            return Rejection{c.id, RejectReason::density,
                             "beat " + std::to_string(beat) + " holds more than " +
                                 std::to_string(kMaxEventsPerBeat) + " events"};
        }
    }
    return std::nullopt;
}

FilterResult filter_charts(std::vector<FilterCandidate> candidates) {
    FilterResult out;
    for (auto& c : candidates) {
        if (auto r = check_candidate(c)) {
            out.rejected.push_back(std::move(*r));
        } else {
            out.kept.push_back(std::move(c));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splitting

Manifest split_by_song(Manifest manifest, const SplitRatios& ratios, std::uint64_t seed) {
    const double total = ratios.train + ratios.valid + ratios.test;
    if (!(ratios.train >= 0 && ratios.valid >= 0 && ratios.test >= 0 && total > 0)) {
        throw ValidationError("split ratios must be non-negative with a positive sum");
    }
    std::vector<std::string> songs;
    std::set<std::string> seen;
    for (const auto& r : manifest.rows) {
        if (seen.insert(r.song_id).second) {
            songs.push_back(r.song_id);
        }
    }
    std::sort(songs.begin(), songs.end());
    std::mt19937_64 rng(seed);
    for (std::size_t i = songs.size(); i > 1; --i) {
        std::swap(songs[i - 1], songs[static_cast<std::size_t>(rng() % i)]);
    }
    const auto n = static_cast<double>(songs.size());
    const auto n_train = static_cast<std::size_t>(std::llround(n * ratios.train / total));
    const auto n_valid = std::min(songs.size() - std::min(songs.size(), n_train),
                                  static_cast<std::size_t>(std::llround(n * ratios.valid / total)));
    std::map<std::string, Split> assignment;
    for (std::size_t i = 0; i < songs.size(); ++i) {
        assignment[songs[i]] = i < n_train ? Split::train : i < n_train + n_valid ? Split::valid : Split::test;
    }
    for (auto& r : manifest.rows) {
        r.split = assignment[r.song_id];
    }
    return manifest;
}

// ---------------------------------------------------------------------------
// Records

SampleRecord make_record(const Chart& chart, const std::string& song_id, double difficulty, Tick start_tick,
                         bool time_only) {
    SampleRecord rec;
    rec.song_id = song_id;
    rec.start_tick = start_tick;
    rec.difficulty = difficulty;

    // windows on the same two-beat grid that overlap the song, oldest first
    Tick first = start_tick;
    while (first - tokens::kWindowTicks > -tokens::kWindowTicks) {
        first -= tokens::kWindowTicks;
    }
    std::vector<TokenId> stream;
    for (Tick w = first; w < start_tick; w += tokens::kWindowTicks) {
        auto tok = tokens::encode_window(chart.events, w);
        if (time_only) {
            tok = tokens::strip_actions(tok);
        }
        stream.insert(stream.end(), tok.begin(), tok.end());
    }
    rec.context = tokens::context_slice(stream);

    auto target = tokens::encode_window(chart.events, start_tick);
    if (time_only) {
        target = tokens::strip_actions(target);
    }
    rec.target.assign(target.begin() + 1, target.end());
    rec.target.push_back(tokens::kEos);
    return rec;
}

std::vector<SampleRecord> chart_records(const Chart& chart, const std::string& song_id, double difficulty,
                                        bool time_only, const OffsetSource& offset) {
    std::vector<SampleRecord> out;
    for (std::int64_t b = 0; b + tokens::kWindowBeats <= chart.n_beats; ++b) {
        const Tick shift = offset ? offset(b) : 0;
        if (shift < 0 || shift >= kTicksPerBeat) {
            throw ValidationError("window offset must lie in [0, 48) ticks");
        }
        out.push_back(make_record(chart, song_id, difficulty, b * kTicksPerBeat + shift, time_only));
    }
    return out;
}

namespace {

std::string join_ids(const std::vector<TokenId>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) {
            s.push_back(' ');
        }
        s += std::to_string(ids[i]);
    }
    return s;
}

std::vector<TokenId> parse_ids(std::string_view field, std::string_view prefix) {
    if (!field.starts_with(prefix)) {
        throw ParseError(0, 0, "shard field must start with '" + std::string(prefix) + "'");
    }
    field.remove_prefix(prefix.size());
    std::vector<TokenId> ids;
    for (const auto& f : text::split_fields(field)) {
        const auto v = text::parse_int(f.text);
        if (!v || *v < 0 || *v >= tokens::kVocabSize) {
            throw ParseError(0, 0, "bad token id '" + std::string(f.text) + "'");
        }
        ids.push_back(static_cast<TokenId>(*v));
    }
    return ids;
}

} // namespace

std::string format_record(const SampleRecord& r) {
    std::string beat = r.start_tick % kTicksPerBeat == 0
                           ? std::to_string(r.start_tick / kTicksPerBeat)
                           : text::format_real(static_cast<double>(r.start_tick) / kTicksPerBeat);
    return r.song_id + '\t' + beat + '\t' + text::format_real(r.difficulty) + "\tctx:" + join_ids(r.context) +
           "\ttgt:" + join_ids(r.target);
}

SampleRecord parse_record(std::string_view line) {
    const auto cols = text::split(line, '\t');
    if (cols.size() != 5) {
        throw ParseError(0, 0, "shard record needs 5 tab-separated fields");
    }
    SampleRecord r;
    r.song_id = std::string(cols[0]);
    const auto beat = text::parse_real(cols[1]);
    const auto diff = text::parse_real(cols[2]);
    if (!beat || !diff) {
        throw ParseError(0, 0, "bad beat or difficulty field");
    }
    r.start_tick = std::llround(*beat * kTicksPerBeat);
    r.difficulty = *diff;
    r.context = parse_ids(cols[3], "ctx:");
    r.target = parse_ids(cols[4], "tgt:");
    if (r.context.size() != tokens::kContextLength) {
        throw ParseError(0, 0, "context must hold 7 tokens");
    }
    if (r.target.empty() || r.target.back() != tokens::kEos) {
        throw ParseError(0, 0, "target must end with EOS");
    }
    return r;
}

std::string shard_path(const std::string& data_dir, Split split) {
    return (fs::path(data_dir) / (std::string(to_string(split)) + ".shard")).string();
}

std::string feature_path(const std::string& data_dir, const std::string& song_id) {
    return (fs::path(data_dir) / "features" / (song_id + ".feat")).string();
}

// ---------------------------------------------------------------------------
// Build

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (const char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct SongJob {
    std::string song_id;
    Split split = Split::train;
    std::vector<const ManifestRow*> rows;
};

struct SongOutput {
    std::vector<SampleRecord> records;
    std::vector<std::string> errors;
    std::vector<Rejection> rejections;
    std::size_t charts = 0;
    bool built = false;
};

SongOutput build_song(const SongJob& job, const std::string& out_dir, const BuildOptions& options) {
    SongOutput out;
    std::vector<std::pair<const ManifestRow*, Chart>> charts;
    for (std::size_t i = 0; i < job.rows.size(); ++i) {
        const auto* row = job.rows[i];
        try {
            Chart chart = load_cchart(row->chart_path);
            if (options.filter) {
                if (auto r = check_candidate({row->chart_path, kColumns, chart})) {
                    out.rejections.push_back(std::move(*r));
                    continue;
                }
            }
            if (!charts.empty() && !(chart.tempo == charts.front().second.tempo)) {
                out.errors.push_back(row->chart_path + ": tempo map differs from other charts of song '" +
                                     job.song_id + "'");
                continue;
            }
            charts.emplace_back(row, std::move(chart));
        } catch (const std::exception& e) {
            out.errors.push_back(row->chart_path + ": " + e.what());
        }
    }
    if (charts.empty()) {
        return out;
    }
    AudioBuffer audio;
    try {
        if (!fs::exists(job.rows.front()->audio_path)) {
            throw Error("missing audio file");
        }
        audio = load_audio(job.rows.front()->audio_path);
    } catch (const std::exception& e) {
        out.errors.push_back(job.rows.front()->audio_path + ": " + e.what());
        return out;
    }
    const TempoMap tempo = charts.front().second.tempo;
    const std::int64_t audio_beats = beats_in_audio(audio, tempo);
    std::int64_t n_beats = 0;
    std::vector<std::pair<const ManifestRow*, Chart>> usable;
    for (auto& [row, chart] : charts) {
        if (chart.n_beats > audio_beats + 1) {
            out.errors.push_back(row->chart_path + ": chart spans " + std::to_string(chart.n_beats) +
                                 " beats but the audio covers " + std::to_string(audio_beats));
            continue;
        }
        n_beats = std::max(n_beats, chart.n_beats);
        usable.emplace_back(row, std::move(chart));
    }
    if (usable.empty() || n_beats <= 0) {
        return out;
    }
    try {
        write_features(feature_path(out_dir, job.song_id), extract(audio, tempo, n_beats));
    } catch (const std::exception& e) {
        out.errors.push_back(job.song_id + ": feature extraction failed: " + e.what());
        return out;
    }
    for (const auto& [row, chart] : usable) {
        OffsetSource offset;
        std::shared_ptr<std::mt19937_64> rng;
        if (options.unaligned) {
            rng = std::make_shared<std::mt19937_64>(fnv1a(row->chart_path, fnv1a(job.song_id, options.seed)));
            offset = [rng](std::int64_t) {
                const double u = static_cast<double>((*rng)() >> 11) * 0x1.0p-53;
                return static_cast<Tick>(std::floor(u * kTicksPerBeat));
            };
        }
        auto recs = chart_records(chart, job.song_id, row->difficulty, options.time_only, offset);
        out.records.insert(out.records.end(), std::make_move_iterator(recs.begin()),
                           std::make_move_iterator(recs.end()));
        ++out.charts;
    }
    out.built = true;
    return out;
}

} // namespace

BuildReport build_shards(const Manifest& manifest, const std::string& out_dir, const BuildOptions& options) {
    validate_manifest(manifest);
    fs::create_directories(fs::path(out_dir) / "features");

    std::vector<SongJob> jobs;
    std::map<std::string, std::size_t> index;
    for (const auto& row : manifest.rows) {
        const auto [it, inserted] = index.emplace(row.song_id, jobs.size());
        if (inserted) {
            jobs.push_back({row.song_id, row.split, {}});
        }
        jobs[it->second].rows.push_back(&row);
    }

    std::vector<SongOutput> outputs(jobs.size());
    const auto n_threads = static_cast<std::size_t>(std::max(1, options.jobs));
    if (n_threads == 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            outputs[i] = build_song(jobs[i], out_dir, options);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(n_threads, jobs.size()); ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < jobs.size(); i = next++) {
                    outputs[i] = build_song(jobs[i], out_dir, options);
                }
            });
        }
        for (auto& th : pool) {
            th.join();
        }
    }

    BuildReport report;
    std::map<Split, std::string> shards;
    for (const auto s : kAllSplits) {
        shards[s];
        report.records[s] = 0;
    }
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        auto& o = outputs[i];
        report.errors.insert(report.errors.end(), o.errors.begin(), o.errors.end());
        report.rejections.insert(report.rejections.end(), o.rejections.begin(), o.rejections.end());
        if (!o.built) {
            continue;
        }
        ++report.songs;
        report.charts += o.charts;
        auto& shard = shards[jobs[i].split];
        for (const auto& r : o.records) {
            shard += format_record(r);
            shard += '\n';
        }
        report.records[jobs[i].split] += o.records.size();
    }
    for (const auto& [split, contents] : shards) {
        text::write_file(shard_path(out_dir, split), contents);
    }
    return report;
}

nn::TrainingSet load_training_set(const std::string& data_dir, Split split) {
    nn::TrainingSet set;
    const auto path = shard_path(data_dir, split);
    const auto contents = text::read_file(path);
    std::map<std::string, std::size_t> song_index;
    const auto all = text::lines(contents);
    for (std::size_t n = 0; n < all.size(); ++n) {
        if (text::trim(all[n]).empty()) {
            continue;
        }
        SampleRecord r;
        try {
            r = parse_record(all[n]);
        } catch (const ParseError& e) {
            throw ParseError(path, n + 1, e.column(), e.message());
        }
        auto it = song_index.find(r.song_id);
        if (it == song_index.end()) {
            it = song_index.emplace(r.song_id, set.songs.size()).first;
            set.songs.push_back(read_features(feature_path(data_dir, r.song_id)));
        }
        set.samples.push_back({it->second, r.start_tick, std::move(r.context), std::move(r.target), r.difficulty});
    }
    return set;
}

// ---------------------------------------------------------------------------
// Stats

std::string stats_report(const Manifest& manifest, const std::optional<std::string>& data_dir) {
    struct Counts {
        std::set<std::string> songs;
        std::size_t charts = 0;
        std::int64_t beats = 0;
        std::size_t samples = 0;
    };
    std::map<Split, Counts> by_split;
    for (const auto s : kAllSplits) {
        by_split[s];
    }
    std::map<eval::BeatGroup, std::size_t> group_counts;
    std::size_t total_ticks = 0;
    for (const auto& row : manifest.rows) {
        auto& c = by_split[row.split];
        const Chart chart = load_cchart(row.chart_path);
        c.songs.insert(row.song_id);
        ++c.charts;
        c.beats += chart.n_beats;
        if (!data_dir) {
            c.samples += static_cast<std::size_t>(std::max<std::int64_t>(chart.n_beats - 1, 0));
        }
        for (const auto t : occupied_ticks(chart.events)) {
            ++group_counts[eval::beat_group_of(t)];
            ++total_ticks;
        }
    }
    if (data_dir) {
        for (const auto s : kAllSplits) {
            const auto path = shard_path(*data_dir, s);
            if (!fs::exists(path)) {
                continue;
            }
            const auto contents = text::read_file(path);
            for (const auto line : text::lines(contents)) {
                if (!text::trim(line).empty()) {
                    ++by_split[s].samples;
                }
            }
        }
    }

    std::ostringstream out;
    out << "split   songs   charts   beats   samples\n";
    for (const auto s : kAllSplits) {
        const auto& c = by_split[s];
        out << std::left << std::setw(7) << to_string(s) << std::right << std::setw(6) << c.songs.size()
            << std::setw(9) << c.charts << std::setw(8) << c.beats << std::setw(10) << c.samples << "\n";
    }
    out << "beat group frequency (% of occupied ticks)\n";
    for (const auto g : eval::kAllBeatGroups) {
        const double pct = total_ticks ? 100.0 * static_cast<double>(group_counts[g]) / static_cast<double>(total_ticks) : 0.0;
        out << "  " << std::left << std::setw(6) << eval::to_string(g) << std::right << std::fixed
            << std::setprecision(2) << std::setw(8) << pct << "\n";
    }
    out << "--\n";
    for (const auto s : kAllSplits) {
        const auto& c = by_split[s];
        const std::string k = to_string(s);
        out << k << ".songs\t" << c.songs.size() << "\n";
        out << k << ".charts\t" << c.charts << "\n";
        out << k << ".beats\t" << c.beats << "\n";
        out << k << ".samples\t" << c.samples << "\n";
    }
    out << "ticks\t" << total_ticks << "\n";
    for (const auto g : eval::kAllBeatGroups) {
        const double pct = total_ticks ? 100.0 * static_cast<double>(group_counts[g]) / static_cast<double>(total_ticks) : 0.0;
        out << "freq." << eval::to_string(g) << "\t" << text::format_real(pct) << "\n";
    }
    return out.str();
}

} // namespace goct::data
