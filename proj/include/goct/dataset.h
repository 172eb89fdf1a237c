#pragma once

#include "goct/chart.h"
#include "goct/tokens.h"
#include "goct/train.h"

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace goct::data {

using tokens::TokenId;

enum class Split { train, valid, test };
inline constexpr std::array<Split, 3> kAllSplits = {Split::train, Split::valid, Split::test};
const char* to_string(Split split);
std::optional<Split> parse_split(std::string_view s);

struct ManifestRow {
    std::string song_id;
    std::string audio_path;
    std::string chart_path;
    double difficulty = 0.0;
    Split split = Split::train;
};

/// Tab-separated, header `song_id  audio  chart  difficulty  split`.
struct Manifest {
    std::vector<ManifestRow> rows;
};

/// Relative paths are resolved against `base_dir` when it is non-empty.
Manifest parse_manifest(std::string_view text, const std::string& base_dir = "");
std::string format_manifest(const Manifest& manifest);
Manifest load_manifest(const std::string& path);

/// Throws ValidationError when a song_id appears in more than one split.
void validate_manifest(const Manifest& manifest);

// ---------------------------------------------------------------------------
// Filtering

inline constexpr std::size_t kMaxEventsPerBeat = 25;

enum class RejectReason { non_4k, offbeat_tempo, density };
const char* to_string(RejectReason reason);

struct FilterCandidate {
    std::string id;
    int key_count = kColumns;
    Chart chart;
};

struct Rejection {
    std::string id;
    RejectReason reason;
    std::string detail;
};

struct FilterResult {
    std::vector<FilterCandidate> kept;
    std::vector<Rejection> rejected;
};

/// Keeps 4-key charts with on-beat tempo changes and at most 25 events in
/// every beat [k, k+1).
FilterResult filter_charts(std::vector<FilterCandidate> candidates);
std::optional<Rejection> check_candidate(const FilterCandidate& candidate);

// ---------------------------------------------------------------------------
// Splitting

struct SplitRatios {
    double train = 0.8;
    double valid = 0.1;
    double test = 0.1;
};

/// Shuffles distinct songs with a seeded RNG and assigns whole songs to splits.
Manifest split_by_song(Manifest manifest, const SplitRatios& ratios, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Samples and shards

/// One training sample: targets are the window starting at `start_tick`.
struct SampleRecord {
    std::string song_id;
    Tick start_tick = 0;
    double difficulty = 0.0;
    std::vector<TokenId> context;
    std::vector<TokenId> target;  // window tokens without SEP, then EOS

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// Sample whose two-beat target window starts at `start_tick`. The context
/// is the tail of the windows laid on the same grid before it.
SampleRecord make_record(const Chart& chart, const std::string& song_id, double difficulty, Tick start_tick,
                         bool time_only);

/// Tick offset in [0, 48) for the sample at beat `b` of a chart.
using OffsetSource = std::function<Tick(std::int64_t beat)>;

/// One record per beat b in [0, n_beats - 2], starting at 48 b + offset(b).
std::vector<SampleRecord> chart_records(const Chart& chart, const std::string& song_id, double difficulty,
                                        bool time_only, const OffsetSource& offset = {});

std::string format_record(const SampleRecord& record);
SampleRecord parse_record(std::string_view line);

struct BuildOptions {
    bool time_only = false;
    bool unaligned = false;
    std::uint64_t seed = 0;
    int jobs = 1;
    bool filter = true;
};

struct BuildReport {
    std::map<Split, std::size_t> records;
    std::size_t songs = 0;
    std::size_t charts = 0;
    std::vector<std::string> errors;    // per-item failures; the build continues
    std::vector<Rejection> rejections;  // charts removed by the corpus filter
};

/// Writes `<out>/<split>.shard` and `<out>/features/<song_id>.feat`.
BuildReport build_shards(const Manifest& manifest, const std::string& out_dir, const BuildOptions& options);

/// Shard lines of one split plus the referenced song features.
nn::TrainingSet load_training_set(const std::string& data_dir, Split split);

std::string shard_path(const std::string& data_dir, Split split);
std::string feature_path(const std::string& data_dir, const std::string& song_id);

/// Per-split song/chart/beat/sample counts and beat-group frequencies.
/// Sample counts come from shards in `data_dir` when given.
std::string stats_report(const Manifest& manifest, const std::optional<std::string>& data_dir = std::nullopt);

} // namespace goct::data
