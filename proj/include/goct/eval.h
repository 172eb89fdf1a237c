#pragma once

#include "goct/chart.h"

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace goct::eval {

/// Sorted, duplicate-free ticks.
class TickSet {
public:
    TickSet() = default;
    explicit TickSet(std::vector<Tick> ticks);  // sorts and dedups
    static TickSet of_chart(const Chart& chart);

    const std::vector<Tick>& ticks() const { return ticks_; }
    std::size_t size() const { return ticks_.size(); }
    bool contains(Tick t) const;

private:
    std::vector<Tick> ticks_;
};

/// Coarsest subdivision whose grid contains a tick offset within the beat.
enum class BeatGroup { g4th, g8th, g12th, g16th, g24th, g32nd, g48th, g64th, g96th, g192nd };

inline constexpr std::array<BeatGroup, 10> kAllBeatGroups = {
    BeatGroup::g4th,  BeatGroup::g8th,  BeatGroup::g12th, BeatGroup::g16th, BeatGroup::g24th,
    BeatGroup::g32nd, BeatGroup::g48th, BeatGroup::g64th, BeatGroup::g96th, BeatGroup::g192nd};

BeatGroup beat_group_of(Tick tick);
const char* to_string(BeatGroup group);

struct Metrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

/// Precision/recall/F1 from counts; everything is 0 when tp is 0.
Metrics metrics_from_counts(std::size_t tp, std::size_t n_pred, std::size_t n_truth);

Metrics tick_f1(const TickSet& pred, const TickSet& truth);

struct GroupMetrics {
    Metrics metrics;
    double truth_frequency_pct = 0.0;  // share of all truth ticks in this group
};

std::map<BeatGroup, GroupMetrics> per_group_f1(const TickSet& pred, const TickSet& truth);

/// Any-match tolerance scoring: a prediction is a hit when some truth time
/// lies within +-tol_ms; a truth event is recalled when some prediction
/// lies within +-tol_ms. Inputs must be sorted.
Metrics tolerance_f1(std::span<const double> pred_ms, std::span<const double> truth_ms, double tol_ms = 30.0);

enum class Mode { exact, tolerance };

struct EvalOptions {
    Mode mode = Mode::exact;
    double tolerance_ms = 30.0;
    bool per_group = true;
    /// Also require the combined action at a tick to match (exact mode).
    bool strict_actions = false;
};

struct Report {
    Mode mode = Mode::exact;
    double tolerance_ms = 0.0;
    bool strict_actions = false;
    Metrics overall;
    std::map<BeatGroup, GroupMetrics> groups;  // exact mode with per_group only

    /// Human-readable table followed by a `key<TAB>value` block.
    std::string render() const;
};

Report evaluate_chart(const Chart& pred, const Chart& truth, const EvalOptions& options = {});

} // namespace goct::eval
