#include "goct/eval.h"

#include "goct/errors.h"
#include "goct/text.h"
#include "goct/tokens.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace goct::eval {

TickSet::TickSet(std::vector<Tick> ticks) : ticks_(std::move(ticks)) {
    std::sort(ticks_.begin(), ticks_.end());
    ticks_.erase(std::unique(ticks_.begin(), ticks_.end()), ticks_.end());
}

TickSet TickSet::of_chart(const Chart& chart) {
    return TickSet(occupied_ticks(chart.events));
}

bool TickSet::contains(Tick t) const {
    return std::binary_search(ticks_.begin(), ticks_.end(), t);
}

BeatGroup beat_group_of(Tick tick) {
    Tick o = tick % kTicksPerBeat;
    if (o < 0) {
        o += kTicksPerBeat;
    }
    if (o % 48 == 0) return BeatGroup::g4th;
    if (o % 24 == 0) return BeatGroup::g8th;
    if (o % 16 == 0) return BeatGroup::g12th;
    if (o % 12 == 0) return BeatGroup::g16th;
    if (o % 8 == 0) return BeatGroup::g24th;
    if (o % 6 == 0) return BeatGroup::g32nd;
    if (o % 4 == 0) return BeatGroup::g48th;
    if (o % 3 == 0) return BeatGroup::g64th;
    if (o % 2 == 0) return BeatGroup::g96th;
    return BeatGroup::g192nd;
}

const char* to_string(BeatGroup group) {
    switch (group) {
    case BeatGroup::g4th: return "4th";
    case BeatGroup::g8th: return "8th";
    case BeatGroup::g12th: return "12th";
    case BeatGroup::g16th: return "16th";
    case BeatGroup::g24th: return "24th";
    case BeatGroup::g32nd: return "32nd";
    case BeatGroup::g48th: return "48th";
    case BeatGroup::g64th: return "64th";
    case BeatGroup::g96th: return "96th";
    case BeatGroup::g192nd: return "192nd";
    }
    return "?";
}

Metrics metrics_from_counts(std::size_t tp, std::size_t n_pred, std::size_t n_truth) {
    Metrics m;
    m.tp = tp;
    m.fp = n_pred - tp;
    m.fn = n_truth - tp;
    if (tp == 0) {
        return m;
    }
    m.precision = static_cast<double>(tp) / static_cast<double>(n_pred);
    m.recall = static_cast<double>(tp) / static_cast<double>(n_truth);
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

Metrics tick_f1(const TickSet& pred, const TickSet& truth) {
    std::vector<Tick> common;
    std::set_intersection(pred.ticks().begin(), pred.ticks().end(), truth.ticks().begin(), truth.ticks().end(),
                          std::back_inserter(common));
    return metrics_from_counts(common.size(), pred.size(), truth.size());
}

std::map<BeatGroup, GroupMetrics> per_group_f1(const TickSet& pred, const TickSet& truth) {
    std::map<BeatGroup, std::vector<Tick>> pred_by, truth_by;
    for (const auto t : pred.ticks()) {
        pred_by[beat_group_of(t)].push_back(t);
    }
    for (const auto t : truth.ticks()) {
        truth_by[beat_group_of(t)].push_back(t);
    }
    std::map<BeatGroup, GroupMetrics> out;
    for (const auto g : kAllBeatGroups) {
        const TickSet p(pred_by[g]);
        const TickSet t(truth_by[g]);
        GroupMetrics gm;
        gm.metrics = tick_f1(p, t);
        gm.truth_frequency_pct =
            truth.size() > 0 ? 100.0 * static_cast<double>(t.size()) / static_cast<double>(truth.size()) : 0.0;
        out[g] = gm;
    }
    return out;
}

namespace {

std::size_t count_matched(std::span<const double> xs, std::span<const double> against, double tol) {
    std::size_t n = 0;
    for (const double x : xs) {
        const auto it = std::lower_bound(against.begin(), against.end(), x - tol);
        if (it != against.end() && *it <= x + tol) {
            ++n;
        }
    }
    return n;
}

} // namespace

Metrics tolerance_f1(std::span<const double> pred_ms, std::span<const double> truth_ms, double tol_ms) {
    if (!(tol_ms >= 0.0)) {
        throw ValidationError("tolerance_f1: tolerance must be >= 0");
    }
    if (!std::is_sorted(pred_ms.begin(), pred_ms.end()) || !std::is_sorted(truth_ms.begin(), truth_ms.end())) {
        throw ValidationError("tolerance_f1: inputs must be sorted");
    }
    const std::size_t tp_pred = count_matched(pred_ms, truth_ms, tol_ms);
    const std::size_t tp_truth = count_matched(truth_ms, pred_ms, tol_ms);
    Metrics m;
    m.tp = tp_pred;
    m.fp = pred_ms.size() - tp_pred;
    m.fn = truth_ms.size() - tp_truth;
    if (tp_pred == 0) {
        return m;
    }
    m.precision = static_cast<double>(tp_pred) / static_cast<double>(pred_ms.size());
    m.recall = static_cast<double>(tp_truth) / static_cast<double>(truth_ms.size());
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

namespace {

/// tick * 256 + action token, one entry per occupied tick.
std::vector<Tick> action_keys(const Chart& chart) {
    std::vector<Tick> keys;
    for (Tick start = 0; start < chart.n_beats * kTicksPerBeat; start += tokens::kWindowTicks) {
        const auto w = tokens::encode_window(chart.events, start);
        for (std::size_t i = 1; i + 1 < w.size(); i += 2) {
            keys.push_back((start + w[i]) * 256 + w[i + 1]);
        }
    }
    return keys;
}

std::vector<double> times_ms(const TickSet& ticks, const TempoMap& tempo) {
    std::vector<double> out;
    out.reserve(ticks.size());
    for (const auto t : ticks.ticks()) {
        out.push_back(tempo.time_at_beat(static_cast<double>(t) / kTicksPerBeat));
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << v;
    return s.str();
}

} // namespace

Report evaluate_chart(const Chart& pred, const Chart& truth, const EvalOptions& options) {
    Report r;
    r.mode = options.mode;
    r.strict_actions = options.strict_actions;
    const TickSet pred_ticks = TickSet::of_chart(pred);
    const TickSet truth_ticks = TickSet::of_chart(truth);
    if (options.mode == Mode::tolerance) {
        r.tolerance_ms = options.tolerance_ms;
        const auto p = times_ms(pred_ticks, truth.tempo);
        const auto t = times_ms(truth_ticks, truth.tempo);
        r.overall = tolerance_f1(p, t, options.tolerance_ms);
        return r;
    }
    if (options.strict_actions) {
        r.overall = tick_f1(TickSet(action_keys(pred)), TickSet(action_keys(truth)));
    } else {
        r.overall = tick_f1(pred_ticks, truth_ticks);
    }
    if (options.per_group) {
        r.groups = per_group_f1(pred_ticks, truth_ticks);
    }
    return r;
}

std::string Report::render() const {
    std::ostringstream out;
    out << "mode: " << (mode == Mode::exact ? "exact" : "tolerance");
    if (mode == Mode::tolerance) {
        out << " (+-" << text::format_real(tolerance_ms) << " ms, any-match)";
    }
    if (strict_actions) {
        out << " (actions must match)";
    }
    out << "\n";
    out << "overall  P=" << fmt(overall.precision) << "  R=" << fmt(overall.recall) << "  F1=" << fmt(overall.f1)
        << "  tp=" << overall.tp << " fp=" << overall.fp << " fn=" << overall.fn << "\n";
    if (!groups.empty()) {
        out << "group    freq%      P        R        F1\n";
        for (const auto& [g, gm] : groups) {
            out << std::left << std::setw(8) << to_string(g) << " " << std::right << std::setw(6)
                << std::fixed << std::setprecision(2) << gm.truth_frequency_pct << "  " << fmt(gm.metrics.precision)
                << "  " << fmt(gm.metrics.recall) << "  " << fmt(gm.metrics.f1) << "\n";
        }
    }
    out << "--\n";
    out << "mode\t" << (mode == Mode::exact ? "exact" : "tolerance") << "\n";
    if (mode == Mode::tolerance) {
        out << "tolerance_ms\t" << text::format_real(tolerance_ms) << "\n";
    }
    out << "strict_actions\t" << (strict_actions ? 1 : 0) << "\n";
    out << "overall.precision\t" << text::format_real(overall.precision) << "\n";
    out << "overall.recall\t" << text::format_real(overall.recall) << "\n";
    out << "overall.f1\t" << text::format_real(overall.f1) << "\n";
    out << "overall.tp\t" << overall.tp << "\n";
    out << "overall.fp\t" << overall.fp << "\n";
    out << "overall.fn\t" << overall.fn << "\n";
    for (const auto& [g, gm] : groups) {
        const std::string k = std::string("group.") + to_string(g);
        out << k << ".freq_pct\t" << text::format_real(gm.truth_frequency_pct) << "\n";
        out << k << ".precision\t" << text::format_real(gm.metrics.precision) << "\n";
        out << k << ".recall\t" << text::format_real(gm.metrics.recall) << "\n";
        out << k << ".f1\t" << text::format_real(gm.metrics.f1) << "\n";
        out << k << ".tp\t" << gm.metrics.tp << "\n";
    }
    return out.str();
}

} // namespace goct::eval
