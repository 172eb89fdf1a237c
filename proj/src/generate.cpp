#include "goct/generate.h"

#include "goct/train.h"

#include <array>
#include <limits>

namespace goct::nn {

std::vector<bool> allowed_next(std::span<const TokenId> window, bool time_only) {
    std::vector<bool> allowed(static_cast<std::size_t>(tokens::kVocabSize), false);
    TokenId prev_time = -1;
    bool last_was_time = false;
    for (std::size_t i = 1; i < window.size(); ++i) {
        if (tokens::is_time(window[i])) {
            prev_time = window[i];
            last_was_time = true;
        } else {
            last_was_time = false;
        }
    }
    if (last_was_time && !time_only) {
        for (TokenId t = tokens::kFirstAction; t <= tokens::kLastAction; ++t) {
            allowed[static_cast<std::size_t>(t)] = true;
        }
        return allowed;
    }
    for (TokenId t = prev_time + 1; t < tokens::kTimeTokens; ++t) {
        allowed[static_cast<std::size_t>(t)] = true;
    }
    allowed[static_cast<std::size_t>(tokens::kEos)] = true;
    return allowed;
}

std::vector<TokenId> generate_window(const ModelParams& params, const FeatureMatrix& encoder_frames,
                                     std::span<const TokenId> context, double difficulty) {
    const auto& c = params.config;
    DecoderSession session(params, encoder_frames, difficulty);
    for (const auto t : context) {
        session.step(t);
    }
    std::vector<TokenId> window{tokens::kSeparator};
    Eigen::RowVectorXf logits = session.step(tokens::kSeparator);
    for (int produced = 0; produced < c.max_target_tokens; ++produced) {
        const auto allowed = allowed_next(window, c.time_only);
        TokenId best = tokens::kEos;
        float best_logit = -std::numeric_limits<float>::infinity();
        for (TokenId t = 0; t < tokens::kVocabSize; ++t) {
            if (allowed[static_cast<std::size_t>(t)] && logits(t) > best_logit) {
                best_logit = logits(t);
                best = t;
            }
        }
        if (best == tokens::kEos) {
            break;
        }
        window.push_back(best);
        if (produced + 1 == c.max_target_tokens) {
            break;
        }
        logits = session.step(best);
    }
    return window;
}

std::vector<tokens::WindowTokens> generate_windows(const ModelParams& params, const BeatSpectrogram& spectrogram,
                                                   double difficulty) {
    std::vector<tokens::WindowTokens> windows;
    std::vector<TokenId> stream;
    for (std::int64_t beat = 0; beat < spectrogram.n_beats; beat += tokens::kWindowBeats) {
        const auto frames = window_frames(spectrogram, beat * kTicksPerBeat);
        const auto context = tokens::context_slice(stream);
        auto window = generate_window(params, frames, context, difficulty);
        stream.insert(stream.end(), window.begin(), window.end());
        windows.push_back({beat, std::move(window)});
    }
    return windows;
}

std::vector<ChartEvent> repair_events(std::vector<ChartEvent> events, Tick end_tick) {
    sort_events(events);
    std::vector<ChartEvent> out;
    out.reserve(events.size());
    std::array<bool, kColumns> open{};
    for (const auto& e : events) {
        if (e.tick >= end_tick) {
            break;
        }
        auto& is_open = open[static_cast<std::size_t>(e.column)];
        if (e.kind == EventKind::release) {
            if (!is_open) {
                continue;
            }
            is_open = false;
        } else {
            is_open = true;
        }
        out.push_back(e);
    }
    return out;
}

Chart generate_chart(const ModelParams& params, const BeatSpectrogram& spectrogram, const TempoMap& tempo,
                     double difficulty) {
    Chart chart;
    chart.tempo = tempo;
    chart.difficulty = difficulty;
    chart.n_beats = spectrogram.n_beats;
    if (spectrogram.n_beats <= 0) {
        return chart;
    }
    const auto windows = generate_windows(params, spectrogram, difficulty);
    auto events = tokens::decode_stream(windows, params.config.time_only);
    chart.events = repair_events(std::move(events), chart.n_beats * kTicksPerBeat);
    validate_chart(chart);
    return chart;
}

} // namespace goct::nn
