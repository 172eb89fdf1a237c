#pragma once

#include "goct/chart.h"
#include "goct/model.h"

namespace goct::nn {

/// Token classes admitted at the next decoding step given the window so
/// far (which starts with SEP).
std::vector<bool> allowed_next(std::span<const TokenId> window, bool time_only);

/// Greedy grammar-constrained decoding of one window. The returned tokens
/// start with the forced SEP and exclude the terminating EOS.
std::vector<TokenId> generate_window(const ModelParams& params, const FeatureMatrix& encoder_frames,
                                     std::span<const TokenId> context, double difficulty);

/// Slides over the song in two-beat strides, feeding each window the four
/// surrounding beats of frames and the previous seven tokens.
std::vector<tokens::WindowTokens> generate_windows(const ModelParams& params, const BeatSpectrogram& spectrogram,
                                                   double difficulty);

/// Generates a chart. Decoded releases with no open onset on their column
/// are dropped so the result always satisfies the chart invariants.
Chart generate_chart(const ModelParams& params, const BeatSpectrogram& spectrogram, const TempoMap& tempo,
                     double difficulty);

/// Drops releases without an open onset and events at or past `end_tick`.
std::vector<ChartEvent> repair_events(std::vector<ChartEvent> events, Tick end_tick);

} // namespace goct::nn
