#pragma once

#include "goct/chart.h"
#include "goct/errors.h"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace goct::tokens {

using TokenId = std::int32_t;

// Vocabulary layout: [0,96) time offsets within a window, 96 separator,
// [97,177) action combinations, 177 end-of-sequence.
inline constexpr TokenId kTimeTokens = 96;
inline constexpr TokenId kSeparator = 96;
inline constexpr TokenId kFirstAction = 97;
inline constexpr TokenId kLastAction = 176;
inline constexpr TokenId kEos = 177;
inline constexpr TokenId kVocabSize = 178;
inline constexpr int kActionCount = 80;

inline constexpr std::int64_t kWindowBeats = 2;
inline constexpr Tick kWindowTicks = kWindowBeats * kTicksPerBeat;
inline constexpr std::size_t kContextLength = 7;
inline constexpr std::size_t kMaxWindowTokens = 1 + 2 * kTimeTokens;

constexpr bool is_time(TokenId t) { return t >= 0 && t < kTimeTokens; }
constexpr bool is_action(TokenId t) { return t >= kFirstAction && t <= kLastAction; }

enum class ColumnState : std::uint8_t { none = 0, onset = 1, release = 2 };

/// Simultaneous per-column states at one tick; column 0 first.
using ActionCombo = std::array<ColumnState, kColumns>;

/// Base-3 code with column 0 most significant, offset into the action range.
TokenId action_to_token(const ActionCombo& combo);
ActionCombo token_to_action(TokenId token);

struct WindowTokens {
    std::int64_t start_beat = 0;
    std::vector<TokenId> tokens;

    friend bool operator==(const WindowTokens&, const WindowTokens&) = default;
};

/// Tokens for the events in [start_tick, start_tick + 96): SEP, then one
/// (time, action) pair per occupied tick. `start_tick` may be negative.
std::vector<TokenId> encode_window(std::span<const ChartEvent> events, Tick start_tick);

/// One window per even beat covering the chart.
std::vector<WindowTokens> encode_chart(const Chart& chart);

/// Diagnostic raised for token sequences that break the window grammar.
class DecodeError : public Error {
public:
    DecodeError(std::size_t window, std::size_t position, const std::string& message);
    std::size_t window() const { return window_; }
    std::size_t position() const { return position_; }

private:
    std::size_t window_;
    std::size_t position_;
};

/// Inverse of encode_chart. Trailing EOS tokens in a window are padding.
/// With `time_only`, windows are SEP TIME* and each time becomes an onset
/// on column 0.
std::vector<ChartEvent> decode_stream(std::span<const WindowTokens> windows, bool time_only = false);

/// Last `k` tokens of `stream`, left-padded with EOS.
std::vector<TokenId> context_slice(std::span<const TokenId> stream, std::size_t k = kContextLength);

std::vector<TokenId> strip_actions(std::span<const TokenId> tokens);
std::vector<WindowTokens> strip_actions(std::span<const WindowTokens> windows);

/// Throws DecodeError unless `tokens` is SEP (TIME ACTION)* (or SEP TIME*
/// in time-only mode) with strictly increasing times.
void check_window_grammar(std::span<const TokenId> tokens, bool time_only = false, std::size_t window_index = 0);

/// Text dump: one `window <start_beat> : <id> <id> ...` line per window.
std::string format_windows(std::span<const WindowTokens> windows);
std::vector<WindowTokens> parse_windows(std::string_view dump);

} // namespace goct::tokens
