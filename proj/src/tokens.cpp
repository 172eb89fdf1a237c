#include "goct/tokens.h"

#include "goct/errors.h"
#include "goct/text.h"

#include <algorithm>
#include <sstream>

namespace goct::tokens {

TokenId action_to_token(const ActionCombo& combo) {
    int value = 0;
    for (const auto s : combo) {
        value = value * 3 + static_cast<int>(s);
    }
    if (value == 0) {
        throw ValidationError("action combination has no active column");
    }
    return kSeparator + value;
}

ActionCombo token_to_action(TokenId token) {
    if (!is_action(token)) {
        throw ValidationError("token " + std::to_string(token) + " is not an action token");
    }
    int value = token - kSeparator;
    ActionCombo combo{};
    for (int c = kColumns - 1; c >= 0; --c) {
        combo[static_cast<std::size_t>(c)] = static_cast<ColumnState>(value % 3);
        value /= 3;
    }
    return combo;
}

std::vector<TokenId> encode_window(std::span<const ChartEvent> events, Tick start_tick) {
    std::vector<TokenId> out{kSeparator};
    const Tick end_tick = start_tick + kWindowTicks;
    auto it = std::lower_bound(events.begin(), events.end(), start_tick,
                               [](const ChartEvent& e, Tick t) { return e.tick < t; });
    while (it != events.end() && it->tick < end_tick) {
        const Tick tick = it->tick;
        ActionCombo combo{};
        for (; it != events.end() && it->tick == tick; ++it) {
            combo[static_cast<std::size_t>(it->column)] =
                it->kind == EventKind::onset ? ColumnState::onset : ColumnState::release;
        }
        out.push_back(static_cast<TokenId>(tick - start_tick));
        out.push_back(action_to_token(combo));
    }
    return out;
}

std::vector<WindowTokens> encode_chart(const Chart& chart) {
    std::vector<WindowTokens> windows;
    for (std::int64_t beat = 0; beat < chart.n_beats; beat += kWindowBeats) {
        windows.push_back({beat, encode_window(chart.events, beat * kTicksPerBeat)});
    }
    return windows;
}

DecodeError::DecodeError(std::size_t window, std::size_t position, const std::string& message)
    : Error("window " + std::to_string(window) + ", position " + std::to_string(position) + ": " +
                         message),
      window_(window), position_(position) {}

void check_window_grammar(std::span<const TokenId> tokens, bool time_only, std::size_t window_index) {
    if (tokens.empty() || tokens[0] != kSeparator) {
        throw DecodeError(window_index, 0, "window must start with the separator");
    }
    TokenId prev_time = -1;
    bool expect_action = false;
    bool padding = false;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        const TokenId t = tokens[i];
        if (t < 0 || t >= kVocabSize) {
            throw DecodeError(window_index, i, "token id " + std::to_string(t) + " outside the vocabulary");
        }
        if (t == kEos) {
            padding = true;
            continue;
        }
        if (padding) {
            throw DecodeError(window_index, i, "token after EOS padding");
        }
        if (t == kSeparator) {
            throw DecodeError(window_index, i, "separator inside a window");
        }
        if (expect_action) {
            if (!is_action(t)) {
                throw DecodeError(window_index, i, "expected an action token after time " + std::to_string(prev_time));
            }
            expect_action = false;
            continue;
        }
        if (is_action(t)) {
            throw DecodeError(window_index, i, "action token without a preceding time token");
        }
        if (t <= prev_time) {
            throw DecodeError(window_index, i, "non-increasing time token " + std::to_string(t) + " after " +
                                                   std::to_string(prev_time));
        }
        prev_time = t;
        expect_action = !time_only;
    }
    if (expect_action) {
        throw DecodeError(window_index, tokens.size(), "time token " + std::to_string(prev_time) + " has no action");
    }
}

std::vector<ChartEvent> decode_stream(std::span<const WindowTokens> windows, bool time_only) {
    std::vector<ChartEvent> events;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto& window = windows[w];
        check_window_grammar(window.tokens, time_only, w);
        const Tick origin = window.start_beat * kTicksPerBeat;
        Tick tick = 0;
        for (std::size_t i = 1; i < window.tokens.size(); ++i) {
            const TokenId t = window.tokens[i];
            if (is_time(t)) {
                tick = origin + t;
                if (time_only) {
                    events.push_back({tick, 0, EventKind::onset});
                }
            } else if (is_action(t)) {
                const auto combo = token_to_action(t);
                for (int c = 0; c < kColumns; ++c) {
                    const auto s = combo[static_cast<std::size_t>(c)];
                    if (s != ColumnState::none) {
                        events.push_back({tick, c, s == ColumnState::onset ? EventKind::onset : EventKind::release});
                    }
                }
            }
        }
    }
    sort_events(events);
    return events;
}

std::vector<TokenId> context_slice(std::span<const TokenId> stream, std::size_t k) {
    std::vector<TokenId> out;
    out.reserve(k);
    const std::size_t take = std::min(k, stream.size());
    out.assign(k - take, kEos);
    out.insert(out.end(), stream.end() - static_cast<std::ptrdiff_t>(take), stream.end());
    return out;
}

std::vector<TokenId> strip_actions(std::span<const TokenId> tokens) {
    std::vector<TokenId> out;
    out.reserve(tokens.size());
    std::copy_if(tokens.begin(), tokens.end(), std::back_inserter(out), [](TokenId t) { return !is_action(t); });
    return out;
}

std::vector<WindowTokens> strip_actions(std::span<const WindowTokens> windows) {
    std::vector<WindowTokens> out;
    out.reserve(windows.size());
    for (const auto& w : windows) {
        out.push_back({w.start_beat, strip_actions(w.tokens)});
    }
    return out;
}

std::string format_windows(std::span<const WindowTokens> windows) {
    std::ostringstream out;
    for (const auto& w : windows) {
        out << "window " << w.start_beat << " :";
        for (const auto t : w.tokens) {
            out << ' ' << t;
        }
        out << '\n';
    }
    return out.str();
}

std::vector<WindowTokens> parse_windows(std::string_view dump) {
    std::vector<WindowTokens> windows;
    const auto all = text::lines(dump);
    for (std::size_t n = 0; n < all.size(); ++n) {
        const auto line = text::trim(all[n]);
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const auto fields = text::split_fields(line);
        if (fields.size() < 3 || fields[0].text != "window" || fields[2].text != ":") {
            throw ParseError(n + 1, 1, "expected 'window <start_beat> : <ids...>'");
        }
        const auto beat = text::parse_int(fields[1].text);
        if (!beat) {
            throw ParseError(n + 1, fields[1].column, "bad window start beat");
        }
        WindowTokens w{*beat, {}};
        for (std::size_t i = 3; i < fields.size(); ++i) {
            const auto id = text::parse_int(fields[i].text);
            if (!id || *id < 0 || *id >= kVocabSize) {
                throw ParseError(n + 1, fields[i].column, "bad token id '" + std::string(fields[i].text) + "'");
            }
            w.tokens.push_back(static_cast<TokenId>(*id));
        }
        windows.push_back(std::move(w));
    }
    return windows;
}

} // namespace goct::tokens
