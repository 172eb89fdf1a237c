#pragma once

#include "goct/chart.h"

#include <string>
#include <string_view>

namespace goct {

/// Canonical chart text format.
///
///     #cchart v1
///     keys 4
///     difficulty <real>
///     beats <n>                      (optional; defaults to the smallest cover)
///     timing <start_ms> <bpm>        (one or more, ascending)
///     note <column> <tick>
///     hold <column> <start_tick> <end_tick>
///
/// `#` starts a comment, blank lines are ignored. Errors are reported as
/// ParseError with the offending line and column.
Chart parse_cchart(std::string_view text);

/// Deterministic rendering: events sorted, reals in shortest round-trip form.
std::string serialize_cchart(const Chart& chart);

Chart load_cchart(const std::string& path);
void save_cchart(const std::string& path, const Chart& chart);

} // namespace goct
