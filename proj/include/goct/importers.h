#pragma once

#include "goct/chart.h"

#include <string>
#include <string_view>
#include <vector>

namespace goct {

inline constexpr double kQuantizationWarningMs = 2.0;

struct OsuImport {
    Chart chart;
    double max_quantization_error_ms = 0.0;
    std::vector<std::string> warnings;
};

/// Imports an osu!mania beatmap. Only uninherited timing points are used.
/// Throws FormatError for non-mania or non-4-key maps. `difficulty` comes
/// from a sidecar source since `.osu` files carry no star rating.
OsuImport import_osu(std::string_view text, double difficulty = 0.0);

/// Key count declared by an `.osu` file (CircleSize for mania maps).
int osu_key_count(std::string_view text);

struct SmImport {
    std::vector<Chart> charts;
    std::vector<std::string> descriptions;  // "<difficulty name> <meter>" per kept chart
    std::vector<std::string> warnings;
};

/// Imports every dance-single chart of a StepMania `.sm` file. Charts with
/// rows off the 1/48-beat grid are dropped with a diagnostic in `warnings`.
SmImport import_sm(std::string_view text);

} // namespace goct
