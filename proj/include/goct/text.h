#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace goct::text {

/// Shortest decimal that parses back to exactly `value`.
std::string format_real(double value);

std::optional<double> parse_real(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

std::string_view trim(std::string_view s);

/// A whitespace-separated token with its 1-based column.
struct Field {
    std::string_view text;
    std::size_t column;
};

std::vector<Field> split_fields(std::string_view line);

/// Splits on a single delimiter character, keeping empty pieces.
std::vector<std::string_view> split(std::string_view s, char delim);

/// Lines without their terminators; a trailing '\r' is stripped.
std::vector<std::string_view> lines(std::string_view s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

} // namespace goct::text
