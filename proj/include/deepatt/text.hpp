#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace deepatt {

// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

// Strict parsers; throw ConfigError naming `what` on malformed text.
double parse_double(std::string_view text, std::string_view what);
std::int64_t parse_int(std::string_view text, std::string_view what);
std::size_t parse_size(std::string_view text, std::string_view what);
bool parse_bool(std::string_view text, std::string_view what);

std::string_view trim(std::string_view text);
std::vector<std::string> split_whitespace(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);

}  // namespace deepatt
