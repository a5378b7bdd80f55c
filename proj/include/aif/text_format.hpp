#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace aif {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double value);
double parse_double(std::string_view text);
long long parse_integer(std::string_view text);
std::uint64_t parse_unsigned(std::string_view text);

std::vector<std::string> split_csv(std::string_view line);

}  // namespace aif
