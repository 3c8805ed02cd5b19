#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

// Small helpers for reading model answers.
namespace prognos::text {

std::string trim(std::string_view s);
std::string lower(std::string_view s);
std::vector<std::string> nonempty_lines(std::string_view s);

/// `Key: value` pairs, one per line, in order. Leading bullets ("-", "*")
/// and markdown bold markers are stripped from keys.
std::vector<std::pair<std::string, std::string>> key_values(std::string_view s);

/// Alphanumeric-only lowercase form used for fuzzy key matching.
std::string canonical_key(std::string_view s);

/// First decimal number in the text (sign and fraction allowed).
std::optional<double> first_number(std::string_view s);

/// Formats a month value the way prompts and reports print it.
std::string format_months(double months);

}  // namespace prognos::text
