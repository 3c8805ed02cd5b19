#include "prognos/text_parse.hpp"

#include <cctype>
#include <regex>

#include <fmt/format.h>

namespace prognos::text {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> nonempty_lines(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find('\n', start);
    if (end == std::string_view::npos) end = s.size();
    auto line = trim(s.substr(start, end - start));
    if (!line.empty()) out.push_back(std::move(line));
    start = end + 1;
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> key_values(std::string_view s) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& line : nonempty_lines(s)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos || colon == 0) continue;
    std::string key = line.substr(0, colon);
    std::string cleaned;
    for (char c : key) {
      if (c != '*' && c != '#') cleaned.push_back(c);
    }
    cleaned = trim(cleaned);
    while (!cleaned.empty() && (cleaned.front() == '-' || cleaned.front() == '*')) {
      cleaned = trim(cleaned.substr(1));
    }
    if (cleaned.empty()) continue;
    out.emplace_back(std::move(cleaned), trim(std::string_view(line).substr(colon + 1)));
  }
  return out;
}

std::string canonical_key(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

std::optional<double> first_number(std::string_view s) {
  static const std::regex re(R"([-+]?[0-9]+(?:\.[0-9]+)?|[-+]?\.[0-9]+)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(s.begin(), s.end(), m, re)) return std::nullopt;
  try {
    return std::stod(m.str());
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string format_months(double months) { return fmt::format("{:.2f}", months); }

}  // namespace prognos::text
