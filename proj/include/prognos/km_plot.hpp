#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "prognos/survstats.hpp"

namespace prognos::plot {

using NamedCurve = std::pair<std::string, stats::KmCurve>;

/// CSV `time,survival,at_risk,group,deaths,censored`, one row per curve step,
/// groups in the given order.
std::string km_csv(const std::vector<NamedCurve>& curves);
void write_km_csv(const std::vector<NamedCurve>& curves, const std::filesystem::path& path);

/// Inverse of km_csv; groups come back in first-appearance order. The
/// `deaths` and `censored` columns are optional. Throws Parse.
std::vector<NamedCurve> parse_km_csv(const std::string& text);
std::vector<NamedCurve> read_km_csv(const std::filesystem::path& path);

/// One step polyline per group (class "km-step", data-group=<name>) starting
/// at (0, 1), plus a short vertical tick at every time with censoring.
std::string render_km_svg(const std::vector<NamedCurve>& curves, int width = 640, int height = 400);

}  // namespace prognos::plot
