#include "prognos/km_plot.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "prognos/error.hpp"
#include "prognos/text_parse.hpp"

namespace prognos::plot {

std::string km_csv(const std::vector<NamedCurve>& curves) {
  std::string out = "time,survival,at_risk,group,deaths,censored\n";
  for (const auto& [group, c] : curves) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      out += fmt::format("{:.4f},{:.6f},{},{},{},{}\n", c.times[i], c.survival[i], c.at_risk[i], group,
                         c.deaths[i], c.censored[i]);
    }
  }
  return out;
}

void write_km_csv(const std::vector<NamedCurve>& curves, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << km_csv(curves);
}

std::vector<NamedCurve> parse_km_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::map<std::string, int> col;
  std::vector<NamedCurve> curves;
  int lineno = 0;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::Parse, fmt::format("KM CSV line {}: {}", lineno, what));
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = text::trim(line);
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(text::trim(cell));
    if (col.empty()) {
      for (std::size_t i = 0; i < cells.size(); ++i) col[cells[i]] = static_cast<int>(i);
      for (const char* need : {"time", "survival", "at_risk", "group"}) {
        if (!col.count(need)) fail(std::string("missing column ") + need);
      }
      continue;
    }
    if (cells.size() < col.size()) fail("too few cells");
    auto num = [&](const char* name) -> double {
      const std::string& v = cells[col.at(name)];
      try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size()) return d;
      } catch (const std::exception&) {
      }
      fail(fmt::format("bad {} '{}'", name, v));
      return 0.0;
    };
    const std::string group = cells[col.at("group")];
    auto it = std::find_if(curves.begin(), curves.end(), [&](const NamedCurve& c) { return c.first == group; });
    if (it == curves.end()) {
      curves.emplace_back(group, stats::KmCurve{});
      it = std::prev(curves.end());
    }
    auto& c = it->second;
    c.times.push_back(num("time"));
    c.survival.push_back(num("survival"));
    c.at_risk.push_back(static_cast<int>(num("at_risk")));
    c.deaths.push_back(col.count("deaths") ? static_cast<int>(num("deaths")) : 0);
    c.censored.push_back(col.count("censored") ? static_cast<int>(num("censored")) : 0);
  }
  if (col.empty()) throw Error(ErrorCode::Parse, "KM CSV is empty");
  return curves;
}

std::vector<NamedCurve> read_km_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  return parse_km_csv(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
}

std::string render_km_svg(const std::vector<NamedCurve>& curves, int width, int height) {
  static constexpr const char* kColors[] = {"#c0392b", "#2471a3", "#229954", "#7d3c98", "#b9770e"};
  const double margin_l = 50, margin_r = 20, margin_t = 20, margin_b = 40;
  const double pw = width - margin_l - margin_r;
  const double ph = height - margin_t - margin_b;
  double t_max = 0.0;
  for (const auto& [_, c] : curves) {
    if (!c.times.empty()) t_max = std::max(t_max, c.times.back());
  }
  if (t_max <= 0.0) t_max = 1.0;
  auto X = [&](double t) { return margin_l + pw * t / t_max; };
  auto Y = [&](double s) { return margin_t + ph * (1.0 - s); };

  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
      width, height, width, height);
  out += fmt::format(
      "<g class=\"axes\" stroke=\"#000\" fill=\"none\"><line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" "
      "y2=\"{1:.2f}\"/><line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{3:.2f}\"/></g>\n",
      margin_l, Y(0.0), X(t_max), Y(1.0));
  out += fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">months</text>\n", margin_l + pw / 2,
                     height - 8);
  out += fmt::format("<text x=\"12\" y=\"{:.2f}\" transform=\"rotate(-90 12 {:.2f})\" text-anchor=\"middle\">"
                     "survival</text>\n",
                     margin_t + ph / 2, margin_t + ph / 2);
  std::size_t gi = 0;
  for (const auto& [group, c] : curves) {
    const char* color = kColors[gi++ % std::size(kColors)];
    std::string pts = fmt::format("{:.2f},{:.2f}", X(0.0), Y(1.0));
    double s = 1.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      pts += fmt::format(" {:.2f},{:.2f}", X(c.times[i]), Y(s));
      s = c.survival[i];
      pts += fmt::format(" {:.2f},{:.2f}", X(c.times[i]), Y(s));
    }
    out += fmt::format("<polyline class=\"km-step\" data-group=\"{}\" fill=\"none\" stroke=\"{}\" "
                       "stroke-width=\"1.5\" points=\"{}\"/>\n",
                       group, color, pts);
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (c.censored[i] == 0) continue;
      const double y = Y(c.survival[i]);
      out += fmt::format("<line class=\"km-censor\" data-group=\"{}\" stroke=\"{}\" x1=\"{:.2f}\" y1=\"{:.2f}\" "
                         "x2=\"{:.2f}\" y2=\"{:.2f}\"/>\n",
                         group, color, X(c.times[i]), y - 4, X(c.times[i]), y + 4);
    }
    out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" fill=\"{}\">{}</text>\n", X(t_max) - 80,
                       margin_t + 14.0 * static_cast<double>(gi), color, group);
  }
  out += "</svg>\n";
  return out;
}

}  // namespace prognos::plot
