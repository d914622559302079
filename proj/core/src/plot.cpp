#include "weldloop/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace weldloop::plot {
namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                    "#9467bd", "#ff7f0e", "#8c564b"};

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

std::optional<Csv> read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) return std::nullopt;
  std::string line;
  if (!std::getline(f, line)) return std::nullopt;
  Csv c;
  c.header = split(line);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const std::string& cell : split(line)) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (row.size() == c.header.size()) c.rows.push_back(std::move(row));
  }
  return c;
}

Series column_series(const Csv& c, std::size_t x_col, std::size_t y_col, std::string name,
                     double y_scale = 1.0) {
  Series s;
  s.name = std::move(name);
  for (const auto& row : c.rows)
    if (x_col < row.size() && y_col < row.size())
      s.points.emplace_back(row[x_col], row[y_col] * y_scale);
  return s;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series) {
  const double w = 720, h = 440, ml = 64, mr = 16, mt = 36, mb = 48;
  double xmin = HUGE_VAL, xmax = -HUGE_VAL, ymin = HUGE_VAL, ymax = -HUGE_VAL;
  for (const Series& s : series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      xmin = std::min(xmin, x), xmax = std::max(xmax, x);
      ymin = std::min(ymin, y), ymax = std::max(ymax, y);
    }

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">" << title
      << "</text>\n";
  if (!(xmin <= xmax)) {
    svg << "<text x=\"" << w / 2 << "\" y=\"" << h / 2
        << "\" text-anchor=\"middle\">no data</text>\n</svg>\n";
    return svg.str();
  }
  if (xmax == xmin) xmin -= 1, xmax += 1;
  if (ymax == ymin) ymin -= 1, ymax += 1;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad, ymax += ypad;

  const auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
  const auto sy = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + i * (xmax - xmin) / 4;
    const double yv = ymin + i * (ymax - ymin) / 4;
    svg << "<line x1=\"" << sx(xv) << "\" y1=\"" << mt << "\" x2=\"" << sx(xv) << "\" y2=\""
        << h - mb << "\" stroke=\"#eeeeee\"/>\n"
        << "<line x1=\"" << ml << "\" y1=\"" << sy(yv) << "\" x2=\"" << w - mr << "\" y2=\""
        << sy(yv) << "\" stroke=\"#eeeeee\"/>\n"
        << "<text x=\"" << sx(xv) << "\" y=\"" << h - mb + 16
        << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n"
        << "<text x=\"" << ml - 6 << "\" y=\"" << sy(yv) + 4
        << "\" text-anchor=\"end\">" << num(yv) << "</text>\n";
  }
  svg << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << w - ml - mr << "\" height=\""
      << h - mt - mb << "\" fill=\"none\" stroke=\"#444444\"/>\n"
      << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 10
      << "\" text-anchor=\"middle\">" << x_label << "</text>\n"
      << "<text x=\"16\" y=\"" << (mt + h - mb) / 2 << "\" text-anchor=\"middle\" transform=\""
      << "rotate(-90 16 " << (mt + h - mb) / 2 << ")\">" << y_label << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % (sizeof kPalette / sizeof kPalette[0])];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[i].points)
      if (std::isfinite(x) && std::isfinite(y)) svg << sx(x) << "," << sy(y) << " ";
    svg << "\"/>\n";
    const double ly = mt + 14 + 16 * static_cast<double>(i);
    svg << "<line x1=\"" << w - mr - 120 << "\" y1=\"" << ly << "\" x2=\"" << w - mr - 100
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << w - mr - 94 << "\" y=\"" << ly + 4 << "\">" << series[i].name
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_plots(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw std::invalid_argument("write_plots: not a directory: " + dir);
  int rendered = 0;
  const auto render = [&](const std::string& name, const std::string& title,
                          const std::string& xl, const std::string& yl,
                          const std::vector<Series>& series) {
    std::ofstream f(dir + "/" + name, std::ios::binary);
    if (f) f << line_chart_svg(title, xl, yl, series);
    ++rendered;
  };

  if (auto c = read_csv(dir + "/train_returns.csv"))
    render("train_returns.svg", "train returns", "episode", "return",
           {column_series(*c, 0, 1, "return")});
  if (auto c = read_csv(dir + "/test_returns.csv"))
    render("test_returns.svg", "test returns", "episode", "return",
           {column_series(*c, 0, 1, "return")});
  if (auto c = read_csv(dir + "/baseline.csv"))
    render("baseline.svg", "constant-power baseline", "power (W)", "mean return",
           {column_series(*c, 0, 1, "mean return")});
  if (auto c = read_csv(dir + "/losses.csv")) {
    for (std::size_t i = 0; i < c->rows.size(); ++i) c->rows[i].push_back(double(i));
    const std::size_t g = c->header.size();  // appended global-step column
    render("losses.svg", "sac losses", "gradient step", "loss",
           {column_series(*c, g, 2, "critic1"), column_series(*c, g, 3, "critic2"),
            column_series(*c, g, 4, "actor")});
    render("alpha.svg", "temperature and entropy", "gradient step", "value",
           {column_series(*c, g, 5, "alpha"), column_series(*c, g, 6, "entropy")});
  }
  std::error_code ec;
  for (const auto& ent : fs::directory_iterator(dir, ec)) {
    const std::string fn = ent.path().filename().string();
    if (fn.rfind("trace_ep", 0) != 0 || ent.path().extension() != ".csv") continue;
    if (auto c = read_csv(ent.path().string())) {
      const std::string base = fn.substr(0, fn.size() - 4);
      render(base + ".svg", base, "step", "volts",
             {column_series(*c, 0, 1, "OR"), column_series(*c, 0, 2, "OE"),
              column_series(*c, 0, 3, "power/10", 0.1)});
    }
  }
  if (rendered == 0)
    throw std::invalid_argument("write_plots: no run CSVs in " + dir);
}

}  // namespace weldloop::plot
