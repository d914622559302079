#pragma once

#include <string>
#include <vector>

// Small self-contained SVG line charts for the run artifacts. No styling
// knobs: these exist so a run directory is inspectable without extra tools.
namespace weldloop::plot {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series);

// Renders train_returns/test_returns/baseline/losses/trace_ep*.svg next to
// the CSVs in `dir`. Missing CSVs are skipped.
void write_plots(const std::string& dir);

}  // namespace weldloop::plot
