#pragma once

#include <map>
#include <string>
#include <vector>

namespace xtransfer {

struct Series {
  std::string name;
  std::vector<double> values;
};

// Static SVG charts. Grouped bars: one group per label, one bar per series.
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<Series>& series, const std::string& y_label);
// Series values are y over x = 0, 1, 2, ...
std::string line_chart_svg(const std::string& title, const std::vector<Series>& series, const std::string& x_label,
                           const std::string& y_label);
// One polygon per series over the axes, radius scaled to [0, max_value].
std::string radar_chart_svg(const std::string& title, const std::vector<std::string>& axes,
                            const std::vector<Series>& series, double max_value);

}  // namespace xtransfer
