#include "xtransfer/plots.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace xtransfer {

namespace {

constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

std::ostringstream header(double w, double h, const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << " " << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << esc(title) << "</text>\n";
  return os;
}

void legend(std::ostringstream& os, const std::vector<Series>& series, double x, double y) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double yy = y + 16.0 * static_cast<double>(i);
    os << "<rect x=\"" << x << "\" y=\"" << yy - 9 << "\" width=\"10\" height=\"10\" fill=\""
       << kPalette[i % kPaletteSize] << "\"/>\n"
       << "<text x=\"" << x + 14 << "\" y=\"" << yy << "\">" << esc(series[i].name) << "</text>\n";
  }
}

std::pair<double, double> value_range(const std::vector<Series>& series) {
  double lo = 0.0, hi = 0.0;
  for (const auto& s : series) {
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi == lo) hi = lo + 1.0;
  return {lo, hi};
}

}  // namespace

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<Series>& series, const std::string& y_label) {
  const double left = 60, right = 150, top = 32, bottom = 70;
  const double group_w = std::max(40.0, 18.0 * static_cast<double>(std::max<std::size_t>(series.size(), 1)) + 12.0);
  const double plot_w = group_w * static_cast<double>(std::max<std::size_t>(labels.size(), 1));
  const double plot_h = 260;
  const double w = left + plot_w + right, h = top + plot_h + bottom;
  auto os = header(w, h, title);
  const auto [lo, hi] = value_range(series);
  auto ypix = [&, lo = lo, hi = hi](double v) { return top + plot_h * (hi - v) / (hi - lo); };
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    os << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << ypix(v) << "\" y2=\"" << ypix(v)
       << "\" stroke=\"#ddd\"/>\n"
       << "<text x=\"" << left - 4 << "\" y=\"" << ypix(v) + 4 << "\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
  }
  const double bar_w = (group_w - 12.0) / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  for (std::size_t g = 0; g < labels.size(); ++g) {
    const double gx = left + group_w * static_cast<double>(g) + 6.0;
    for (std::size_t s = 0; s < series.size(); ++s) {
      if (g >= series[s].values.size() || !std::isfinite(series[s].values[g])) continue;
      const double v = series[s].values[g];
      const double y0 = ypix(std::max(v, 0.0)), y1 = ypix(std::min(v, 0.0));
      os << "<rect x=\"" << gx + bar_w * static_cast<double>(s) << "\" y=\"" << y0 << "\" width=\"" << bar_w - 1
         << "\" height=\"" << std::max(y1 - y0, 0.5) << "\" fill=\"" << kPalette[s % kPaletteSize] << "\"><title>"
         << esc(series[s].name + " / " + labels[g]) << ": " << fmt(v) << "</title></rect>\n";
    }
    os << "<text transform=\"translate(" << gx + (group_w - 12.0) / 2 << "," << top + plot_h + 12
       << ") rotate(30)\">" << esc(labels[g]) << "</text>\n";
  }
  os << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << ypix(0) << "\" y2=\"" << ypix(0)
     << "\" stroke=\"black\"/>\n"
     << "<text transform=\"translate(14," << top + plot_h / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << esc(y_label) << "</text>\n";
  legend(os, series, left + plot_w + 16, top + 12);
  os << "</svg>\n";
  return os.str();
}

std::string line_chart_svg(const std::string& title, const std::vector<Series>& series, const std::string& x_label,
                           const std::string& y_label) {
  const double left = 60, right = 150, top = 32, bottom = 44, plot_w = 480, plot_h = 260;
  const double w = left + plot_w + right, h = top + plot_h + bottom;
  auto os = header(w, h, title);
  auto [lo, hi] = value_range(series);
  if (lo == 0.0) {
    lo = hi;
    for (const auto& s : series) {
      for (double v : s.values) {
        if (std::isfinite(v)) lo = std::min(lo, v);
      }
    }
    if (lo == hi) lo = hi - 1.0;
  }
  std::size_t n = 1;
  for (const auto& s : series) n = std::max(n, s.values.size());
  auto xpix = [&](std::size_t i) { return left + plot_w * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(n - 1, 1)); };
  auto ypix = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    os << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << ypix(v) << "\" y2=\"" << ypix(v)
       << "\" stroke=\"#ddd\"/>\n"
       << "<text x=\"" << left - 4 << "\" y=\"" << ypix(v) + 4 << "\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    os << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kPalette[s % kPaletteSize] << "\" points=\"";
    for (std::size_t i = 0; i < series[s].values.size(); ++i) {
      if (std::isfinite(series[s].values[i])) os << xpix(i) << "," << ypix(series[s].values[i]) << " ";
    }
    os << "\"/>\n";
  }
  os << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">" << esc(x_label)
     << " (0.." << n - 1 << ")</text>\n"
     << "<text transform=\"translate(14," << top + plot_h / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << esc(y_label) << "</text>\n";
  legend(os, series, left + plot_w + 16, top + 12);
  os << "</svg>\n";
  return os.str();
}

std::string radar_chart_svg(const std::string& title, const std::vector<std::string>& axes,
                            const std::vector<Series>& series, double max_value) {
  const double size = 420, cx = 200, cy = 220, radius = 150;
  auto os = header(size + 160, size + 20, title);
  const std::size_t n = std::max<std::size_t>(axes.size(), 1);
  const double pi = std::acos(-1.0);
  auto point = [&](std::size_t i, double frac) {
    const double a = -pi / 2 + 2 * pi * static_cast<double>(i) / static_cast<double>(n);
    return std::pair{cx + radius * frac * std::cos(a), cy + radius * frac * std::sin(a)};
  };
  if (!(max_value > 0.0)) max_value = 1.0;
  for (int ring = 1; ring <= 4; ++ring) {
    os << "<polygon fill=\"none\" stroke=\"#ddd\" points=\"";
    for (std::size_t i = 0; i < n; ++i) {
      auto [x, y] = point(i, ring / 4.0);
      os << x << "," << y << " ";
    }
    os << "\"/>\n";
  }
  for (std::size_t i = 0; i < axes.size(); ++i) {
    auto [x, y] = point(i, 1.0);
    auto [lx, ly] = point(i, 1.12);
    os << "<line x1=\"" << cx << "\" y1=\"" << cy << "\" x2=\"" << x << "\" y2=\"" << y << "\" stroke=\"#bbb\"/>\n"
       << "<text x=\"" << lx << "\" y=\"" << ly << "\" text-anchor=\"middle\">" << esc(axes[i]) << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    os << "<polygon fill=\"" << kPalette[s % kPaletteSize] << "\" fill-opacity=\"0.2\" stroke=\""
       << kPalette[s % kPaletteSize] << "\" points=\"";
    for (std::size_t i = 0; i < axes.size(); ++i) {
      const double v = i < series[s].values.size() && std::isfinite(series[s].values[i]) ? series[s].values[i] : 0.0;
      auto [x, y] = point(i, std::clamp(v / max_value, 0.0, 1.0));
      os << x << "," << y << " ";
    }
    os << "\"/>\n";
  }
  legend(os, series, size, 50);
  os << "</svg>\n";
  return os.str();
}

}  // namespace xtransfer
