#ifndef DSIN_PLOT_HPP
#define DSIN_PLOT_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dsin/errors.hpp"

// Static SVG rendering for the `report` subcommand: line charts for loss
// curves and threshold sweeps, a signed heatmap for label correlations.

namespace dsin::plot {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

namespace detail {
inline std::string color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
                                  "#bcbd22", "#e377c2", "#aec7e8", "#98df8a"};
  return palette[i % 12];
}
inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}
}  // namespace detail

inline void line_chart(const std::vector<Series>& series,
                       const std::string& title, const std::string& x_label,
                       const std::string& y_label,
                       const std::filesystem::path& path) {
  const int W = 720, H = 440, ml = 64, mr = 150, mt = 40, mb = 48;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const Series& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin) || xmax == xmin) { xmin = 0; xmax = 1; }
  if (!std::isfinite(ymin) || ymax == ymin) { ymin -= 0.5; ymax += 0.5; }
  auto px = [&](double x) {
    return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr);
  };
  auto py = [&](double y) {
    return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb);
  };
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot write " + path.string());
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='"
     << H << "' font-family='sans-serif' font-size='12'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << W / 2 << "' y='20' text-anchor='middle' font-size='15'>"
     << title << "</text>\n";
  // axes
  os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
     << H - mb << "' stroke='black'/>\n";
  os << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr
     << "' y2='" << H - mb << "' stroke='black'/>\n";
  os << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 12
     << "' text-anchor='middle'>" << x_label << "</text>\n";
  os << "<text x='16' y='" << (mt + H - mb) / 2
     << "' text-anchor='middle' transform='rotate(-90 16 "
     << (mt + H - mb) / 2 << ")'>" << y_label << "</text>\n";
  os << "<text x='" << ml - 6 << "' y='" << H - mb + 4
     << "' text-anchor='end'>" << detail::fmt(ymin) << "</text>\n";
  os << "<text x='" << ml - 6 << "' y='" << mt + 4 << "' text-anchor='end'>"
     << detail::fmt(ymax) << "</text>\n";
  os << "<text x='" << ml << "' y='" << H - mb + 16
     << "' text-anchor='middle'>" << detail::fmt(xmin) << "</text>\n";
  os << "<text x='" << W - mr << "' y='" << H - mb + 16
     << "' text-anchor='middle'>" << detail::fmt(xmax) << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const Series& s = series[si];
    os << "<polyline fill='none' stroke='" << detail::color(si)
       << "' stroke-width='1.5' points='";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    os << "'/>\n";
    const int ly = mt + 16 * static_cast<int>(si);
    os << "<line x1='" << W - mr + 8 << "' y1='" << ly << "' x2='"
       << W - mr + 28 << "' y2='" << ly << "' stroke='" << detail::color(si)
       << "' stroke-width='2.5'/>\n";
    os << "<text x='" << W - mr + 32 << "' y='" << ly + 4 << "'>" << s.name
       << "</text>\n";
  }
  os << "</svg>\n";
}

// Signed heatmap: green positive, red negative, white at zero.
inline void heatmap(const std::vector<double>& matrix, int n,
                    const std::string& title,
                    const std::filesystem::path& path) {
  const int cell = std::max(14, std::min(40, 360 / std::max(n, 1)));
  const int ml = 48, mt = 48;
  const int W = ml + n * cell + 24, H = mt + n * cell + 24;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot write " + path.string());
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='"
     << H << "' font-family='sans-serif' font-size='10'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << W / 2 << "' y='18' text-anchor='middle' font-size='14'>"
     << title << "</text>\n";
  for (int i = 0; i < n; ++i) {
    os << "<text x='" << ml - 4 << "' y='" << mt + i * cell + cell / 2 + 3
       << "' text-anchor='end'>" << i << "</text>\n";
    os << "<text x='" << ml + i * cell + cell / 2 << "' y='" << mt - 6
       << "' text-anchor='middle'>" << i << "</text>\n";
    for (int j = 0; j < n; ++j) {
      const double v =
          std::clamp(matrix[static_cast<std::size_t>(i) * n + j], -1.0, 1.0);
      const int other = static_cast<int>(255 * (1.0 - std::fabs(v)));
      int rr = 255, gg = 255, bb = other;
      if (v >= 0) { rr = other; bb = other; }  // green
      else { gg = other; }                      // red
      os << "<rect x='" << ml + j * cell << "' y='" << mt + i * cell
         << "' width='" << cell << "' height='" << cell << "' fill='rgb("
         << rr << ',' << gg << ',' << bb << ")' stroke='#ccc'/>\n";
    }
  }
  os << "</svg>\n";
}

}  // namespace dsin::plot

#endif  // DSIN_PLOT_HPP
