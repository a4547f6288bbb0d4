#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "tacserv/common.hpp"

namespace tacserv {

/// Tiny SVG line/scatter plot writer; enough to render the report CSVs
/// without external tooling.
struct SvgPlot {
  struct Series {
    std::string label;
    std::string color = "#1f77b4";
    bool scatter = false;
    std::vector<double> x, y;
  };

  std::string title;
  std::vector<Series> series;
  int width = 640, height = 420;

  void save(const std::string& path) const {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
      for (size_t i = 0; i < s.x.size(); ++i) {
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        ymin = std::min(ymin, s.y[i]);
        ymax = std::max(ymax, s.y[i]);
      }
    if (xmin > xmax) {
      xmin = 0;
      xmax = 1;
      ymin = 0;
      ymax = 1;
    }
    if (xmax - xmin < 1e-12) xmax = xmin + 1;
    if (ymax - ymin < 1e-12) ymax = ymin + 1;
    const double ml = 60, mr = 20, mt = 40, mb = 40;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); };
    auto py = [&](double y) {
      return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
    };
    std::ofstream out(path);
    if (!out) throw TacservError("cannot write svg: " + path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='"
        << height << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << width / 2 << "' y='20' text-anchor='middle' font-size='14'>"
        << title << "</text>\n";
    out << "<line x1='" << ml << "' y1='" << height - mb << "' x2='" << width - mr
        << "' y2='" << height - mb << "' stroke='black'/>\n";
    out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
        << height - mb << "' stroke='black'/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double xv = xmin + k * (xmax - xmin) / 4;
      const double yv = ymin + k * (ymax - ymin) / 4;
      out << "<text x='" << px(xv) << "' y='" << height - mb + 16
          << "' text-anchor='middle' font-size='10'>" << xv << "</text>\n";
      out << "<text x='" << ml - 6 << "' y='" << py(yv) + 4
          << "' text-anchor='end' font-size='10'>" << yv << "</text>\n";
    }
    int li = 0;
    for (const auto& s : series) {
      if (s.scatter) {
        for (size_t i = 0; i < s.x.size(); ++i)
          out << "<circle cx='" << px(s.x[i]) << "' cy='" << py(s.y[i])
              << "' r='2' fill='" << s.color << "'/>\n";
      } else {
        out << "<polyline fill='none' stroke='" << s.color << "' points='";
        for (size_t i = 0; i < s.x.size(); ++i)
          out << px(s.x[i]) << "," << py(s.y[i]) << " ";
        out << "'/>\n";
      }
      out << "<text x='" << width - mr - 150 << "' y='" << mt + 14 * li
          << "' font-size='11' fill='" << s.color << "'>" << s.label << "</text>\n";
      ++li;
    }
    out << "</svg>\n";
  }
};

inline std::string svg_palette(int i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return colors[i % 8];
}

}  // namespace tacserv
