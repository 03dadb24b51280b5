#pragma once

// Self-contained SVG line plot with a log-scale y axis.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace hierlqr {

struct PlotSeries {
  std::string name;
  std::vector<double> values;  // indexed by iteration
};

inline std::string svg_log_plot(const std::vector<PlotSeries>& series, const std::string& title,
                                const std::string& ylabel) {
  const double W = 640, H = 400, left = 70, right = 120, top = 40, bottom = 50;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  std::size_t n_max = 1;
  for (const auto& s : series) {
    n_max = std::max(n_max, s.values.size());
    for (double v : s.values) {
      if (v > 0.0 && std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!(hi > 0.0)) {
    lo = 0.1;
    hi = 1.0;
  }
  double dlo = std::floor(std::log10(lo)), dhi = std::ceil(std::log10(hi));
  if (dhi <= dlo) dhi = dlo + 1;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double n) { return left + pw * (n_max > 1 ? n / double(n_max - 1) : 0.0); };
  auto py = [&](double v) {
    const double lv = std::log10(std::max(v, std::pow(10.0, dlo)));
    return top + ph * (1.0 - (lv - dlo) / (dhi - dlo));
  };
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f", v);
    return std::string(b);
  };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int d = int(dlo); d <= int(dhi); ++d) {
    const double y = py(std::pow(10.0, d));
    os << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << num(y) << "\" y2=\"" << num(y)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">1e" << d << "</text>\n";
  }
  const std::size_t ticks = std::min<std::size_t>(n_max - 1, 10);
  for (std::size_t t = 0; t <= ticks && n_max > 1; ++t) {
    const double n = std::round(double(t) * double(n_max - 1) / double(std::max<std::size_t>(ticks, 1)));
    os << "<text x=\"" << num(px(n)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << n << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">iteration n</text>\n";
  os << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << top + ph / 2
     << ")\">" << ylabel << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* col = colors[i % (sizeof colors / sizeof *colors)];
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t n = 0; n < series[i].values.size(); ++n) {
      os << (n ? " " : "") << num(px(double(n))) << ',' << num(py(series[i].values[n]));
    }
    os << "\"/>\n";
    const double ly = top + 14 + 18 * double(i);
    os << "<line x1=\"" << left + pw + 10 << "\" x2=\"" << left + pw + 30 << "\" y1=\"" << ly << "\" y2=\"" << ly
       << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 36 << "\" y=\"" << ly + 4 << "\">" << series[i].name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace hierlqr
