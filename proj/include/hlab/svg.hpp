#pragma once

// Static line charts as self-contained SVG documents.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace hlab::svg {

struct Series {
  std::string name;
  std::vector<double> values;  // y at x = 0, 1, 2, ...
  std::string color;
};

struct Axes {
  double x_min = 0.0;
  double x_max = 1.0;
  double y_min = 0.0;
  double y_max = 1.0;
};

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> colors{"#1f77b4", "#d62728", "#e6b800", "#2ca02c",
                                               "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  return colors;
}

/// Rounds |x| up to 1, 2 or 5 times a power of ten.
inline double nice_ceiling(double x) {
  if (x <= 0.0 || !std::isfinite(x)) return 1.0;
  const double mag = std::pow(10.0, std::floor(std::log10(x)));
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= x) return m * mag;
  return 10.0 * mag;
}

/// Dependency-style axes: x over [0, steps - 1], y symmetric about zero.
inline Axes symmetric_axes(const std::vector<Series>& series, int steps) {
  double m = 0.0;
  for (const auto& s : series)
    for (double v : s.values) m = std::max(m, std::abs(v));
  const double y = nice_ceiling(m);
  return {0.0, static_cast<double>(std::max(steps - 1, 1)), -y, y};
}

/// Magnitude-style axes: x over [0, steps - 1], y from zero.
inline Axes positive_axes(const std::vector<Series>& series, int steps) {
  double m = 0.0;
  for (const auto& s : series)
    for (double v : s.values) m = std::max(m, v);
  return {0.0, static_cast<double>(std::max(steps - 1, 1)), 0.0, nice_ceiling(m)};
}

/// Axes that cover the data range, y rounded outward.
inline Axes span_axes(const std::vector<Series>& series) {
  double lo = 0.0, hi = 0.0;
  std::size_t len = 1;
  for (const auto& s : series) {
    len = std::max(len, s.values.size());
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  return {0.0, static_cast<double>(std::max<std::size_t>(len - 1, 1)), lo < 0.0 ? -nice_ceiling(-lo) : 0.0,
          nice_ceiling(hi)};
}

inline std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                              std::vector<Series> series, const Axes& axes) {
  constexpr double W = 720, H = 420, L = 70, R = 150, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](double x) { return L + (x - axes.x_min) / (axes.x_max - axes.x_min) * pw; };
  auto py = [&](double y) { return T + (axes.y_max - y) / (axes.y_max - axes.y_min) * ph; };
  char buf[256];
  std::string out;
  auto add = [&out, &buf](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    out += buf;
  };
  add("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      W, H, W, H);
  add("<rect width=\"%.0f\" height=\"%.0f\" fill=\"white\"/>\n", W, H);
  out += "<text x=\"" + std::to_string(static_cast<int>(L + pw / 2)) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
         title + "</text>\n";
  add("<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"#333\"/>\n", L, T, pw, ph);
  for (int k = 0; k <= 4; ++k) {
    const double y = axes.y_min + (axes.y_max - axes.y_min) * k / 4.0;
    add("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n", L, py(y), L + pw, py(y));
    add("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%g</text>\n", L - 6, py(y) + 4, y);
    const double x = axes.x_min + (axes.x_max - axes.x_min) * k / 4.0;
    add("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%g</text>\n", px(x), T + ph + 18, std::round(x));
  }
  if (axes.y_min < 0.0 && axes.y_max > 0.0)
    add("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#888\"/>\n", L, py(0.0), L + pw, py(0.0));
  out += "<text x=\"" + std::to_string(static_cast<int>(L + pw / 2)) + "\" y=\"" + std::to_string(static_cast<int>(H - 12)) +
         "\" text-anchor=\"middle\">" + x_label + "</text>\n";
  out += "<text transform=\"translate(18," + std::to_string(static_cast<int>(T + ph / 2)) +
         ") rotate(-90)\" text-anchor=\"middle\">" + y_label + "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ser = series[s];
    const std::string color = ser.color.empty() ? palette()[s % palette().size()] : ser.color;
    out += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < ser.values.size(); ++k) {
      const double y = std::clamp(ser.values[k], axes.y_min, axes.y_max);
      add("%s%.2f,%.2f", k ? " " : "", px(static_cast<double>(k)), py(y));
    }
    out += "\"/>\n";
    const double ly = T + 14 + 18.0 * static_cast<double>(s);
    add("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"2\"/>\n", L + pw + 12, ly,
        L + pw + 32, ly, color.c_str());
    out += "<text x=\"" + std::to_string(static_cast<int>(L + pw + 38)) + "\" y=\"" + std::to_string(static_cast<int>(ly + 4)) +
           "\">" + ser.name + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace hlab::svg
