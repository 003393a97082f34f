#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Deterministic score-histogram rendering: the output is a pure function of
// the inputs (fixed viewport, fixed palette, no timestamps), so identical runs
// produce identical bytes.

namespace osebm {

namespace svg_detail {

inline std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

constexpr const char* kPalette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"};
constexpr int kPaletteSize = 6;

}  // namespace svg_detail

// Overlaid per-series histograms of one score across dataset splits.
inline std::string score_histogram_svg(const std::string& title,
                                       const std::vector<std::pair<std::string, std::vector<double>>>& series,
                                       int bins = 40) {
  using svg_detail::num;
  if (bins < 1) throw std::invalid_argument("score_histogram_svg: bins must be positive");

  const double width = 640.0, height = 400.0;
  const double left = 56.0, right = 616.0, top = 48.0, bottom = 352.0;

  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (const auto& [name, values] : series)
    for (double v : values) {
      if (!any) {
        lo = hi = v;
        any = true;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  if (!any) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double bin_w = (hi - lo) / bins;

  std::vector<std::vector<double>> hist;  // per series, normalized frequency per bin
  double peak = 0.0;
  for (const auto& [name, values] : series) {
    std::vector<double> h(bins, 0.0);
    for (double v : values) {
      int b = static_cast<int>((v - lo) / bin_w);
      b = std::clamp(b, 0, bins - 1);
      h[b] += 1.0;
    }
    if (!values.empty())
      for (double& c : h) c /= static_cast<double>(values.size());
    for (double c : h) peak = std::max(peak, c);
    hist.push_back(std::move(h));
  }
  if (peak <= 0.0) peak = 1.0;

  const auto sx = [&](double v) { return left + (v - lo) / (hi - lo) * (right - left); };
  const auto sy = [&](double f) { return bottom - f / peak * (bottom - top); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " + num(width) + " " + num(height) +
       "\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + num(width) + "\" height=\"" + num(height) +
       "\" fill=\"#ffffff\"/>\n";
  s += "<text x=\"" + num(width / 2) + "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"16\" fill=\"#222222\">" + title + "</text>\n";

  for (size_t i = 0; i < series.size(); ++i) {
    const char* color = svg_detail::kPalette[i % svg_detail::kPaletteSize];
    std::string points = num(sx(lo)) + "," + num(sy(0.0));
    for (int b = 0; b < bins; ++b) {
      const double x0 = lo + b * bin_w, x1 = lo + (b + 1) * bin_w, f = hist[i][b];
      points += " " + num(sx(x0)) + "," + num(sy(f));
      points += " " + num(sx(x1)) + "," + num(sy(f));
    }
    points += " " + num(sx(hi)) + "," + num(sy(0.0));
    s += "<polygon points=\"" + points + "\" fill=\"" + color + "\" fill-opacity=\"0.3\" stroke=\"" +
         color + "\" stroke-width=\"1.5\"/>\n";
  }

  s += "<line x1=\"" + num(left) + "\" y1=\"" + num(bottom) + "\" x2=\"" + num(right) + "\" y2=\"" +
       num(bottom) + "\" stroke=\"#222222\" stroke-width=\"1\"/>\n";
  s += "<line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) + "\" y2=\"" +
       num(bottom) + "\" stroke=\"#222222\" stroke-width=\"1\"/>\n";
  s += "<text x=\"" + num(left) + "\" y=\"" + num(bottom + 18.0) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#222222\">" +
       num(lo) + "</text>\n";
  s += "<text x=\"" + num(right) + "\" y=\"" + num(bottom + 18.0) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#222222\">" +
       num(hi) + "</text>\n";

  double ly = top + 4.0;
  for (size_t i = 0; i < series.size(); ++i) {
    const char* color = svg_detail::kPalette[i % svg_detail::kPaletteSize];
    s += "<rect x=\"" + num(right - 140.0) + "\" y=\"" + num(ly) +
         "\" width=\"12\" height=\"12\" fill=\"" + color + "\"/>\n";
    s += "<text x=\"" + num(right - 122.0) + "\" y=\"" + num(ly + 10.0) +
         "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#222222\">" + series[i].first + " (" +
         std::to_string(series[i].second.size()) + ")</text>\n";
    ly += 18.0;
  }

  s += "</svg>\n";
  return s;
}

}  // namespace osebm
