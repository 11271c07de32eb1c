#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tsscale/scaling/scaling.hpp"

namespace tsscale::harness {

enum class SeriesStyle { scatter, line, heavy_line, dashed };
std::string to_string(SeriesStyle s);

struct PlotSeries {
  std::string label;
  SeriesStyle style = SeriesStyle::scatter;
  std::string color = "#1f77b4";
  std::vector<scaling::Point> points;
};

/// Log-scaled x axis; the y axis is logarithmic when every value is
/// positive and linear otherwise. Every series is also written as a JSON
/// comment so plotted values can be checked without parsing geometry.
struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;

  std::string render_svg() const;
};

/// Decade-aligned bounds of a log axis covering [lo, hi].
std::pair<double, double> log_axis_bounds(double lo, double hi);

/// Distinct colors for up to 10 series, cycling after that.
std::string palette(std::size_t i);

}  // namespace tsscale::harness
