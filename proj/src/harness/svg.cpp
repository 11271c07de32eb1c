#include "tsscale/harness/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "tsscale/io/json_io.hpp"

namespace tsscale::harness {

std::string to_string(SeriesStyle s) {
  switch (s) {
    case SeriesStyle::scatter:
      return "scatter";
    case SeriesStyle::line:
      return "line";
    case SeriesStyle::heavy_line:
      return "heavy_line";
    case SeriesStyle::dashed:
      return "dashed";
  }
  return "line";
}

std::string palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

std::pair<double, double> log_axis_bounds(double lo, double hi) {
  lo = std::pow(10.0, std::floor(std::log10(lo)));
  hi = std::pow(10.0, std::ceil(std::log10(hi)));
  if (lo == hi) hi = lo * 10.0;
  return {lo, hi};
}

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 72, kRight = 170, kTop = 36, kBottom = 52;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

struct Axis {
  double lo, hi;
  bool log;
  double map(double v, double a, double b) const {
    const double t = log ? (std::log10(v) - std::log10(lo)) / (std::log10(hi) - std::log10(lo)) : (v - lo) / (hi - lo);
    return a + t * (b - a);
  }
};

Axis make_axis(double lo, double hi, bool log) {
  if (log) {
    std::tie(lo, hi) = log_axis_bounds(lo, hi);
  } else {
    const double pad = hi > lo ? 0.05 * (hi - lo) : 1.0;
    lo -= pad;
    hi += pad;
  }
  return {lo, hi, log};
}

std::vector<double> ticks(const Axis& a) {
  std::vector<double> t;
  if (a.log) {
    for (double v = a.lo; v <= a.hi * 1.0000001; v *= 10.0) t.push_back(v);
    if (t.size() <= 2) {
      // Fewer than two decades: add 2x and 5x marks.
      std::vector<double> dense;
      for (double v : t) {
        for (double m : {1.0, 2.0, 5.0}) {
          if (v * m <= a.hi * 1.0000001) dense.push_back(v * m);
        }
      }
      t = dense;
    }
  } else {
    for (int i = 0; i <= 5; ++i) t.push_back(a.lo + (a.hi - a.lo) * i / 5.0);
  }
  return t;
}

}  // namespace

std::string Plot::render_svg() const {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
  bool y_positive = true;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!(x > 0.0) || !std::isfinite(x) || !std::isfinite(y)) {
        throw std::invalid_argument("plot '" + title + "': series '" + s.label + "' has a point outside the log axis");
      }
      xlo = std::min(xlo, x);
      xhi = std::max(xhi, x);
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
      y_positive = y_positive && y > 0.0;
    }
  }
  if (!std::isfinite(xlo)) throw std::invalid_argument("plot '" + title + "' has no data");
  const Axis ax = make_axis(xlo, xhi, true);
  const Axis ay = make_axis(ylo, yhi, y_positive);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (const auto& s : series) {
    io::Json j;
    j["label"] = s.label;
    j["style"] = to_string(s.style);
    j["points"] = io::Json::array();
    for (const auto& [x, y] : s.points) j["points"].push_back({x, y});
    std::string text = j.dump();
    // "--" may not appear inside an XML comment.
    for (std::size_t pos = 0; (pos = text.find("--", pos)) != std::string::npos;) text.replace(pos, 2, "-\\u002d");
    o << "<!-- data " << text << " -->\n";
  }
  o << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << escape(title)
    << "</text>\n";

  for (double t : ticks(ax)) {
    const double px = ax.map(t, x0, x1);
    o << "<line x1=\"" << num(px) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(px) << "\" y2=\"" << num(y1)
      << "\" stroke=\"#e0e0e0\"/>\n";
    o << "<text x=\"" << num(px) << "\" y=\"" << num(y0 + 16) << "\" text-anchor=\"middle\">" << label(t)
      << "</text>\n";
  }
  for (double t : ticks(ay)) {
    const double py = ay.map(t, y0, y1);
    o << "<line x1=\"" << num(x0) << "\" y1=\"" << num(py) << "\" x2=\"" << num(x1) << "\" y2=\"" << num(py)
      << "\" stroke=\"#e0e0e0\"/>\n";
    o << "<text x=\"" << num(x0 - 6) << "\" y=\"" << num(py + 4) << "\" text-anchor=\"end\">" << label(t)
      << "</text>\n";
  }
  o << "<rect x=\"" << num(x0) << "\" y=\"" << num(y1) << "\" width=\"" << num(x1 - x0) << "\" height=\""
    << num(y0 - y1) << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(kHeight - 12) << "\" text-anchor=\"middle\">"
    << escape(x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << num((y0 + y1) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << num((y0 + y1) / 2) << ")\">" << escape(y_label) << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    if (s.style == SeriesStyle::scatter) {
      for (const auto& [x, y] : s.points) {
        o << "<circle cx=\"" << num(ax.map(x, x0, x1)) << "\" cy=\"" << num(ay.map(y, y0, y1))
          << "\" r=\"3.5\" fill=\"" << s.color << "\"/>\n";
      }
    } else if (!s.points.empty()) {
      o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\""
        << (s.style == SeriesStyle::heavy_line ? "3.5" : "1.5") << '"';
      if (s.style == SeriesStyle::dashed) o << " stroke-dasharray=\"6 4\"";
      o << " points=\"";
      for (std::size_t k = 0; k < s.points.size(); ++k) {
        if (k) o << ' ';
        o << num(ax.map(s.points[k].first, x0, x1)) << ',' << num(ay.map(s.points[k].second, y0, y1));
      }
      o << "\"/>\n";
    }
    const double ly = y1 + 14 + 16 * static_cast<double>(i);
    o << "<line x1=\"" << num(x1 + 10) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(x1 + 30) << "\" y2=\""
      << num(ly - 4) << "\" stroke=\"" << s.color << "\" stroke-width=\""
      << (s.style == SeriesStyle::heavy_line ? "3.5" : "2") << '"'
      << (s.style == SeriesStyle::dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
    o << "<text x=\"" << num(x1 + 36) << "\" y=\"" << num(ly) << "\">" << escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace tsscale::harness
