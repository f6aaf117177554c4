#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace memsub::svg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Bar {
  std::string group;
  std::vector<std::pair<std::string, double>> values;
};

namespace detail {

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return palette[i % 8];
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double w = 640, h = 400, left = 64, right = 150, top = 40, bottom = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (w - left - right); }
  double py(double y) const { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); }
};

inline std::string header(const Frame& f, const std::string& title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(f.w) + "\" height=\"" + fmt(f.h) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(f.w / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) +
       "</text>\n";
  return s;
}

inline std::string axes(const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  std::string s;
  s += "<line x1=\"" + fmt(f.left) + "\" y1=\"" + fmt(f.py(f.y0)) + "\" x2=\"" + fmt(f.w - f.right) +
       "\" y2=\"" + fmt(f.py(f.y0)) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt(f.left) + "\" y1=\"" + fmt(f.top) + "\" x2=\"" + fmt(f.left) + "\" y2=\"" +
       fmt(f.py(f.y0)) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s += "<text x=\"" + fmt(f.left - 6) + "\" y=\"" + fmt(f.py(yv) + 4) + "\" text-anchor=\"end\">" + fmt(yv) +
         "</text>\n";
  }
  s += "<text x=\"" + fmt((f.left + f.w - f.right) / 2) + "\" y=\"" + fmt(f.h - 12) +
       "\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
  s += "<text transform=\"translate(16," + fmt((f.top + f.h - f.bottom) / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">" + escape(ylabel) + "</text>\n";
  return s;
}

inline std::string legend_entry(const Frame& f, std::size_t i, const std::string& name) {
  const double y = f.top + 16.0 * double(i);
  return "<rect x=\"" + fmt(f.w - f.right + 12) + "\" y=\"" + fmt(y) + "\" width=\"10\" height=\"10\" fill=\"" +
         color(i) + "\"/>\n<text x=\"" + fmt(f.w - f.right + 26) + "\" y=\"" + fmt(y + 9) + "\">" +
         escape(name) + "</text>\n";
}

}  // namespace detail

inline std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                              const std::vector<Series>& series) {
  detail::Frame f;
  bool any = false;
  double xmin = 0, xmax = 1, ymax = 0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!any) xmin = xmax = s.x[i];
      any = true;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  f.x0 = xmin;
  f.x1 = xmax > xmin ? xmax : xmin + 1;
  f.y1 = ymax > 0 ? ymax * 1.1 : 1.0;
  std::string out = detail::header(f, title) + detail::axes(f, xlabel, ylabel);
  out += "<text x=\"" + detail::fmt(f.px(f.x0)) + "\" y=\"" + detail::fmt(f.py(0) + 16) +
         "\" text-anchor=\"middle\">" + detail::fmt(f.x0) + "</text>\n";
  out += "<text x=\"" + detail::fmt(f.px(f.x1)) + "\" y=\"" + detail::fmt(f.py(0) + 16) +
         "\" text-anchor=\"middle\">" + detail::fmt(f.x1) + "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
      pts += detail::fmt(f.px(s.x[i])) + "," + detail::fmt(f.py(s.y[i])) + " ";
    out += "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" + std::string(detail::color(k)) +
           "\" points=\"" + pts + "\"/>\n";
    out += detail::legend_entry(f, k, s.name);
  }
  return out + "</svg>\n";
}

/// Grouped bars; every group should carry the same series names in order.
inline std::string bar_chart(const std::string& title, const std::string& ylabel, const std::vector<Bar>& groups) {
  detail::Frame f;
  double ymax = 0;
  std::size_t per = 0;
  for (const auto& g : groups) {
    per = std::max(per, g.values.size());
    for (const auto& [n, v] : g.values) ymax = std::max(ymax, v);
  }
  f.x0 = 0;
  f.x1 = double(std::max<std::size_t>(groups.size(), 1));
  f.y1 = ymax > 0 ? ymax * 1.1 : 1.0;
  std::string out = detail::header(f, title) + detail::axes(f, "", ylabel);
  const double slot = (f.px(1) - f.px(0)) * 0.8 / double(std::max<std::size_t>(per, 1));
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const double base = f.px(double(gi)) + (f.px(1) - f.px(0)) * 0.1;
    for (std::size_t k = 0; k < g.values.size(); ++k) {
      const double v = g.values[k].second, top = f.py(v);
      out += "<rect x=\"" + detail::fmt(base + slot * double(k)) + "\" y=\"" + detail::fmt(top) + "\" width=\"" +
             detail::fmt(slot * 0.9) + "\" height=\"" + detail::fmt(f.py(0) - top) + "\" fill=\"" +
             detail::color(k) + "\"/>\n";
    }
    out += "<text x=\"" + detail::fmt(f.px(gi + 0.5)) + "\" y=\"" + detail::fmt(f.py(0) + 16) +
           "\" text-anchor=\"middle\">" + detail::escape(g.group) + "</text>\n";
  }
  if (!groups.empty())
    for (std::size_t k = 0; k < groups.front().values.size(); ++k)
      out += detail::legend_entry(f, k, groups.front().values[k].first);
  return out + "</svg>\n";
}

}  // namespace memsub::svg
