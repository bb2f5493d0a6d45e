#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "joinsense/errors.hpp"
#include "joinsense/harness.hpp"

// Chart rendering: hand-rolled SVG so the outputs are plain text files with
// no external dependencies. Layout constants are shared by both chart kinds.

namespace joinsense {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 24.0;
constexpr double kTop = 48.0;
constexpr double kBottom = 56.0;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
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

std::string fmt(double v) {
  // Tick labels: compact scientific form for large/small magnitudes.
  if (v == 0.0) return "0";
  const double a = std::fabs(v);
  char buf[48];
  if (a >= 1e5 || a < 1e-3)
    std::snprintf(buf, sizeof(buf), "%.2g", v);
  else
    std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

struct Scale {
  double lo = 0.0, hi = 1.0;
  bool log = false;
  double place(double v, double from, double to) const {
    double t;
    if (log) {
      t = (std::log10(v) - std::log10(lo)) / (std::log10(hi) - std::log10(lo));
    } else {
      t = (v - lo) / (hi - lo);
    }
    return from + t * (to - from);
  }
};

std::vector<double> linear_ticks(double lo, double hi, int want) {
  if (!(hi > lo)) return {lo};
  const double span = hi - lo;
  const double raw = span / want;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (mag * m >= raw) {
      step = mag * m;
      break;
    }
  }
  std::vector<double> ticks;
  for (double v = std::ceil(lo / step) * step; v <= hi + step * 1e-9; v += step) ticks.push_back(v);
  return ticks;
}

std::vector<double> log_ticks(double lo, double hi) {
  std::vector<double> ticks;
  const int a = static_cast<int>(std::floor(std::log10(lo)));
  const int b = static_cast<int>(std::ceil(std::log10(hi)));
  for (int e = a; e <= b; ++e) {
    const double v = std::pow(10.0, e);
    if (v >= lo * (1 - 1e-12) && v <= hi * (1 + 1e-12)) ticks.push_back(v);
  }
  if (ticks.empty()) ticks = {lo, hi};
  return ticks;
}

void chart_frame(std::string& svg, const std::string& title, const std::string& xLabel,
                 const std::string& yLabel) {
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) + "\" height=\"" +
         fmt(kHeight) + "\" viewBox=\"0 0 " + fmt(kWidth) + " " + fmt(kHeight) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
         xml_escape(title) + "</text>\n";
  svg += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"" + fmt(kHeight - 12) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + xml_escape(xLabel) +
         "</text>\n";
  svg += "<text x=\"18\" y=\"" + fmt(kHeight / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 18 " +
         fmt(kHeight / 2) + ")\">" + xml_escape(yLabel) + "</text>\n";
  // Plot area border.
  svg += "<rect x=\"" + fmt(kLeft) + "\" y=\"" + fmt(kTop) + "\" width=\"" +
         fmt(kWidth - kLeft - kRight) + "\" height=\"" + fmt(kHeight - kTop - kBottom) +
         "\" fill=\"none\" stroke=\"#444\"/>\n";
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& xLabel,
                           const std::string& yLabel, const std::vector<PlotSeries>& series,
                           bool logY) {
  // Collect the plotted points; log scale drops non-positive values.
  std::vector<PlotSeries> use = series;
  if (logY) {
    bool any = false;
    for (auto& s : use) {
      std::erase_if(s.points, [](const auto& p) { return !(p.second > 0.0); });
      any = any || !s.points.empty();
    }
    if (!any) {
      use = series;  // nothing positive: fall back to a linear axis
      logY = false;
    }
  }
  double xLo = 0, xHi = 1, yLo = 0, yHi = 1;
  bool first = true;
  for (const auto& s : use)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (first) {
        xLo = xHi = x;
        yLo = yHi = y;
        first = false;
      } else {
        xLo = std::min(xLo, x);
        xHi = std::max(xHi, x);
        yLo = std::min(yLo, y);
        yHi = std::max(yHi, y);
      }
    }
  if (first) {
    xLo = yLo = 0;
    xHi = yHi = 1;
  }
  if (xHi == xLo) xHi = xLo + 1;
  if (yHi == yLo) {
    if (logY) {
      yLo /= 2;
      yHi *= 2;
    } else {
      yHi = yLo + 1;
    }
  }
  if (!logY) {
    const double pad = (yHi - yLo) * 0.08;
    yLo = std::min(0.0, yLo);
    yHi += pad;
  }
  Scale xs{xLo, xHi, false};
  Scale ys{yLo, yHi, logY};
  const double plotR = kWidth - kRight;
  const double plotB = kHeight - kBottom;

  std::string svg;
  chart_frame(svg, title, xLabel, yLabel);

  const auto xTicks = linear_ticks(xLo, xHi, 6);
  for (double t : xTicks) {
    const double px = xs.place(t, kLeft, plotR);
    svg += "<line x1=\"" + fmt(px) + "\" y1=\"" + fmt(plotB) + "\" x2=\"" + fmt(px) + "\" y2=\"" +
           fmt(plotB + 5) + "\" stroke=\"#444\"/>\n";
    svg += "<text x=\"" + fmt(px) + "\" y=\"" + fmt(plotB + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + fmt(t) +
           "</text>\n";
  }
  const auto yTicks = logY ? log_ticks(yLo, yHi) : linear_ticks(yLo, yHi, 6);
  for (double t : yTicks) {
    const double py = plotB - (ys.place(t, 0, plotB - kTop));
    svg += "<line x1=\"" + fmt(kLeft - 5) + "\" y1=\"" + fmt(py) + "\" x2=\"" + fmt(kLeft) +
           "\" y2=\"" + fmt(py) + "\" stroke=\"#444\"/>\n";
    svg += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(py) + "\" x2=\"" + fmt(plotR) + "\" y2=\"" +
           fmt(py) + "\" stroke=\"#ddd\"/>\n";
    svg += "<text x=\"" + fmt(kLeft - 8) + "\" y=\"" + fmt(py + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fmt(t) + "</text>\n";
  }

  std::size_t colorIdx = 0;
  double legendY = kTop + 14;
  for (const auto& s : use) {
    const char* color = kPalette[colorIdx % kPaletteSize];
    ++colorIdx;
    std::string path;
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      const double px = xs.place(x, kLeft, plotR);
      const double py = plotB - ys.place(y, 0, plotB - kTop);
      path += (path.empty() ? "M" : " L");
      path += fmt(px) + " " + fmt(py);
      svg += "<circle cx=\"" + fmt(px) + "\" cy=\"" + fmt(py) + "\" r=\"3\" fill=\"" + color +
             "\"/>\n";
    }
    if (!path.empty())
      svg += "<path d=\"" + path + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
    svg += "<line x1=\"" + fmt(plotR - 150) + "\" y1=\"" + fmt(legendY - 4) + "\" x2=\"" +
           fmt(plotR - 130) + "\" y2=\"" + fmt(legendY - 4) + "\" stroke=\"" + color +
           "\" stroke-width=\"3\"/>\n";
    svg += "<text x=\"" + fmt(plotR - 124) + "\" y=\"" + fmt(legendY) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + xml_escape(s.label) + "</text>\n";
    legendY += 16;
  }
  svg += "</svg>\n";
  return svg;
}

std::string svg_bar_chart(const std::string& title, const std::string& yLabel,
                          const std::vector<std::string>& labels,
                          const std::vector<double>& values) {
  if (labels.size() != values.size()) throw UsageError("bar chart labels and values differ in length");
  double hi = 1.0;
  for (double v : values)
    if (std::isfinite(v)) hi = std::max(hi, v);
  hi *= 1.1;
  const double plotR = kWidth - kRight;
  const double plotB = kHeight - kBottom;
  const double plotW = plotR - kLeft;
  const double n = static_cast<double>(std::max<std::size_t>(1, labels.size()));
  const double slot = plotW / n;
  const double barW = slot * 0.6;

  std::string svg;
  chart_frame(svg, title, "", yLabel);
  for (double t : linear_ticks(0, hi, 6)) {
    const double py = plotB - (t / hi) * (plotB - kTop);
    svg += "<line x1=\"" + fmt(kLeft - 5) + "\" y1=\"" + fmt(py) + "\" x2=\"" + fmt(kLeft) +
           "\" y2=\"" + fmt(py) + "\" stroke=\"#444\"/>\n";
    svg += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(py) + "\" x2=\"" + fmt(plotR) + "\" y2=\"" +
           fmt(py) + "\" stroke=\"#ddd\"/>\n";
    svg += "<text x=\"" + fmt(kLeft - 8) + "\" y=\"" + fmt(py + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fmt(t) + "</text>\n";
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = std::isfinite(values[i]) ? values[i] : hi;
    const double x = kLeft + slot * static_cast<double>(i) + (slot - barW) / 2;
    const double h = (v / hi) * (plotB - kTop);
    const char* color = kPalette[i % kPaletteSize];
    svg += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(plotB - h) + "\" width=\"" + fmt(barW) +
           "\" height=\"" + fmt(h) + "\" fill=\"" + color + "\"/>\n";
    svg += "<text x=\"" + fmt(x + barW / 2) + "\" y=\"" + fmt(plotB - h - 6) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
           (std::isfinite(values[i]) ? fmt(values[i]) : std::string("inf")) + "</text>\n";
    svg += "<text x=\"" + fmt(x + barW / 2) + "\" y=\"" + fmt(plotB + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
           xml_escape(labels[i]) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

namespace {

std::string file_safe(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out.empty() ? std::string("query") : out;
}

}  // namespace

std::vector<std::string> render_bench_plots(const std::string& csvPath, const std::string& outDir) {
  const std::vector<BenchRow> rows = parse_bench_csv(read_text_file(csvPath));
  if (rows.empty()) throw DataError("benchmark CSV has no data rows");
  std::filesystem::create_directories(outDir);

  std::set<std::string> queryIds;
  for (const auto& r : rows) queryIds.insert(r.queryId);

  std::vector<std::string> written;
  for (const std::string& qid : queryIds) {
    std::vector<BenchRow> qRows;
    for (const auto& r : rows)
      if (r.queryId == qid) qRows.push_back(r);

    // Deviation against the privacy budget, one series per method variant.
    {
      std::map<std::string, PlotSeries> byKey;
      for (const auto& r : qRows) {
        std::string key = r.method + "/" + r.mechanism;
        if (r.method == "sampling-se" && r.sampleRate > 0.0) key += "@" + format_double(r.sampleRate);
        auto& s = byKey[key];
        s.label = key;
        s.points.emplace_back(r.epsilon, r.medianDeviation);
      }
      std::vector<PlotSeries> series;
      for (auto& [key, s] : byKey) {
        std::sort(s.points.begin(), s.points.end());
        series.push_back(std::move(s));
      }
      const auto path = std::filesystem::path(outDir) / (file_safe(qid) + "_deviation_vs_epsilon.svg");
      write_text_file(path.string(),
                      svg_line_chart(qid + ": median deviation vs epsilon", "epsilon",
                                     "median |noisy - true|", series, true));
      written.push_back(path.string());
    }

    // Online wall time per method (median of the per-grid medians).
    {
      std::map<std::string, std::vector<double>> byMethod;
      for (const auto& r : qRows) byMethod[r.method].push_back(r.medianWallMs);
      std::vector<std::string> labels;
      std::vector<double> values;
      for (auto& [m, v] : byMethod) {
        std::sort(v.begin(), v.end());
        labels.push_back(m);
        values.push_back(v[(v.size() - 1) / 2]);
      }
      const auto path = std::filesystem::path(outDir) / (file_safe(qid) + "_runtime.svg");
      write_text_file(path.string(),
                      svg_bar_chart(qid + ": median online wall time", "milliseconds", labels, values));
      written.push_back(path.string());
    }

    // Sensitivity against the sampling budget fraction, if it was swept.
    {
      std::set<double> rates;
      for (const auto& r : qRows)
        if (r.method == "sampling-se") rates.insert(r.sampleRate);
      if (rates.size() > 1) {
        std::map<std::string, PlotSeries> byKey;
        for (const auto& r : qRows) {
          if (r.method != "sampling-se") continue;
          const std::string key = r.mechanism + " eps=" + format_double(r.epsilon);
          auto& s = byKey[key];
          s.label = key;
          s.points.emplace_back(r.sampleRate, r.medianSensitivity);
        }
        std::vector<PlotSeries> series;
        for (auto& [key, s] : byKey) {
          std::sort(s.points.begin(), s.points.end());
          series.push_back(std::move(s));
        }
        const auto path = std::filesystem::path(outDir) / (file_safe(qid) + "_sensitivity_vs_rate.svg");
        write_text_file(path.string(),
                        svg_line_chart(qid + ": sampled sensitivity vs budget fraction",
                                       "sample rate", "median sensitivity bound", series, true));
        written.push_back(path.string());
      }
    }
  }
  return written;
}

}  // namespace joinsense
