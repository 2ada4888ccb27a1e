#include "handstate/cli/plots.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "handstate/sync.hpp"

namespace handstate::cli {

namespace {

constexpr std::array<const char*, 10> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Scale {
  double d0, d1, r0, r1;
  double operator()(double v) const { return r0 + (v - d0) / (d1 - d0) * (r1 - r0); }
};

// 1, 2 or 5 times a power of ten, close to range / 4.
double nice_step(double range) {
  const double raw = range / 4.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

std::vector<double> ticks(double lo, double hi) {
  std::vector<double> out;
  if (!(hi > lo)) return out;
  const double step = nice_step(hi - lo);
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) {
    out.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
  }
  return out;
}

std::string escape(const std::string& s) {
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

class Svg {
 public:
  Svg(double w, double h) {
    fmt::format_to(std::back_inserter(buf_),
                   "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" "
                   "viewBox=\"0 0 {:.0f} {:.0f}\" font-family=\"sans-serif\" font-size=\"11\">\n",
                   w, h, w, h);
    fmt::format_to(std::back_inserter(buf_), "<rect width=\"{:.0f}\" height=\"{:.0f}\" fill=\"white\"/>\n", w, h);
  }

  void line(double x1, double y1, double x2, double y2, const char* stroke, double width = 1.0) {
    fmt::format_to(std::back_inserter(buf_),
                   "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"{}\" stroke-width=\"{:.2f}\"/>\n",
                   x1, y1, x2, y2, stroke, width);
  }
  void rect(double x, double y, double w, double h, const char* fill, const char* stroke = "none") {
    fmt::format_to(std::back_inserter(buf_),
                   "<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\" stroke=\"{}\"/>\n",
                   x, y, w, h, fill, stroke);
  }
  void text(double x, double y, const std::string& s, const char* anchor = "start", int size = 11,
            const char* weight = "normal") {
    fmt::format_to(std::back_inserter(buf_),
                   "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"{}\" font-size=\"{}\" font-weight=\"{}\">{}</text>\n",
                   x, y, anchor, size, weight, escape(s));
  }
  // NaN points split the line into separate polylines.
  void polyline(const std::vector<std::pair<double, double>>& pts, const char* stroke, double width = 1.0,
                const char* dash = nullptr) {
    std::size_t i = 0;
    while (i < pts.size()) {
      while (i < pts.size() && !std::isfinite(pts[i].second)) ++i;
      std::size_t j = i;
      while (j < pts.size() && std::isfinite(pts[j].second)) ++j;
      if (j > i) {
        fmt::format_to(std::back_inserter(buf_), "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"{:.2f}\"",
                       stroke, width);
        if (dash) fmt::format_to(std::back_inserter(buf_), " stroke-dasharray=\"{}\"", dash);
        buf_.append(std::string_view(" points=\""));
        for (std::size_t k = i; k < j; ++k) {
          fmt::format_to(std::back_inserter(buf_), "{}{:.2f},{:.2f}", k == i ? "" : " ", pts[k].first, pts[k].second);
        }
        buf_.append(std::string_view("\"/>\n"));
      }
      i = j;
    }
  }

  std::string finish() {
    buf_.append(std::string_view("</svg>\n"));
    return fmt::to_string(buf_);
  }

 private:
  fmt::memory_buffer buf_;
};

template <typename T>
void add_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

std::string axis_label(double v) { return fmt::format("{:g}", std::round(v * 1e6) / 1e6); }

}  // namespace

std::string render_ablation_svg(std::span<const AggregateCell> cells, const std::string& title) {
  std::vector<std::string> archs, subsets;
  for (const auto& c : cells) {
    add_unique(archs, c.architecture);
    add_unique(subsets, c.subset);
  }
  const std::array<std::string, 2> metrics = {"r2", "rmse"};
  const std::array<std::string, 2> metric_labels = {"R²", "RMSE"};

  auto find = [&](const std::string& a, const std::string& s, const std::string& tg,
                  const std::string& m) -> const AggregateCell* {
    for (const auto& c : cells) {
      if (c.architecture == a && c.subset == s && c.target == tg && c.metric == m) return &c;
    }
    return nullptr;
  };

  constexpr double kBar = 12.0, kRowGap = 10.0, kPanelW = 360.0, kLeft = 80.0, kTop = 84.0;
  constexpr double kPanelGapX = 110.0, kPanelGapY = 60.0;
  const double row_h = kBar * static_cast<double>(std::max<std::size_t>(subsets.size(), 1)) + kRowGap;
  const double panel_h = row_h * static_cast<double>(std::max<std::size_t>(archs.size(), 1));
  const double width = kLeft + 2 * kPanelW + kPanelGapX + 30.0;
  const double height = kTop + 2 * panel_h + kPanelGapY + 70.0;

  Svg svg(width, height);
  svg.text(width / 2, 22, title.empty() ? "Feature-set ablation" : title, "middle", 14, "bold");
  // Legend.
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    const double x = kLeft + 130.0 * static_cast<double>(s);
    svg.rect(x, 32, 12, 12, kPalette[s % kPalette.size()]);
    svg.text(x + 16, 42, subsets[s]);
  }

  for (std::size_t mi = 0; mi < metrics.size(); ++mi) {
    double lo = 0.0, hi = mi == 0 ? 1.0 : 0.0;
    for (const auto& c : cells) {
      if (c.metric != metrics[mi]) continue;
      const double w = c.ci_half_width.value_or(0.0);
      lo = std::min(lo, c.mean - w);
      hi = std::max(hi, c.mean + w);
    }
    if (!(hi > lo)) hi = lo + 1.0;
    const double step = nice_step(hi - lo);
    lo = std::floor(lo / step) * step;
    hi = std::ceil(hi / step) * step;

    for (std::size_t ti = 0; ti < kTargetNames.size(); ++ti) {
      const std::string target(kTargetNames[ti]);
      const double x0 = kLeft + static_cast<double>(ti) * (kPanelW + kPanelGapX);
      const double y0 = kTop + static_cast<double>(mi) * (panel_h + kPanelGapY);
      const Scale sx{lo, hi, x0, x0 + kPanelW};
      svg.text(x0 + kPanelW / 2, y0 - 6, fmt::format("{} ({})", metric_labels[mi], target), "middle", 12, "bold");
      for (double v : ticks(lo, hi)) {
        svg.line(sx(v), y0, sx(v), y0 + panel_h, "#dddddd");
        svg.text(sx(v), y0 + panel_h + 14, axis_label(v), "middle", 10);
      }
      svg.rect(x0, y0, kPanelW, panel_h, "none", "#444444");
      if (lo < 0.0 && hi > 0.0) svg.line(sx(0), y0, sx(0), y0 + panel_h, "#444444");

      for (std::size_t ai = 0; ai < archs.size(); ++ai) {
        const double ry = y0 + static_cast<double>(ai) * row_h + kRowGap / 2;
        svg.text(x0 - 6, ry + (row_h - kRowGap) / 2 + 4, archs[ai], "end");
        for (std::size_t si = 0; si < subsets.size(); ++si) {
          const AggregateCell* c = find(archs[ai], subsets[si], target, metrics[mi]);
          if (!c) continue;
          const double by = ry + static_cast<double>(si) * kBar;
          const double a = sx(std::max(lo, std::min(0.0, c->mean)));
          const double b = sx(std::max(0.0, c->mean));
          svg.rect(a, by + 1, b - a, kBar - 2, kPalette[si % kPalette.size()]);
          if (c->ci_half_width) {
            const double cy = by + kBar / 2;
            const double w0 = sx(c->mean - *c->ci_half_width), w1 = sx(c->mean + *c->ci_half_width);
            svg.line(w0, cy, w1, cy, "#000000");
            svg.line(w0, cy - 3, w0, cy + 3, "#000000");
            svg.line(w1, cy - 3, w1, cy + 3, "#000000");
          }
        }
      }
    }
  }
  svg.text(width / 2, height - 12,
           fmt::format("mean over users, whiskers: {:.0f}% t interval", kConfidenceLevel * 100), "middle", 10);
  return svg.finish();
}

Trace make_trace(const RawSequence& seq, std::span<const PredictionEvent> predictions, const AlignmentConfig& cfg) {
  const auto samples = align(seq, cfg);
  std::map<std::int64_t, std::size_t> by_tick;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    by_tick.emplace(std::llround(samples[i].t * cfg.master_rate), i);
  }
  Trace tr;
  tr.title = seq.id;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& p : predictions) {
    const auto it = by_tick.find(p.k);
    if (it == by_tick.end()) continue;
    const AlignedSample& s = samples[it->second];
    tr.t.push_back(p.t);
    std::array<double, kEmgChannels> e{};
    std::array<double, kExoChannels> x{};
    std::copy(s.f_emg().begin(), s.f_emg().end(), e.begin());
    std::copy(s.f_exo().begin(), s.f_exo().end(), x.begin());
    tr.emg.push_back(e);
    tr.exo.push_back(x);
    tr.predicted.push_back(p.y);
    tr.opening_truth.push_back(s.y ? s.y->opening : nan);
    tr.compliance_truth.push_back(s.y ? s.y->compliance : nan);
  }
  return tr;
}

std::string render_trace_svg(const Trace& tr) {
  constexpr double kW = 900.0, kLeft = 70.0, kRight = 140.0, kTop = 40.0, kPanelH = 140.0, kGap = 36.0;
  const double height = kTop + 4 * kPanelH + 3 * kGap + 50.0;
  Svg svg(kW, height);
  svg.text(kW / 2, 22, tr.title, "middle", 14, "bold");

  const double t0 = tr.t.empty() ? 0.0 : tr.t.front();
  const double t1 = tr.t.empty() ? 1.0 : std::max(tr.t.back(), t0 + 1e-9);
  const Scale sx{t0, t1, kLeft, kW - kRight};

  struct Series {
    std::string label;
    std::vector<double> v;
    const char* colour;
    const char* dash;
  };

  auto panel = [&](std::size_t index, const std::string& ylabel, std::vector<Series> series,
                   std::optional<std::pair<double, double>> range) {
    const double y0 = kTop + static_cast<double>(index) * (kPanelH + kGap);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    if (range) {
      lo = range->first;
      hi = range->second;
    } else {
      for (const auto& s : series) {
        for (double v : s.v) {
          if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
        }
      }
      if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
      if (!(hi > lo)) hi = lo + 1.0;
      const double pad = 0.05 * (hi - lo);
      lo -= pad;
      hi += pad;
    }
    const Scale sy{lo, hi, y0 + kPanelH, y0};
    for (double v : ticks(lo, hi)) {
      svg.line(kLeft, sy(v), kW - kRight, sy(v), "#eeeeee");
      svg.text(kLeft - 4, sy(v) + 3, axis_label(v), "end", 10);
    }
    svg.rect(kLeft, y0, kW - kRight - kLeft, kPanelH, "none", "#444444");
    svg.text(14, y0 + kPanelH / 2, ylabel, "start", 11, "bold");
    for (std::size_t k = 0; k < series.size(); ++k) {
      const auto& s = series[k];
      std::vector<std::pair<double, double>> pts;
      pts.reserve(s.v.size());
      for (std::size_t i = 0; i < s.v.size(); ++i) pts.emplace_back(sx(tr.t[i]), std::isfinite(s.v[i]) ? sy(s.v[i]) : s.v[i]);
      svg.polyline(pts, s.colour, 1.0, s.dash);
      const double ly = y0 + 10 + 13 * static_cast<double>(k);
      svg.line(kW - kRight + 8, ly - 4, kW - kRight + 24, ly - 4, s.colour, 2.0);
      svg.text(kW - kRight + 28, ly, s.label, "start", 10);
    }
  };

  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto column = [&](auto&& get) {
    std::vector<double> v;
    v.reserve(tr.t.size());
    for (std::size_t i = 0; i < tr.t.size(); ++i) v.push_back(get(i));
    return v;
  };

  std::vector<Series> emg;
  for (std::size_t c = 0; c < kEmgChannels; ++c) {
    emg.push_back({fmt::format("emg_{}", c + 1), column([&](std::size_t i) { return tr.emg[i][c]; }),
                   kPalette[c], nullptr});
  }
  panel(0, "EMG", std::move(emg), std::nullopt);
  panel(1, "Exo",
        {{"position", column([&](std::size_t i) { return tr.exo[i][0]; }), kPalette[0], nullptr},
         {"current", column([&](std::size_t i) { return tr.exo[i][1]; }), kPalette[1], nullptr}},
        std::nullopt);
  panel(2, "y_o",
        {{"ground truth", column([&](std::size_t i) { return i < tr.opening_truth.size() ? tr.opening_truth[i] : nan; }),
          "#000000", "4,3"},
         {"prediction", column([&](std::size_t i) { return tr.predicted[i].opening; }), kPalette[3], nullptr}},
        std::pair{-0.1, kMaxOpening + 0.1});
  panel(3, "y_c",
        {{"ground truth",
          column([&](std::size_t i) { return i < tr.compliance_truth.size() ? tr.compliance_truth[i] : nan; }),
          "#000000", "4,3"},
         {"prediction", column([&](std::size_t i) { return tr.predicted[i].compliance; }), kPalette[3], nullptr}},
        std::pair{-1.2, 1.2});

  const double axis_y = kTop + 4 * kPanelH + 3 * kGap;
  for (double v : ticks(t0, t1)) svg.text(sx(v), axis_y + 14, axis_label(v), "middle", 10);
  svg.text((kLeft + kW - kRight) / 2, axis_y + 32, "time [s]", "middle", 11);
  return svg.finish();
}

}  // namespace handstate::cli
