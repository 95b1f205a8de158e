#include "slingshot/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace slingshot::plot {

namespace {

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  bool empty() const { return !(lo <= hi); }
};

bool usable(double v, bool log) { return std::isfinite(v) && (!log || v > 0.0); }

double axis_value(double v, bool log) { return log ? std::log10(v) : v; }

Range padded(Range r) {
  if (r.empty()) return {0.0, 1.0};
  if (r.hi - r.lo < 1e-12 * std::max(1.0, std::abs(r.hi))) {
    const double pad = std::max(1e-12, std::abs(r.hi) * 0.05 + 1e-3);
    return {r.lo - pad, r.hi + pad};
  }
  const double pad = 0.04 * (r.hi - r.lo);
  return {r.lo - pad, r.hi + pad};
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string tick_label(double v, bool log) {
  std::ostringstream out;
  if (log) {
    out << "1e" << static_cast<int>(std::lround(v));
  } else {
    out.precision(4);
    out << v;
  }
  return out.str();
}

std::vector<double> ticks(Range r, bool log) {
  std::vector<double> out;
  if (log) {
    for (double d = std::ceil(r.lo); d <= std::floor(r.hi); d += 1.0) out.push_back(d);
    if (out.size() > 10) {
      std::vector<double> thinned;
      const std::size_t stride = (out.size() + 9) / 10;
      for (std::size_t i = 0; i < out.size(); i += stride) thinned.push_back(out[i]);
      out = std::move(thinned);
    }
    return out;
  }
  const double span = r.hi - r.lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  for (double v = std::ceil(r.lo / step) * step; v <= r.hi + 1e-12 * span; v += step) out.push_back(v);
  return out;
}

}  // namespace

std::string render_svg(const Figure& fig) {
  const double left = 70, right = fig.y2_label.empty() ? 30 : 80, top = 40, bottom = 50;
  const double pw = fig.width - left - right;
  const double ph = fig.height - top - bottom;

  Range xr, y1, y2;
  for (const auto& s : fig.series) {
    const bool log = s.right_axis ? fig.log_y2 : fig.log_y;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !usable(s.y[i], log)) continue;
      xr.add(s.x[i]);
      (s.right_axis ? y2 : y1).add(axis_value(s.y[i], log));
    }
  }
  xr = xr.empty() ? Range{0.0, 1.0} : xr;
  if (xr.hi == xr.lo) xr.hi = xr.lo + 1.0;
  y1 = padded(y1);
  y2 = padded(y2);

  auto px = [&](double x) { return left + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double v, const Range& r) { return top + ph - (v - r.lo) / (r.hi - r.lo) * ph; };

  std::ostringstream out;
  out.precision(6);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fig.width << "\" height=\"" << fig.height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << fig.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(fig.title)
      << "</text>\n";
  for (const auto& b : fig.bands) {
    const double x0 = px(std::clamp(b.x0, xr.lo, xr.hi));
    const double x1 = px(std::clamp(b.x1, xr.lo, xr.hi));
    out << "<rect x=\"" << x0 << "\" y=\"" << top << "\" width=\"" << std::max(0.0, x1 - x0) << "\" height=\"" << ph
        << "\" fill=\"" << b.color << "\" opacity=\"0.6\"/>\n";
  }
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ticks(xr, false)) {
    out << "<line x1=\"" << px(t) << "\" y1=\"" << top + ph << "\" x2=\"" << px(t) << "\" y2=\"" << top + ph + 5
        << "\" stroke=\"black\"/><text x=\"" << px(t) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
        << tick_label(t, false) << "</text>\n";
  }
  for (double t : ticks(y1, fig.log_y)) {
    out << "<line x1=\"" << left - 5 << "\" y1=\"" << py(t, y1) << "\" x2=\"" << left << "\" y2=\"" << py(t, y1)
        << "\" stroke=\"black\"/><text x=\"" << left - 8 << "\" y=\"" << py(t, y1) + 4 << "\" text-anchor=\"end\">"
        << tick_label(t, fig.log_y) << "</text>\n";
  }
  if (!fig.y2_label.empty()) {
    for (double t : ticks(y2, fig.log_y2)) {
      out << "<line x1=\"" << left + pw << "\" y1=\"" << py(t, y2) << "\" x2=\"" << left + pw + 5 << "\" y2=\""
          << py(t, y2) << "\" stroke=\"black\"/><text x=\"" << left + pw + 8 << "\" y=\"" << py(t, y2) + 4
          << "\" text-anchor=\"start\">" << tick_label(t, fig.log_y2) << "</text>\n";
    }
    out << "<text transform=\"translate(" << fig.width - 15 << "," << top + ph / 2
        << ") rotate(90)\" text-anchor=\"middle\">" << escape(fig.y2_label) << "</text>\n";
  }
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << fig.height - 10 << "\" text-anchor=\"middle\">"
      << escape(fig.x_label) << "</text>\n";
  out << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(fig.y_label) << "</text>\n";

  double legend_y = top + 14;
  for (const auto& s : fig.series) {
    const bool log = s.right_axis ? fig.log_y2 : fig.log_y;
    const Range& r = s.right_axis ? y2 : y1;
    std::ostringstream path;
    path.precision(6);
    bool pen = false;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !usable(s.y[i], log)) {
        pen = false;
        continue;
      }
      path << (pen ? " L" : " M") << px(s.x[i]) << " " << py(axis_value(s.y[i], log), r);
      pen = true;
    }
    out << "<path d=\"" << path.str() << "\" fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.3\"/>\n";
    out << "<line x1=\"" << left + 10 << "\" y1=\"" << legend_y - 4 << "\" x2=\"" << left + 30 << "\" y2=\""
        << legend_y - 4 << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/><text x=\"" << left + 35 << "\" y=\""
        << legend_y << "\">" << escape(s.label) << "</text>\n";
    legend_y += 16;
  }
  out << "</svg>\n";
  return out.str();
}

namespace {

std::vector<Band> growth_bands(const phase::PhaseReport& report) {
  std::vector<Band> bands;
  for (const auto& s : report.segments) {
    if (s.kind == phase::PhaseKind::growth) {
      bands.push_back({static_cast<double>(s.start_step), static_cast<double>(s.end_step), "#ffe9a8"});
    }
  }
  return bands;
}

}  // namespace

Figure norm_loss_figure(const std::vector<MetricRecord>& records, const phase::PhaseReport& report) {
  Figure f;
  f.title = "classifier norm and training loss (" + std::to_string(report.cycles.size()) + " cycles)";
  f.y_label = "last-layer norm";
  f.y2_label = "train loss";
  f.log_y2 = true;
  Series norm{"last_layer_norm", {}, {}, "#d62728", false};
  Series loss{"train_loss", {}, {}, "#1f77b4", true};
  for (const auto& r : records) {
    norm.x.push_back(static_cast<double>(r.step));
    norm.y.push_back(r.last_layer_norm);
    loss.x.push_back(static_cast<double>(r.step));
    loss.y.push_back(r.train_loss);
  }
  f.series = {std::move(norm), std::move(loss)};
  f.bands = growth_bands(report);
  return f;
}

Figure accuracy_figure(const std::vector<MetricRecord>& records, const phase::PhaseReport& report) {
  Figure f;
  f.title = std::string("accuracy (grokked: ") + (report.verdict.grokked ? "yes" : "no") + ")";
  f.y_label = "accuracy";
  Series train{"train_acc", {}, {}, "#2ca02c", false};
  Series val{"val_acc", {}, {}, "#9467bd", false};
  for (const auto& r : records) {
    train.x.push_back(static_cast<double>(r.step));
    train.y.push_back(r.train_acc);
    val.x.push_back(static_cast<double>(r.step));
    val.y.push_back(r.val_acc);
  }
  f.series = {std::move(train), std::move(val)};
  f.bands = growth_bands(report);
  return f;
}

}  // namespace slingshot::plot
