#pragma once

#include <string>
#include <vector>

#include "slingshot/metric_record.hpp"
#include "slingshot/phase_analysis.hpp"

namespace slingshot::plot {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool right_axis = false;
};

// Shaded x-range drawn behind the series.
struct Band {
  double x0 = 0.0;
  double x1 = 0.0;
  std::string color = "#ffe9a8";
};

struct Figure {
  std::string title;
  std::string x_label = "step";
  std::string y_label;
  std::string y2_label;
  bool log_y = false;
  bool log_y2 = false;
  std::vector<Series> series;
  std::vector<Band> bands;
  int width = 960;
  int height = 420;
};

// Points that are non-finite, or non-positive on a log axis, leave a gap.
std::string render_svg(const Figure& figure);

// Classifier norm (left) with training loss (right, log scale); growth
// phases shaded.
Figure norm_loss_figure(const std::vector<MetricRecord>& records, const phase::PhaseReport& report);
Figure accuracy_figure(const std::vector<MetricRecord>& records, const phase::PhaseReport& report);

}  // namespace slingshot::plot
