#include "slingshot/phase_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "slingshot/errors.hpp"

namespace slingshot::phase {

namespace {

enum class Label { growth, plateau, intermediate };

struct Run {
  Label label;
  std::size_t begin;  // first interval
  std::size_t end;    // one past the last interval
  std::size_t size() const { return end - begin; }
};

double median_of(std::vector<double> values) {
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

std::vector<Run> coalesce(const std::vector<Run>& runs) {
  std::vector<Run> out;
  for (const Run& r : runs) {
    if (!out.empty() && out.back().label == r.label) {
      out.back().end = r.end;
    } else {
      out.push_back(r);
    }
  }
  return out;
}

std::optional<std::size_t> first_sustained(std::span<const double> series, double threshold, std::size_t hold) {
  const std::size_t need = std::max<std::size_t>(hold, 1);
  std::size_t streak = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    streak = series[i] >= threshold ? streak + 1 : 0;
    if (streak == need) return i + 1 - need;
  }
  return std::nullopt;
}

nlohmann::ordered_json segment_json(const PhaseSegment& s) {
  nlohmann::ordered_json j;
  j["kind"] = phase_kind_name(s.kind);
  j["start_step"] = s.start_step;
  j["end_step"] = s.end_step;
  j["mean_growth_rate"] = std::isfinite(s.mean_growth_rate) ? nlohmann::ordered_json(s.mean_growth_rate) : nullptr;
  return j;
}

template <typename T>
nlohmann::ordered_json optional_json(const std::optional<T>& v) {
  if (!v) return nullptr;
  return *v;
}

}  // namespace

const char* phase_kind_name(PhaseKind kind) { return kind == PhaseKind::growth ? "growth" : "plateau"; }

std::vector<double> smooth(std::span<const double> series, std::size_t window) {
  if (series.empty()) throw ContractError("smooth: empty series");
  if (window == 0 || window % 2 == 0) throw ContractError("smooth: window must be a positive odd integer");
  const std::size_t half = window / 2;
  std::vector<double> out(series.size());
  std::vector<double> buf;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(series.size() - 1, i + half);
    buf.assign(series.begin() + static_cast<std::ptrdiff_t>(lo), series.begin() + static_cast<std::ptrdiff_t>(hi + 1));
    out[i] = median_of(buf);
  }
  return out;
}

std::vector<double> relative_growth_rates(std::span<const std::uint64_t> steps, std::span<const double> norms) {
  if (steps.size() != norms.size()) throw ContractError("relative_growth_rates: steps and norms differ in length");
  if (norms.size() < 2) return {};
  std::vector<double> rates(norms.size() - 1);
  for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
    if (steps[i + 1] <= steps[i]) throw ContractError("relative_growth_rates: steps must be strictly increasing");
    const double dt = static_cast<double>(steps[i + 1] - steps[i]);
    const double delta = norms[i + 1] - norms[i];
    if (norms[i] > 0.0) {
      rates[i] = delta / (norms[i] * dt);
    } else {
      rates[i] = delta > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    }
  }
  return rates;
}

std::vector<PhaseSegment> segment_phases(std::span<const std::uint64_t> steps, std::span<const double> norms,
                                         const PhaseConfig& config) {
  if (norms.size() < 3) throw ContractError("segment_phases: need at least 3 points");
  if (!(config.growth_threshold > config.plateau_threshold && config.plateau_threshold >= 0.0)) {
    throw ContractError("segment_phases: need growth_threshold > plateau_threshold >= 0");
  }
  const std::vector<double> rates = relative_growth_rates(steps, norms);
  const std::size_t m = rates.size();

  std::vector<Label> labels(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (rates[i] >= config.growth_threshold) {
      labels[i] = Label::growth;
    } else if (std::abs(rates[i]) <= config.plateau_threshold) {
      labels[i] = Label::plateau;
    } else {
      labels[i] = Label::intermediate;
    }
  }
  // Intermediate rates belong to whatever phase precedes them; a leading run
  // takes the first decided label.
  auto first_decided = std::find_if(labels.begin(), labels.end(), [](Label l) { return l != Label::intermediate; });
  if (first_decided == labels.end()) {
    double sum = 0.0;
    std::size_t count = 0;
    for (double r : rates) {
      if (std::isfinite(r)) {
        sum += r;
        ++count;
      }
    }
    const double mean = count ? sum / static_cast<double>(count) : 0.0;
    std::fill(labels.begin(), labels.end(),
              mean >= 0.5 * (config.growth_threshold + config.plateau_threshold) ? Label::growth : Label::plateau);
  } else {
    Label current = *first_decided;
    for (auto& l : labels) {
      if (l == Label::intermediate) {
        l = current;
      } else {
        current = l;
      }
    }
  }

  std::vector<Run> runs;
  for (std::size_t i = 0; i < m; ++i) {
    if (!runs.empty() && runs.back().label == labels[i]) {
      runs.back().end = i + 1;
    } else {
      runs.push_back({labels[i], i, i + 1});
    }
  }
  // Absorb runs shorter than L_min, shortest first, into the preceding phase.
  while (runs.size() > 1) {
    std::size_t victim = runs.size();
    for (std::size_t k = 0; k < runs.size(); ++k) {
      if (runs[k].size() < config.min_length && (victim == runs.size() || runs[k].size() < runs[victim].size())) {
        victim = k;
      }
    }
    if (victim == runs.size()) break;
    runs[victim].label = victim > 0 ? runs[victim - 1].label : runs[victim + 1].label;
    runs = coalesce(runs);
  }

  std::vector<PhaseSegment> segments;
  segments.reserve(runs.size());
  for (const Run& r : runs) {
    PhaseSegment s;
    s.kind = r.label == Label::growth ? PhaseKind::growth : PhaseKind::plateau;
    s.start_index = r.begin;
    s.end_index = r.end;
    s.start_step = steps[r.begin];
    s.end_step = steps[r.end];
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = r.begin; i < r.end; ++i) {
      if (std::isfinite(rates[i])) {
        sum += rates[i];
        ++count;
      }
    }
    s.mean_growth_rate = count ? sum / static_cast<double>(count)
                               : (s.kind == PhaseKind::growth ? std::numeric_limits<double>::infinity() : 0.0);
    segments.push_back(s);
  }
  return segments;
}

std::vector<SlingshotCycle> detect_slingshots(const std::vector<PhaseSegment>& segments,
                                              std::span<const std::uint64_t> steps,
                                              std::span<const double> train_loss, const PhaseConfig& config) {
  if (steps.size() != train_loss.size()) throw ContractError("detect_slingshots: steps and loss differ in length");
  std::vector<SlingshotCycle> cycles;
  for (std::size_t k = 0; k + 1 < segments.size(); ++k) {
    if (segments[k].kind != PhaseKind::growth || segments[k + 1].kind != PhaseKind::plateau) continue;
    SlingshotCycle cycle;
    cycle.growth = segments[k];
    cycle.plateau = segments[k + 1];
    cycle.transition_index = segments[k].end_index;
    cycle.transition_step = segments[k].end_step;

    const std::size_t t = cycle.transition_index;
    const std::size_t lo = std::max<std::size_t>(1, t >= config.spike_window ? t - config.spike_window : 0);
    const std::size_t hi = std::min(train_loss.size() - 1, t + config.spike_window);
    for (std::size_t i = lo; i <= hi && i < train_loss.size(); ++i) {
      const std::size_t from = i >= config.spike_history ? i - config.spike_history : 0;
      std::vector<double> history(train_loss.begin() + static_cast<std::ptrdiff_t>(from),
                                  train_loss.begin() + static_cast<std::ptrdiff_t>(i));
      if (train_loss[i] > config.spike_factor * median_of(std::move(history))) {
        cycle.loss_spike_step = steps[i];
        break;
      }
    }
    cycles.push_back(cycle);
  }
  return cycles;
}

GrokkingVerdict detect_grokking(std::span<const std::uint64_t> steps, std::span<const double> train_acc,
                                std::span<const double> val_acc, const PhaseConfig& config) {
  if (steps.size() != train_acc.size() || steps.size() != val_acc.size()) {
    throw ContractError("detect_grokking: series lengths differ");
  }
  GrokkingVerdict verdict;
  if (auto i = first_sustained(train_acc, config.acc_threshold, config.hysteresis)) verdict.t_fit = steps[*i];
  if (auto i = first_sustained(val_acc, config.acc_threshold, config.hysteresis)) verdict.t_gen = steps[*i];
  if (verdict.t_fit && verdict.t_gen) {
    verdict.delay_ratio =
        static_cast<double>(*verdict.t_gen) / static_cast<double>(std::max<std::uint64_t>(*verdict.t_fit, 1));
    verdict.grokked = *verdict.delay_ratio >= config.min_delay_ratio;
  }
  return verdict;
}

PhaseReport summarize(const std::vector<MetricRecord>& records, const PhaseConfig& config) {
  if (records.empty()) throw ContractError("summarize: log contains no metric rows");
  PhaseReport report;
  report.records = records.size();
  std::vector<std::uint64_t> steps;
  std::vector<double> norms, loss, train_acc, val_acc;
  for (const auto& r : records) {
    steps.push_back(r.step);
    norms.push_back(r.last_layer_norm);
    loss.push_back(r.train_loss);
    train_acc.push_back(r.train_acc);
    val_acc.push_back(r.val_acc);
    if (std::isfinite(r.val_acc)) report.best_val_acc = std::max(report.best_val_acc, r.val_acc);
  }
  report.verdict = detect_grokking(steps, train_acc, val_acc, config);
  if (records.size() >= 3) {
    const std::vector<double> smoothed = smooth(norms, config.smooth_window);
    report.segments = segment_phases(steps, smoothed, config);
    report.cycles = detect_slingshots(report.segments, steps, loss, config);
  }
  for (const auto& c : report.cycles) {
    if (c.loss_spike_step) ++report.spike_cycles;
    CycleStats stats;
    stats.norm_at_start = norms[c.growth.start_index];
    stats.norm_at_transition = norms[c.transition_index];
    stats.norm_at_end = norms[c.plateau.end_index];
    for (std::size_t i = c.growth.start_index; i <= c.plateau.end_index; ++i) {
      if (std::isfinite(loss[i])) stats.peak_train_loss = std::max(stats.peak_train_loss, loss[i]);
    }
    report.cycle_stats.push_back(stats);
    if (report.verdict.grokked && *report.verdict.t_gen >= c.growth.start_step &&
        *report.verdict.t_gen <= c.plateau.end_step) {
      report.co_occurrence = true;
    }
  }
  return report;
}

PhaseReport summarize(const ParsedLog& log, const PhaseConfig& config) {
  PhaseReport report = summarize(log.records, config);
  report.skipped_rows = log.malformed_rows;
  return report;
}

nlohmann::ordered_json to_json(const PhaseConfig& c) {
  nlohmann::ordered_json j;
  j["smooth_window"] = c.smooth_window;
  j["growth_threshold"] = c.growth_threshold;
  j["plateau_threshold"] = c.plateau_threshold;
  j["min_length"] = c.min_length;
  j["spike_factor"] = c.spike_factor;
  j["spike_window"] = c.spike_window;
  j["spike_history"] = c.spike_history;
  j["acc_threshold"] = c.acc_threshold;
  j["min_delay_ratio"] = c.min_delay_ratio;
  j["hysteresis"] = c.hysteresis;
  return j;
}

nlohmann::ordered_json to_json(const PhaseReport& report) {
  nlohmann::ordered_json j;
  j["records"] = report.records;
  j["skipped_rows"] = report.skipped_rows;
  j["cycles"] = report.cycles.size();
  j["spike_cycles"] = report.spike_cycles;
  j["grokked"] = report.verdict.grokked;
  j["t_fit"] = optional_json(report.verdict.t_fit);
  j["t_gen"] = optional_json(report.verdict.t_gen);
  j["delay_ratio"] = optional_json(report.verdict.delay_ratio);
  j["co_occurrence"] = report.co_occurrence;
  j["best_val_acc"] = report.best_val_acc;
  auto segs = nlohmann::ordered_json::array();
  for (const auto& s : report.segments) segs.push_back(segment_json(s));
  j["segments"] = std::move(segs);
  auto cyc = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < report.cycles.size(); ++k) {
    const auto& c = report.cycles[k];
    nlohmann::ordered_json cj;
    cj["growth"] = segment_json(c.growth);
    cj["plateau"] = segment_json(c.plateau);
    cj["transition_step"] = c.transition_step;
    cj["loss_spike_step"] = optional_json(c.loss_spike_step);
    if (k < report.cycle_stats.size()) {
      const auto& s = report.cycle_stats[k];
      cj["norm_at_start"] = s.norm_at_start;
      cj["norm_at_transition"] = s.norm_at_transition;
      cj["norm_at_end"] = s.norm_at_end;
      cj["peak_train_loss"] = s.peak_train_loss;
    }
    cyc.push_back(std::move(cj));
  }
  j["cycle_list"] = std::move(cyc);
  return j;
}

}  // namespace slingshot::phase
