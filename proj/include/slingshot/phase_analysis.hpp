#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "slingshot/metric_record.hpp"

namespace slingshot::phase {

struct PhaseConfig {
  std::size_t smooth_window = 5;     // odd, logged points
  double growth_threshold = 1e-3;    // rho_g, relative growth per training step
  double plateau_threshold = 1e-4;   // rho_p, same unit
  std::size_t min_length = 5;        // L_min, logged points
  double spike_factor = 10.0;        // kappa
  std::size_t spike_window = 10;     // W, logged points either side of a transition
  std::size_t spike_history = 50;    // losses in the rolling median baseline
  double acc_threshold = 0.99;       // theta_acc
  double min_delay_ratio = 5.0;      // rho_min
  std::size_t hysteresis = 3;        // consecutive logged points at or above theta_acc
};

enum class PhaseKind { growth, plateau };

const char* phase_kind_name(PhaseKind kind);

struct PhaseSegment {
  PhaseKind kind = PhaseKind::plateau;
  std::uint64_t start_step = 0;
  std::uint64_t end_step = 0;
  std::size_t start_index = 0;  // logged point indices; end is shared with the next segment
  std::size_t end_index = 0;
  double mean_growth_rate = 0.0;
};

struct SlingshotCycle {
  PhaseSegment growth;
  PhaseSegment plateau;
  std::uint64_t transition_step = 0;
  std::size_t transition_index = 0;
  std::optional<std::uint64_t> loss_spike_step;
};

struct GrokkingVerdict {
  std::optional<std::uint64_t> t_fit;
  std::optional<std::uint64_t> t_gen;
  bool grokked = false;
  std::optional<double> delay_ratio;
};

// Centered running median; windows are truncated at the ends.
std::vector<double> smooth(std::span<const double> series, std::size_t window);

// Per-interval relative growth per training step, (n[i+1] - n[i]) / (n[i] * dt)
// with dt the step gap, so rates do not depend on the logging cadence.
std::vector<double> relative_growth_rates(std::span<const std::uint64_t> steps, std::span<const double> norms);

std::vector<PhaseSegment> segment_phases(std::span<const std::uint64_t> steps, std::span<const double> norms,
                                         const PhaseConfig& config = {});

std::vector<SlingshotCycle> detect_slingshots(const std::vector<PhaseSegment>& segments,
                                              std::span<const std::uint64_t> steps,
                                              std::span<const double> train_loss, const PhaseConfig& config = {});

GrokkingVerdict detect_grokking(std::span<const std::uint64_t> steps, std::span<const double> train_acc,
                                std::span<const double> val_acc, const PhaseConfig& config = {});

struct CycleStats {
  double norm_at_start = 0.0;
  double norm_at_transition = 0.0;
  double norm_at_end = 0.0;
  double peak_train_loss = 0.0;
};

struct PhaseReport {
  std::vector<PhaseSegment> segments;
  std::vector<SlingshotCycle> cycles;
  std::vector<CycleStats> cycle_stats;
  GrokkingVerdict verdict;
  bool co_occurrence = false;
  std::size_t spike_cycles = 0;
  double best_val_acc = 0.0;
  std::size_t records = 0;
  std::size_t skipped_rows = 0;
};

// Throws ContractError on an empty record list.
PhaseReport summarize(const std::vector<MetricRecord>& records, const PhaseConfig& config = {});
PhaseReport summarize(const ParsedLog& log, const PhaseConfig& config = {});

nlohmann::ordered_json to_json(const PhaseReport& report);
nlohmann::ordered_json to_json(const PhaseConfig& config);

}  // namespace slingshot::phase
