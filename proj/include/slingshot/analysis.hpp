#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "slingshot/phase_analysis.hpp"

namespace slingshot {

struct LogAnalysis {
  std::filesystem::path log;
  std::optional<phase::PhaseReport> report;
  std::vector<std::filesystem::path> outputs;  // report JSON and plots
  std::string error;                           // set when the log could not be analyzed
};

// Report for one NDJSON log. Throws IoError or FormatError.
phase::PhaseReport analyze_file(const std::filesystem::path& log, const phase::PhaseConfig& config);

// Analyzes a log file, or every *.ndjson below a directory. Per log, writes
// <stem>.report.json plus <stem>.norm_loss.svg and <stem>.accuracy.svg into
// out_dir (default: beside the log). For a directory, also writes
// analysis_summary.csv into out_dir or the directory. Per-file failures are
// captured in LogAnalysis::error.
std::vector<LogAnalysis> analyze_path(const std::filesystem::path& target, const std::optional<std::filesystem::path>& out_dir,
                                      const phase::PhaseConfig& config, bool plots = true);

// Plots only.
std::vector<std::filesystem::path> plot_log(const std::filesystem::path& log, const std::filesystem::path& out_dir,
                                            const phase::PhaseConfig& config);

}  // namespace slingshot
