#include "slingshot/analysis.hpp"

#include <algorithm>
#include <fstream>

#include "slingshot/errors.hpp"
#include "slingshot/metric_record.hpp"
#include "slingshot/plot.hpp"

namespace slingshot {

namespace {

ParsedLog read_log(const std::filesystem::path& log) {
  std::ifstream in(log);
  if (!in) throw IoError("cannot open metric log " + log.string());
  try {
    return parse_metric_log(in);
  } catch (const FormatError& e) {
    throw FormatError(log.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

std::string stem_of(const std::filesystem::path& log) {
  // metrics.ndjson inside a run directory is named after the directory.
  if (log.filename() == "metrics.ndjson" && log.has_parent_path() && !log.parent_path().filename().empty()) {
    return log.parent_path().filename().string();
  }
  return log.stem().string();
}

std::vector<std::filesystem::path> write_plots(const ParsedLog& parsed, const phase::PhaseReport& report,
                                               const std::filesystem::path& dir, const std::string& stem) {
  const auto a = dir / (stem + ".norm_loss.svg");
  const auto b = dir / (stem + ".accuracy.svg");
  write_text(a, plot::render_svg(plot::norm_loss_figure(parsed.records, report)));
  write_text(b, plot::render_svg(plot::accuracy_figure(parsed.records, report)));
  return {a, b};
}

std::string opt_step(const std::optional<std::uint64_t>& v) { return v ? std::to_string(*v) : std::string(); }

}  // namespace

phase::PhaseReport analyze_file(const std::filesystem::path& log, const phase::PhaseConfig& config) {
  return phase::summarize(read_log(log), config);
}

std::vector<std::filesystem::path> plot_log(const std::filesystem::path& log, const std::filesystem::path& out_dir,
                                            const phase::PhaseConfig& config) {
  const ParsedLog parsed = read_log(log);
  const phase::PhaseReport report = phase::summarize(parsed, config);
  std::filesystem::create_directories(out_dir);
  return write_plots(parsed, report, out_dir, stem_of(log));
}

std::vector<LogAnalysis> analyze_path(const std::filesystem::path& target, const std::optional<std::filesystem::path>& out_dir,
                                      const phase::PhaseConfig& config, bool plots) {
  std::error_code ec;
  if (!std::filesystem::exists(target, ec)) throw IoError("no such log or directory: " + target.string());
  const bool is_dir = std::filesystem::is_directory(target);
  std::vector<std::filesystem::path> logs;
  if (is_dir) {
    for (const auto& entry : std::filesystem::recursive_directory_iterator(target)) {
      if (entry.is_regular_file() && entry.path().extension() == ".ndjson") logs.push_back(entry.path());
    }
    std::sort(logs.begin(), logs.end());
  } else {
    logs.push_back(target);
  }

  std::vector<LogAnalysis> results;
  for (const auto& log : logs) {
    LogAnalysis a;
    a.log = log;
    try {
      const ParsedLog parsed = read_log(log);
      const phase::PhaseReport report = phase::summarize(parsed, config);
      const auto dir = out_dir ? *out_dir : log.parent_path();
      if (!dir.empty()) std::filesystem::create_directories(dir);
      const std::string stem = stem_of(log);
      nlohmann::ordered_json j;
      j["log"] = log.string();
      j["analysis_config"] = phase::to_json(config);
      j["report"] = phase::to_json(report);
      const auto report_path = dir / (stem + ".report.json");
      write_text(report_path, j.dump(2) + "\n");
      a.outputs.push_back(report_path);
      if (plots) {
        for (auto& p : write_plots(parsed, report, dir, stem)) a.outputs.push_back(std::move(p));
      }
      a.report = report;
    } catch (const Error& e) {
      a.error = e.what();
    }
    results.push_back(std::move(a));
  }

  if (is_dir) {
    const auto dir = out_dir ? *out_dir : target;
    std::filesystem::create_directories(dir);
    std::string csv = "log,status,cycles,spike_cycles,grokked,co_occurrence,best_val_acc,t_fit,t_gen,records,skipped_rows\n";
    for (const auto& a : results) {
      csv += std::filesystem::relative(a.log, target).string() + ",";
      if (!a.report) {
        std::string msg = a.error;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        csv += "error: " + msg + ",,,,,,,,,\n";
        continue;
      }
      const auto& r = *a.report;
      csv += "ok," + std::to_string(r.cycles.size()) + "," + std::to_string(r.spike_cycles) + "," +
             (r.verdict.grokked ? "true" : "false") + "," + (r.co_occurrence ? "true" : "false") + "," +
             nlohmann::json(r.best_val_acc).dump() + "," + opt_step(r.verdict.t_fit) + "," + opt_step(r.verdict.t_gen) +
             "," + std::to_string(r.records) + "," + std::to_string(r.skipped_rows) + "\n";
    }
    write_text(dir / "analysis_summary.csv", csv);
  }
  return results;
}

}  // namespace slingshot
