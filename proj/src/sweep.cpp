#include "slingshot/sweep.hpp"

#include <atomic>
#include <cctype>
#include <fstream>
#include <sstream>
#include <thread>

#include "slingshot/analysis.hpp"
#include "slingshot/errors.hpp"
#include "slingshot/harness.hpp"

namespace slingshot {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    out.push_back(trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Directory-safe rendering of a value.
std::string path_token(const std::string& v) {
  std::string out;
  for (char c : v) {
    const bool safe = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '+' || c == '_';
    out += safe ? c : '_';
  }
  return out;
}

std::string csv_field(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = c == ',' ? ';' : ' ';
  }
  return s;
}

}  // namespace

void SweepSpec::validate() const {
  base.validate();
  if (axes.empty()) throw ConfigError("sweep needs at least one sweep.axis.<key> line");
  if (jobs == 0) throw ConfigError("sweep.jobs must be at least 1");
  for (std::size_t i = 0; i < axes.size(); ++i) {
    const auto& axis = axes[i];
    if (axis.key == "out_dir") throw ConfigError("out_dir cannot be a sweep axis");
    if (axis.values.empty()) throw ConfigError("sweep axis " + axis.key + " has no values");
    for (std::size_t j = 0; j < i; ++j) {
      if (axes[j].key == axis.key) throw ConfigError("duplicate sweep axis " + axis.key);
    }
    RunConfig probe = base;
    for (const auto& v : axis.values) {
      if (v.empty()) throw ConfigError("sweep axis " + axis.key + " has an empty value");
      set_config_value(probe, axis.key, v);
    }
  }
  if (mode == SweepMode::paired) {
    for (const auto& axis : axes) {
      if (axis.values.size() != axes.front().values.size()) {
        throw ConfigError("paired sweep axes must have equal lengths (" + axes.front().key + " has " +
                          std::to_string(axes.front().values.size()) + ", " + axis.key + " has " +
                          std::to_string(axis.values.size()) + ")");
      }
    }
  }
}

std::size_t SweepSpec::cell_count() const {
  if (axes.empty()) return 0;
  if (mode == SweepMode::paired) return axes.front().values.size();
  std::size_t n = 1;
  for (const auto& a : axes) n *= a.values.size();
  return n;
}

std::vector<SweepCell> sweep_cells(const SweepSpec& spec) {
  std::vector<SweepCell> cells;
  const std::size_t n = spec.cell_count();
  cells.reserve(n);
  for (std::size_t c = 0; c < n; ++c) {
    SweepCell cell;
    std::size_t rest = c;
    std::vector<std::size_t> pick(spec.axes.size());
    for (std::size_t i = spec.axes.size(); i-- > 0;) {
      if (spec.mode == SweepMode::paired) {
        pick[i] = c;
      } else {
        pick[i] = rest % spec.axes[i].values.size();
        rest /= spec.axes[i].values.size();
      }
    }
    for (std::size_t i = 0; i < spec.axes.size(); ++i) {
      const auto& key = spec.axes[i].key;
      const auto& value = spec.axes[i].values[pick[i]];
      cell.assignment.emplace_back(key, value);
      if (!cell.name.empty()) cell.name += "__";
      cell.name += key + "=" + path_token(value);
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

SweepSpec parse_sweep(const std::string& text, const std::string& origin) {
  SweepSpec spec;
  std::string base_text;
  std::stringstream in(text);
  std::string line;
  std::size_t number = 0;
  std::vector<std::pair<std::size_t, std::string>> sweep_lines;
  while (std::getline(in, line)) {
    ++number;
    std::string body = line;
    if (const auto hash = body.find('#'); hash != std::string::npos) body.erase(hash);
    if (trim(body).rfind("sweep.", 0) == 0) {
      sweep_lines.emplace_back(number, trim(body));
      base_text += "\n";  // keeps base line numbers aligned
    } else {
      base_text += line + "\n";
    }
  }
  spec.base = parse_config(base_text, origin);
  for (const auto& [n, body] : sweep_lines) {
    const auto where = origin + ":" + std::to_string(n) + ": ";
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key == "sweep.mode") {
      if (value == "product") {
        spec.mode = SweepMode::product;
      } else if (value == "paired") {
        spec.mode = SweepMode::paired;
      } else {
        throw ConfigError(where + "sweep.mode must be product or paired, got '" + value + "'");
      }
    } else if (key == "sweep.jobs") {
      try {
        std::size_t used = 0;
        const long j = std::stol(value, &used);
        if (used != value.size() || j < 1) throw std::invalid_argument(value);
        spec.jobs = static_cast<unsigned>(j);
      } catch (const std::logic_error&) {
        throw ConfigError(where + "sweep.jobs must be a positive integer, got '" + value + "'");
      }
    } else if (key.rfind("sweep.axis.", 0) == 0) {
      SweepAxis axis{key.substr(11), split_list(value)};
      try {
        RunConfig probe = spec.base;
        for (const auto& v : axis.values) set_config_value(probe, axis.key, v);
      } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
      }
      spec.axes.push_back(std::move(axis));
    } else {
      throw ConfigError(where + "unknown sweep key '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

SweepSpec load_sweep(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open sweep file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_sweep(buf.str(), path.string());
}

SweepResult sweep(const SweepSpec& spec) {
  spec.validate();
  const auto cells = sweep_cells(spec);
  SweepResult result;
  result.root = resolve_out_dir(spec.base.out_dir);
  std::filesystem::create_directories(result.root);
  result.rows.resize(cells.size());

  auto run_cell = [&](std::size_t i) {
    const auto& cell = cells[i];
    SweepRow& row = result.rows[i];
    row.cell = cell.name;
    try {
      RunConfig config = spec.base;
      for (const auto& [k, v] : cell.assignment) set_config_value(config, k, v);
      config.out_dir = result.root / cell.name;
      config.validate();
      const RunResult r = run(config);
      row.last_step = r.last_step;
      const phase::PhaseReport report = analyze_file(r.log_path, config.analysis);
      row.status = r.aborted ? "aborted" : "ok";
      row.cycles = report.cycles.size();
      row.spike_cycles = report.spike_cycles;
      row.grokked = report.verdict.grokked;
      row.best_val_acc = report.best_val_acc;
      if (report.verdict.t_fit) row.t_fit = std::to_string(*report.verdict.t_fit);
      if (report.verdict.t_gen) row.t_gen = std::to_string(*report.verdict.t_gen);
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
    }
  };

  const unsigned workers = std::min<std::size_t>(spec.jobs, cells.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(i);
      });
    }
  }

  result.summary = result.root / "summary.csv";
  std::ofstream out(result.summary, std::ios::trunc);
  if (!out) throw IoError("cannot write " + result.summary.string());
  out << kSweepSummaryHeader << "\n";
  for (const auto& row : result.rows) {
    const bool failed = row.status.rfind("error", 0) == 0;
    out << csv_field(row.cell) << "," << csv_field(row.status) << ",";
    if (failed) {
      out << ",,,,,,\n";
      continue;
    }
    out << row.cycles << "," << row.spike_cycles << "," << (row.grokked ? "true" : "false") << ","
        << format_double(row.best_val_acc) << "," << row.t_fit << "," << row.t_gen << "," << row.last_step << "\n";
  }
  if (!out) throw IoError("short write to " + result.summary.string());
  return result;
}

}  // namespace slingshot
