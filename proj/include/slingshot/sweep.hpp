#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "slingshot/config.hpp"

namespace slingshot {

enum class SweepMode { product, paired };

struct SweepAxis {
  std::string key;                  // a config key, e.g. optimizer.eps
  std::vector<std::string> values;  // textual values as they would appear in a config
};

struct SweepSpec {
  RunConfig base;
  std::vector<SweepAxis> axes;
  SweepMode mode = SweepMode::product;
  unsigned jobs = 1;  // cells run concurrently

  // Checks axis keys and values against the base config. Throws ConfigError.
  void validate() const;
  std::size_t cell_count() const;
};

struct SweepCell {
  std::string name;  // key=value pairs joined with "__"
  std::vector<std::pair<std::string, std::string>> assignment;
};

// Cells in row-major order over the axes (last axis fastest) or, when
// paired, in lockstep.
std::vector<SweepCell> sweep_cells(const SweepSpec& spec);

// Base config lines plus
//   sweep.mode = product | paired
//   sweep.jobs = N
//   sweep.axis.<config key> = v1, v2, ...
SweepSpec parse_sweep(const std::string& text, const std::string& origin = "<sweep>");
SweepSpec load_sweep(const std::filesystem::path& path);

struct SweepRow {
  std::string cell;
  std::string status;  // ok, aborted or error: <message>
  std::size_t cycles = 0;
  std::size_t spike_cycles = 0;
  bool grokked = false;
  double best_val_acc = 0.0;
  std::string t_fit;
  std::string t_gen;
  std::uint64_t last_step = 0;
};

struct SweepResult {
  std::filesystem::path root;
  std::filesystem::path summary;
  std::vector<SweepRow> rows;  // one per cell, in cell order
};

// Runs every cell into <base out_dir>/<cell name> and writes summary.csv
// there. A failing cell is recorded and the sweep continues.
SweepResult sweep(const SweepSpec& spec);

inline constexpr const char* kSweepSummaryHeader =
    "cell,status,cycles,spike_cycles,grokked,best_val_acc,t_fit,t_gen,last_step";

}  // namespace slingshot
