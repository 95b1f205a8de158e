#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "slingshot/config.hpp"
#include "slingshot/models.hpp"

namespace slingshot {

inline constexpr const char* kLogFileName = "metrics.ndjson";
inline constexpr const char* kCheckpointFileName = "checkpoint.slng";

std::string code_version();

// Independent seed streams derived from one run seed.
enum class SeedStream : std::uint64_t { init = 1, order = 2, probe = 3 };
std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream);

// Model spec with data-dependent sizes filled in, plus both splits.
struct ResolvedData {
  ModelSpec spec;
  BasicBatch<double> train;
  BasicBatch<double> val;
};

ResolvedData resolve_data(const RunConfig& config);

struct RunOptions {
  // Continue from the run directory's checkpoint; rows after its step are
  // dropped from the log first.
  bool resume = false;
  // Save a checkpoint and return once this step has been taken.
  std::optional<std::uint64_t> stop_at;
};

struct RunResult {
  std::filesystem::path out_dir;
  std::filesystem::path log_path;
  std::filesystem::path checkpoint_path;
  std::uint64_t last_step = 0;
  std::size_t parameter_count = 0;
  bool aborted = false;
  std::string abort_reason;
};

// Deterministic training run writing metrics.ndjson and checkpoint.slng into
// the resolved out_dir. A non-finite loss or gradient ends the run with an
// abort row; the previous checkpoint is left in place.
RunResult run(const RunConfig& config, const RunOptions& options = {});

}  // namespace slingshot
