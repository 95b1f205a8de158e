#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "slingshot/datasets.hpp"
#include "slingshot/models.hpp"
#include "slingshot/optimizers.hpp"
#include "slingshot/phase_analysis.hpp"

namespace slingshot {

enum class DataKind { equations, synthetic, cifar };
enum class Precision { float64, float32 };

std::string_view data_kind_name(DataKind kind);
std::string_view precision_name(Precision p);

struct DataConfig {
  DataKind kind = DataKind::synthetic;
  data::OpSpec op;
  double train_fraction = 0.5;
  std::size_t ambient_dim = 128;
  std::size_t informative_dim = 3;
  std::size_t classes = 8;
  std::size_t samples = 256;  // per split, synthetic and cifar
  std::vector<std::filesystem::path> cifar_paths;
  std::uint64_t seed = 0;
};

struct ProbeConfig {
  std::uint64_t log_every = 10;
  std::uint64_t sharpness_every = 50;  // in logged points; 0 disables
  double fd_step = 0.0;                // 0 selects 1e-3 * (1 + ||x||_inf)
  std::size_t probe_batch = 64;
  std::size_t eval_batch = 512;
};

struct RunConfig {
  ModelSpec model;
  OptimizerConfig optimizer;
  DataConfig data;
  bool full_batch = false;
  std::size_t batch_size = 128;
  std::uint64_t max_steps = 1000;
  std::uint64_t seed = 0;
  Precision precision = Precision::float64;
  std::uint64_t checkpoint_every = 0;  // 0: only at the end of the run
  ProbeConfig probe;
  phase::PhaseConfig analysis;
  std::filesystem::path out_dir = "runs/default";

  // Cross-field checks; throws ConfigError.
  void validate() const;
};

// Every accepted key, in canonical order.
const std::vector<std::string>& config_keys();

// Sets one dotted key from its text form; unknown keys and unparsable
// values throw ConfigError.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& config, std::string_view key);

// "key = value" lines; '#' starts a comment. Later lines override earlier
// ones. The origin names the source in error messages.
RunConfig parse_config(std::string_view text, std::string_view origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);
// Canonical text with every key present.
std::string format_config(const RunConfig& config);
// Keys except out_dir, which is a location rather than a setting.
nlohmann::ordered_json config_to_json(const RunConfig& config);

// Shortest text that reads back to the same double.
std::string format_double(double v);

// Output root from SLINGSHOT_OUT_ROOT, applied to relative out_dir values.
std::filesystem::path resolve_out_dir(const std::filesystem::path& out_dir);

}  // namespace slingshot
