#include "slingshot/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "slingshot/errors.hpp"

namespace slingshot {

std::string_view data_kind_name(DataKind kind) {
  switch (kind) {
    case DataKind::equations: return "equations";
    case DataKind::synthetic: return "synthetic";
    case DataKind::cifar: return "cifar";
  }
  return "?";
}

std::string_view precision_name(Precision p) { return p == Precision::float64 ? "float64" : "float32"; }

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config key '" + std::string(key) + "': cannot read '" + std::string(value) + "' as " +
                    std::string(expected));
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "a real number");
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field size_field(std::string key, Member member) {
  return {key, [key, member](RunConfig& c, std::string_view v) { std::invoke(member, c) = to_u64(key, v); },
          [member](const RunConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <typename Member>
Field real_field(std::string key, Member member) {
  return {key, [key, member](RunConfig& c, std::string_view v) { std::invoke(member, c) = to_double(key, v); },
          [member](const RunConfig& c) { return format_double(std::invoke(member, c)); }};
}

// Accessors as lambdas so nested members can be addressed uniformly.
#define SLINGSHOT_REF(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"model.kind", [](RunConfig& c, std::string_view v) { c.model.kind = parse_model_kind(v); },
                 [](const RunConfig& c) { return std::string(model_kind_name(c.model.kind)); }});
    f.push_back(size_field("model.depth", SLINGSHOT_REF(model.depth)));
    f.push_back(size_field("model.width", SLINGSHOT_REF(model.width)));
    f.push_back(size_field("model.heads", SLINGSHOT_REF(model.heads)));
    f.push_back(size_field("model.mlp_ratio", SLINGSHOT_REF(model.mlp_ratio)));
    f.push_back({"model.head_mode", [](RunConfig& c, std::string_view v) { c.model.head_mode = parse_head_mode(v); },
                 [](const RunConfig& c) { return std::string(head_mode_name(c.model.head_mode)); }});
    f.push_back(real_field("model.tau", SLINGSHOT_REF(model.tau)));

    f.push_back({"optimizer.kind",
                 [](RunConfig& c, std::string_view v) { c.optimizer.kind = parse_optimizer_kind(v); },
                 [](const RunConfig& c) { return std::string(optimizer_kind_name(c.optimizer.kind)); }});
    f.push_back(real_field("optimizer.lr", SLINGSHOT_REF(optimizer.lr)));
    f.push_back(real_field("optimizer.eps", SLINGSHOT_REF(optimizer.eps)));
    f.push_back(real_field("optimizer.beta1", SLINGSHOT_REF(optimizer.beta1)));
    f.push_back(real_field("optimizer.beta2", SLINGSHOT_REF(optimizer.beta2)));
    f.push_back(real_field("optimizer.alpha", SLINGSHOT_REF(optimizer.alpha)));
    f.push_back(real_field("optimizer.momentum", SLINGSHOT_REF(optimizer.momentum)));
    f.push_back(real_field("optimizer.weight_decay", SLINGSHOT_REF(optimizer.weight_decay)));
    f.push_back(size_field("optimizer.warmup_steps", SLINGSHOT_REF(optimizer.warmup_steps)));

    f.push_back({"data.kind",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "equations") c.data.kind = DataKind::equations;
                   else if (v == "synthetic") c.data.kind = DataKind::synthetic;
                   else if (v == "cifar") c.data.kind = DataKind::cifar;
                   else bad_value("data.kind", v, "one of equations, synthetic, cifar");
                 },
                 [](const RunConfig& c) { return std::string(data_kind_name(c.data.kind)); }});
    f.push_back({"data.operation", [](RunConfig& c, std::string_view v) { c.data.op.op = data::parse_operation(v); },
                 [](const RunConfig& c) { return std::string(data::operation_name(c.data.op.op)); }});
    f.push_back({"data.p",
                 [](RunConfig& c, std::string_view v) {
                   const auto p = to_u64("data.p", v);
                   if (p > 0xffffffffULL) bad_value("data.p", v, "a 32-bit prime");
                   c.data.op.p = static_cast<std::uint32_t>(p);
                 },
                 [](const RunConfig& c) { return std::to_string(c.data.op.p); }});
    f.push_back(real_field("data.train_fraction", SLINGSHOT_REF(data.train_fraction)));
    f.push_back(size_field("data.ambient_dim", SLINGSHOT_REF(data.ambient_dim)));
    f.push_back(size_field("data.informative_dim", SLINGSHOT_REF(data.informative_dim)));
    f.push_back(size_field("data.classes", SLINGSHOT_REF(data.classes)));
    f.push_back(size_field("data.samples", SLINGSHOT_REF(data.samples)));
    f.push_back({"data.cifar_paths",
                 [](RunConfig& c, std::string_view v) {
                   c.data.cifar_paths.clear();
                   std::stringstream ss{std::string(v)};
                   std::string item;
                   while (std::getline(ss, item, ',')) {
                     item = trim(item);
                     if (!item.empty()) c.data.cifar_paths.emplace_back(item);
                   }
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (const auto& p : c.data.cifar_paths) {
                     if (!out.empty()) out += ",";
                     out += p.string();
                   }
                   return out;
                 }});
    f.push_back(size_field("data.seed", SLINGSHOT_REF(data.seed)));

    f.push_back({"train.batch_size",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "full") {
                     c.full_batch = true;
                   } else {
                     c.full_batch = false;
                     c.batch_size = to_u64("train.batch_size", v);
                   }
                 },
                 [](const RunConfig& c) { return c.full_batch ? std::string("full") : std::to_string(c.batch_size); }});
    f.push_back(size_field("train.max_steps", SLINGSHOT_REF(max_steps)));
    f.push_back(size_field("train.seed", SLINGSHOT_REF(seed)));
    f.push_back({"train.precision",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "float64") c.precision = Precision::float64;
                   else if (v == "float32") c.precision = Precision::float32;
                   else bad_value("train.precision", v, "float64 or float32");
                 },
                 [](const RunConfig& c) { return std::string(precision_name(c.precision)); }});
    f.push_back(size_field("train.checkpoint_every", SLINGSHOT_REF(checkpoint_every)));

    f.push_back(size_field("probe.log_every", SLINGSHOT_REF(probe.log_every)));
    f.push_back(size_field("probe.sharpness_every", SLINGSHOT_REF(probe.sharpness_every)));
    f.push_back(real_field("probe.fd_step", SLINGSHOT_REF(probe.fd_step)));
    f.push_back(size_field("probe.probe_batch", SLINGSHOT_REF(probe.probe_batch)));
    f.push_back(size_field("probe.eval_batch", SLINGSHOT_REF(probe.eval_batch)));

    f.push_back(size_field("analysis.smooth_window", SLINGSHOT_REF(analysis.smooth_window)));
    f.push_back(real_field("analysis.growth_threshold", SLINGSHOT_REF(analysis.growth_threshold)));
    f.push_back(real_field("analysis.plateau_threshold", SLINGSHOT_REF(analysis.plateau_threshold)));
    f.push_back(size_field("analysis.min_length", SLINGSHOT_REF(analysis.min_length)));
    f.push_back(real_field("analysis.spike_factor", SLINGSHOT_REF(analysis.spike_factor)));
    f.push_back(size_field("analysis.spike_window", SLINGSHOT_REF(analysis.spike_window)));
    f.push_back(size_field("analysis.spike_history", SLINGSHOT_REF(analysis.spike_history)));
    f.push_back(real_field("analysis.acc_threshold", SLINGSHOT_REF(analysis.acc_threshold)));
    f.push_back(real_field("analysis.min_delay_ratio", SLINGSHOT_REF(analysis.min_delay_ratio)));
    f.push_back(size_field("analysis.hysteresis", SLINGSHOT_REF(analysis.hysteresis)));

    f.push_back({"out_dir", [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); },
                 [](const RunConfig& c) { return c.out_dir.string(); }});
    return f;
  }();
  return table;
}

#undef SLINGSHOT_REF

const Field& field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (model.depth == 0) fail("model.depth must be >= 1");
  if (model.width == 0) fail("model.width must be >= 1");
  if (model.head_mode == HeadMode::normalized && !(model.tau > 0.0)) fail("model.tau must be positive");
  if (model.kind == ModelKind::transformer) {
    if (model.heads == 0 || model.width % model.heads != 0) fail("model.width must be divisible by model.heads");
    if (model.mlp_ratio == 0) fail("model.mlp_ratio must be >= 1");
    if (data.kind != DataKind::equations) fail("the transformer trains on data.kind = equations");
  } else if (data.kind == DataKind::equations) {
    fail("data.kind = equations needs model.kind = transformer");
  }
  optimizer.validate();
  if (data.kind == DataKind::equations) {
    if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) fail("data.train_fraction must lie in (0, 1)");
    if (!data::is_group_operation(data.op.op) && !data::is_prime(data.op.p)) {
      fail("data.p = " + std::to_string(data.op.p) + " is not prime");
    }
  }
  if (data.kind == DataKind::synthetic) {
    if (data.informative_dim == 0 || data.informative_dim > data.ambient_dim) {
      fail("data.informative_dim must lie in [1, data.ambient_dim]");
    }
    if (data.informative_dim < 63 && data.classes > (std::size_t{1} << data.informative_dim)) {
      fail("data.classes exceeds the hypercube vertex count");
    }
    if (data.classes < 2) fail("data.classes must be >= 2");
  }
  if (data.kind == DataKind::cifar && data.cifar_paths.empty()) fail("data.cifar_paths is empty");
  if (data.kind != DataKind::equations && data.samples == 0) fail("data.samples must be >= 1");
  if (!full_batch && batch_size == 0) fail("train.batch_size must be >= 1 or full");
  if (probe.log_every == 0) fail("probe.log_every must be >= 1");
  if (!(probe.fd_step >= 0.0)) fail("probe.fd_step must be >= 0");
  if (probe.probe_batch == 0) fail("probe.probe_batch must be >= 1");
  if (probe.eval_batch == 0) fail("probe.eval_batch must be >= 1");
  if (analysis.smooth_window == 0 || analysis.smooth_window % 2 == 0) fail("analysis.smooth_window must be odd");
  if (!(analysis.growth_threshold > analysis.plateau_threshold && analysis.plateau_threshold >= 0.0)) {
    fail("analysis thresholds need growth_threshold > plateau_threshold >= 0");
  }
  if (analysis.hysteresis == 0) fail("analysis.hysteresis must be >= 1");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  field(key).set(config, trim(value));
}

std::string get_config_value(const RunConfig& config, std::string_view key) { return field(key).get(config); }

RunConfig parse_config(std::string_view text, std::string_view origin) {
  RunConfig config;
  std::stringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    try {
      set_config_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

nlohmann::ordered_json config_to_json(const RunConfig& config) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& f : fields()) {
    if (f.key == "out_dir") continue;
    j[f.key] = f.get(config);
  }
  return j;
}

std::filesystem::path resolve_out_dir(const std::filesystem::path& out_dir) {
  if (out_dir.is_absolute()) return out_dir;
  if (const char* root = std::getenv("SLINGSHOT_OUT_ROOT"); root && *root) return std::filesystem::path(root) / out_dir;
  return out_dir;
}

}  // namespace slingshot
