#include "slingshot/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

#include "slingshot/autodiff.hpp"
#include "slingshot/checkpoint.hpp"
#include "slingshot/errors.hpp"
#include "slingshot/metric_record.hpp"
#include "slingshot/optimizers.hpp"
#include "slingshot/probes.hpp"

namespace slingshot {

std::string code_version() { return "slingshot-lab 1.0.0"; }

std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(stream) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

BasicBatch<double> labeled_batch(const data::LabeledSet& set, std::size_t begin, std::size_t count) {
  BasicBatch<double> b;
  b.rows = count;
  b.features.assign(set.features.begin() + static_cast<std::ptrdiff_t>(begin * set.dim),
                    set.features.begin() + static_cast<std::ptrdiff_t>((begin + count) * set.dim));
  b.targets.assign(set.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                   set.labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  return b;
}

BasicBatch<double> equation_batch(const data::EquationDataset& ds, const std::vector<std::size_t>& ids) {
  BasicBatch<double> b;
  b.rows = ids.size();
  for (std::size_t i : ids) {
    const auto first = ds.sequences.begin() + static_cast<std::ptrdiff_t>(i * data::kSequenceLength);
    b.tokens.insert(b.tokens.end(), first, first + data::kSequenceLength);
    b.targets.push_back(ds.answer(i));
  }
  return b;
}

template <typename T>
BasicBatch<T> convert(const BasicBatch<double>& in) {
  BasicBatch<T> out;
  out.rows = in.rows;
  out.features.assign(in.features.begin(), in.features.end());
  out.tokens = in.tokens;
  out.targets = in.targets;
  return out;
}

class LogWriter {
 public:
  LogWriter(const std::filesystem::path& path, std::ios::openmode mode) : path_(path), out_(path, mode) {
    if (!out_) throw IoError("cannot open metric log " + path.string());
  }
  // One write per row, flushed, so an interrupted run leaves whole lines.
  void row(const std::string& line) {
    const std::string buf = line + "\n";
    out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out_.flush();
    if (!out_) throw IoError("write to metric log " + path_.string() + " failed");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

// Keeps the header and every metric row up to and including step.
void truncate_log(const std::filesystem::path& path, std::uint64_t step) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metric log " + path.string() + " for resume");
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = nlohmann::json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object()) continue;
    if (row.contains("header")) {
      kept += line + "\n";
    } else if (!row.contains("event") && row.contains("step") && row["step"].is_number_unsigned() &&
               row["step"].get<std::uint64_t>() <= step) {
      kept += line + "\n";
    }
  }
  in.close();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot rewrite metric log " + path.string());
    out << kept;
  }
  std::filesystem::rename(tmp, path);
}

struct DataOrder {
  std::mt19937_64 rng;
  std::vector<std::size_t> permutation;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;

  std::vector<std::size_t> next(std::size_t rows, std::size_t batch) {
    if (cursor == 0) {
      permutation.resize(rows);
      std::iota(permutation.begin(), permutation.end(), std::size_t{0});
      std::shuffle(permutation.begin(), permutation.end(), rng);
    }
    const std::size_t count = std::min(batch, rows - cursor);
    std::vector<std::size_t> out(permutation.begin() + static_cast<std::ptrdiff_t>(cursor),
                                 permutation.begin() + static_cast<std::ptrdiff_t>(cursor + count));
    cursor += count;
    if (cursor >= rows) {
      cursor = 0;
      ++epoch;
    }
    return out;
  }

  DataOrderState save() const {
    DataOrderState s;
    std::ostringstream out;
    out << rng;
    s.rng = out.str();
    s.permutation.assign(permutation.begin(), permutation.end());
    s.cursor = cursor;
    s.epoch = epoch;
    return s;
  }

  void load(const DataOrderState& s) {
    std::istringstream in(s.rng);
    in >> rng;
    if (!in) throw FormatError("checkpoint holds an unreadable generator state");
    permutation.assign(s.permutation.begin(), s.permutation.end());
    cursor = static_cast<std::size_t>(s.cursor);
    epoch = s.epoch;
  }
};

nlohmann::ordered_json resume_key(nlohmann::ordered_json config) {
  config.erase("train.max_steps");
  return config;
}

template <typename T>
class Trainer {
 public:
  Trainer(const RunConfig& config, const RunOptions& options)
      : cfg_(config), options_(options), resolved_(resolve_data(config)), spec_(resolved_.spec) {
    dir_ = resolve_out_dir(cfg_.out_dir);
    log_path_ = dir_ / kLogFileName;
    ckpt_path_ = dir_ / kCheckpointFileName;
    train_ = convert<T>(resolved_.train);
    val_ = convert<T>(resolved_.val);

    std::mt19937_64 probe_rng(derive_seed(cfg_.seed, SeedStream::probe));
    std::vector<std::size_t> rows(train_.rows);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::shuffle(rows.begin(), rows.end(), probe_rng);
    rows.resize(std::min(cfg_.probe.probe_batch, rows.size()));
    probe_ = gather_rows(spec_, train_, rows);

    params_ = build<T>(spec_, derive_seed(cfg_.seed, SeedStream::init));
    init_ = params_;
    std::tie(flat_, view_) = flatten_params(params_);
    state_ = make_state<T>(cfg_.optimizer, view_.total_len);
    order_.rng.seed(derive_seed(cfg_.seed, SeedStream::order));
  }

  RunResult run() {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create run directory " + dir_.string() + ": " + ec.message());

    RunResult result;
    result.out_dir = dir_;
    result.log_path = log_path_;
    result.checkpoint_path = ckpt_path_;
    result.parameter_count = view_.total_len;

    std::uint64_t step = 0;
    std::unique_ptr<LogWriter> log;
    if (options_.resume) {
      step = restore();
      truncate_log(log_path_, step);
      log = std::make_unique<LogWriter>(log_path_, std::ios::app);
    } else {
      log = std::make_unique<LogWriter>(log_path_, std::ios::trunc);
      log->row(header().dump());
      log->row(to_ndjson_line(record(0, std::vector<std::optional<double>>(spec_.depth), std::nullopt)));
    }

    const std::size_t batch = cfg_.full_batch ? train_.rows : std::min(cfg_.batch_size, train_.rows);
    while (step < cfg_.max_steps) {
      if (options_.stop_at && step >= *options_.stop_at) break;
      const std::uint64_t t = step + 1;
      const bool logged = t % cfg_.probe.log_every == 0;
      const std::uint64_t log_index = t / cfg_.probe.log_every;
      const bool probe_sharpness =
          logged && cfg_.probe.sharpness_every > 0 && log_index % cfg_.probe.sharpness_every == 0;

      LossAndGradient<T> lg;
      if (cfg_.full_batch) {
        lg = loss_and_gradient(spec_, params_, view_, train_);
      } else {
        const auto rows = order_.next(train_.rows, batch);
        lg = loss_and_gradient(spec_, params_, view_, gather_rows(spec_, train_, rows));
      }
      if (!std::isfinite(static_cast<double>(lg.loss))) return abort(result, *log, t, "non-finite training loss");

      std::vector<BasicTensor<T>> before;
      if (logged) before = trace(spec_, params_, probe_).features;
      std::vector<T> x_prev;
      if (probe_sharpness) x_prev = flat_;

      std::vector<T> u;
      try {
        u = step_optimizer(lg.gradient);
      } catch (const NonFiniteGradientError& e) {
        return abort(result, *log, t, e.what());
      }
      unflatten_into<T>(flat_, view_, params_);
      step = t;

      if (logged) {
        const auto after = trace(spec_, params_, probe_).features;
        std::optional<double> sharp;
        if (probe_sharpness) sharp = measure_sharpness(x_prev, u);
        MetricRecord rec = record(t, feature_change(before, after), sharp);
        if (!std::isfinite(rec.train_loss)) {
          log->row(to_ndjson_line(rec));
          return abort(result, *log, t, "non-finite evaluation loss");
        }
        log->row(to_ndjson_line(rec));
      }
      if (cfg_.checkpoint_every > 0 && t % cfg_.checkpoint_every == 0) save(t);
    }
    save(step);
    result.last_step = step;
    return result;
  }

 private:
  std::vector<T> step_optimizer(const std::vector<T>& grad) {
    return step<T>(cfg_.optimizer, state_, std::span<T>(flat_), std::span<const T>(grad), &view_);
  }

  RunResult abort(RunResult result, LogWriter& log, std::uint64_t t, const std::string& reason) {
    nlohmann::ordered_json row;
    row["event"] = "abort";
    row["step"] = t;
    row["reason"] = reason;
    log.row(row.dump());
    result.aborted = true;
    result.abort_reason = reason;
    result.last_step = t;
    return result;
  }

  nlohmann::ordered_json header() const {
    nlohmann::ordered_json model;
    model["kind"] = std::string(model_kind_name(spec_.kind));
    model["depth"] = spec_.depth;
    model["width"] = spec_.width;
    model["heads"] = spec_.heads;
    model["vocab"] = spec_.vocab;
    model["seq_len"] = spec_.seq_len;
    model["input_dim"] = spec_.input_dim;
    model["num_classes"] = spec_.num_classes;
    model["output_dim"] = spec_.output_dim();
    nlohmann::ordered_json h;
    h["format"] = 1;
    h["code_version"] = code_version();
    h["config"] = config_to_json(cfg_);
    h["model"] = std::move(model);
    h["parameter_count"] = view_.total_len;
    h["train_rows"] = train_.rows;
    h["val_rows"] = val_.rows;
    nlohmann::ordered_json row;
    row["header"] = std::move(h);
    return row;
  }

  MetricRecord record(std::uint64_t t, std::vector<std::optional<double>> changes, std::optional<double> sharp) const {
    MetricRecord r;
    r.step = t;
    r.lr = lr_at(cfg_.optimizer, std::max<std::uint64_t>(t, 1));
    const Evaluation tr = evaluate(spec_, params_, train_, cfg_.probe.eval_batch);
    const Evaluation va = evaluate(spec_, params_, val_, cfg_.probe.eval_batch);
    r.train_loss = tr.loss;
    r.train_acc = tr.accuracy;
    r.val_loss = va.loss;
    r.val_acc = va.accuracy;
    r.last_layer_norm = last_layer_norm(params_);
    r.feature_change = std::move(changes);
    r.sharpness = sharp;
    const CosineDistances cd = cosine_distances(params_, init_);
    r.cos_dist_repr = cd.repr;
    r.cos_dist_clf = cd.clf;
    return r;
  }

  // Full training-set gradient, accumulated over eval-sized chunks.
  std::vector<double> full_gradient(std::span<const double> x) const {
    std::vector<T> xt(x.begin(), x.end());
    const BasicParamSet<T> p = unflatten<T>(xt, view_);
    std::vector<double> g(view_.total_len, 0.0);
    const std::size_t chunk = cfg_.probe.eval_batch;
    for (std::size_t begin = 0; begin < train_.rows; begin += chunk) {
      const std::size_t count = std::min(chunk, train_.rows - begin);
      const auto lg = count == train_.rows ? loss_and_gradient(spec_, p, view_, train_)
                                           : loss_and_gradient(spec_, p, view_, batch_rows(spec_, train_, begin, count));
      const double w = static_cast<double>(count) / static_cast<double>(train_.rows);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += w * static_cast<double>(lg.gradient[i]);
    }
    return g;
  }

  std::optional<double> measure_sharpness(const std::vector<T>& x_prev, const std::vector<T>& u) const {
    std::vector<double> x(x_prev.begin(), x_prev.end());
    std::vector<double> ud(u.begin(), u.end());
    double nu = 0.0;
    for (double v : ud) nu += v * v;
    if (!(nu > 0.0)) return std::nullopt;
    const double h = cfg_.probe.fd_step > 0.0 ? cfg_.probe.fd_step : default_fd_step(x);
    const double s = sharpness([this](std::span<const double> at) { return full_gradient(at); }, x, ud, h);
    if (!std::isfinite(s)) return std::nullopt;
    return s;
  }

  void save(std::uint64_t step) const {
    Checkpoint ck;
    ck.step = step;
    ck.config = config_to_json(cfg_);
    ck.precision = std::string(precision_name(cfg_.precision));
    ck.view = view_;
    ck.params.assign(flat_.begin(), flat_.end());
    std::vector<T> init_flat(view_.total_len);
    flatten_into<T>(init_, init_flat);
    ck.initial_params.assign(init_flat.begin(), init_flat.end());
    ck.optimizer_t = state_.t;
    ck.m.assign(state_.m.begin(), state_.m.end());
    ck.v.assign(state_.v.begin(), state_.v.end());
    ck.order = order_.save();
    save_checkpoint(ckpt_path_, ck);
  }

  std::uint64_t restore() {
    const Checkpoint ck = load_checkpoint(ckpt_path_);
    if (resume_key(ck.config) != resume_key(config_to_json(cfg_))) {
      throw ConfigError("checkpoint in " + dir_.string() + " was written with different settings");
    }
    if (ck.precision != precision_name(cfg_.precision)) throw ConfigError("checkpoint precision differs from train.precision");
    if (!(ck.view == view_)) throw FormatError("checkpoint parameter layout differs from the model");
    flat_.assign(ck.params.begin(), ck.params.end());
    unflatten_into<T>(flat_, view_, params_);
    std::vector<T> init_flat(ck.initial_params.begin(), ck.initial_params.end());
    unflatten_into<T>(init_flat, view_, init_);
    state_.t = ck.optimizer_t;
    state_.m.assign(ck.m.begin(), ck.m.end());
    state_.v.assign(ck.v.begin(), ck.v.end());
    const BasicOptimizerState<T> shape = make_state<T>(cfg_.optimizer, view_.total_len);
    if (state_.m.size() != shape.m.size() || state_.v.size() != shape.v.size()) {
      throw FormatError("checkpoint optimizer state does not match optimizer.kind");
    }
    order_.load(ck.order);
    return ck.step;
  }

  RunConfig cfg_;
  RunOptions options_;
  ResolvedData resolved_;
  ModelSpec spec_;
  std::filesystem::path dir_, log_path_, ckpt_path_;
  BasicBatch<T> train_, val_, probe_;
  BasicParamSet<T> params_, init_;
  FlatView view_;
  std::vector<T> flat_;
  BasicOptimizerState<T> state_;
  DataOrder order_;
};

}  // namespace

ResolvedData resolve_data(const RunConfig& config) {
  config.validate();
  ResolvedData out;
  out.spec = config.model;
  switch (config.data.kind) {
    case DataKind::equations: {
      const auto ds = data::split(data::enumerate(config.data.op), config.data.train_fraction, config.data.seed);
      out.spec.vocab = ds.vocab_size;
      out.spec.seq_len = data::kSequenceLength;
      out.spec.num_classes = ds.vocab_size;
      out.train = equation_batch(ds, ds.train_ids);
      out.val = equation_batch(ds, ds.val_ids);
      break;
    }
    case DataKind::synthetic: {
      data::SyntheticSpec s;
      s.ambient_dim = config.data.ambient_dim;
      s.informative_dim = config.data.informative_dim;
      s.classes = config.data.classes;
      s.samples_per_split = config.data.samples;
      s.seed = config.data.seed;
      const auto d = data::make_synthetic(s);
      out.spec.input_dim = s.ambient_dim;
      out.spec.num_classes = s.classes;
      out.train = labeled_batch(d.train, 0, d.train.rows);
      out.val = labeled_batch(d.val, 0, d.val.rows);
      break;
    }
    case DataKind::cifar: {
      const auto subset = data::load_cifar_binary(config.data.cifar_paths, 2 * config.data.samples, config.data.seed);
      out.spec.input_dim = data::kCifarImageBytes;
      out.spec.num_classes = data::kCifarClasses;
      out.train = labeled_batch(subset.images, 0, config.data.samples);
      out.val = labeled_batch(subset.images, config.data.samples, config.data.samples);
      break;
    }
  }
  out.spec.validate();
  return out;
}

RunResult run(const RunConfig& config, const RunOptions& options) {
  if (config.precision == Precision::float32) return Trainer<float>(config, options).run();
  return Trainer<double>(config, options).run();
}

}  // namespace slingshot
