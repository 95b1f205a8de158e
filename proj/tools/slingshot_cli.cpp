#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "slingshot/analysis.hpp"
#include "slingshot/config.hpp"
#include "slingshot/datasets.hpp"
#include "slingshot/errors.hpp"
#include "slingshot/harness.hpp"
#include "slingshot/sweep.hpp"
#include "slingshot/toy_quadratic.hpp"

namespace {

using namespace slingshot;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;
constexpr int kExitOther = 1;

// Leftover "--key value" or "--key=value" arguments as config overrides.
std::vector<std::pair<std::string, std::string>> overrides(std::vector<std::string> extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.size() == 2) throw ConfigError("unexpected argument '" + arg + "'");
    std::string key = arg.substr(2);
    if (const auto eq = key.find('='); eq != std::string::npos) {
      out.emplace_back(key.substr(0, eq), key.substr(eq + 1));
      continue;
    }
    if (i + 1 >= extras.size()) throw ConfigError("override --" + key + " needs a value");
    out.emplace_back(key, extras[++i]);
  }
  return out;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& extras) {
  RunConfig config = path.empty() ? RunConfig{} : load_config(path);
  for (const auto& [k, v] : overrides(extras)) set_config_value(config, k, v);
  config.validate();
  return config;
}

phase::PhaseConfig analysis_config(const std::string& path, const std::vector<std::string>& extras) {
  RunConfig config = path.empty() ? RunConfig{} : load_config(path);
  for (const auto& [k, v] : overrides(extras)) {
    if (k.rfind("analysis.", 0) != 0) throw ConfigError("only analysis.* overrides apply here, got --" + k);
    set_config_value(config, k, v);
  }
  config.validate();
  return config.analysis;
}

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError(std::string(what) + ": cannot parse '" + item + "' as a number");
    }
  }
  if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
  return out;
}

void write_labeled(std::ostream& out, const char* split, const data::LabeledSet& set) {
  for (std::size_t r = 0; r < set.rows; ++r) {
    out << split << "," << set.labels[r];
    for (std::size_t c = 0; c < set.dim; ++c) out << "," << format_double(set.features[r * set.dim + c]);
    out << "\n";
  }
}

int generate_data(const RunConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  if (config.data.kind == DataKind::equations) {
    const auto ds = data::split(data::enumerate(config.data.op), config.data.train_fraction, config.data.seed);
    std::ofstream eq(dir / "equations.txt");
    data::write_equations(eq, ds);
    std::ofstream sp(dir / "split.csv");
    sp << "index,split\n";
    for (auto i : ds.train_ids) sp << i << ",train\n";
    for (auto i : ds.val_ids) sp << i << ",val\n";
    if (!eq || !sp) throw IoError("cannot write dataset files in " + dir.string());
    std::cout << "wrote " << ds.size() << " equations (" << ds.train_ids.size() << " train, " << ds.val_ids.size()
              << " val) to " << dir.string() << "\n";
    return kExitOk;
  }
  std::ofstream out(dir / "dataset.csv");
  out << "split,label,features...\n";
  std::size_t train = 0, val = 0;
  if (config.data.kind == DataKind::synthetic) {
    const auto d = data::make_synthetic({config.data.ambient_dim, config.data.informative_dim, config.data.classes,
                                         config.data.samples, config.data.seed});
    write_labeled(out, "train", d.train);
    write_labeled(out, "val", d.val);
    train = d.train.rows;
    val = d.val.rows;
  } else {
    const auto s = data::load_cifar_binary(config.data.cifar_paths, 2 * config.data.samples, config.data.seed);
    data::LabeledSet halves[2];
    for (int h = 0; h < 2; ++h) {
      auto& part = halves[h];
      part.dim = s.images.dim;
      part.rows = config.data.samples;
      const std::size_t off = h * config.data.samples;
      part.features.assign(s.images.features.begin() + off * part.dim,
                           s.images.features.begin() + (off + part.rows) * part.dim);
      part.labels.assign(s.images.labels.begin() + off, s.images.labels.begin() + off + part.rows);
    }
    write_labeled(out, "train", halves[0]);
    write_labeled(out, "val", halves[1]);
    train = val = config.data.samples;
  }
  if (!out) throw IoError("cannot write " + (dir / "dataset.csv").string());
  std::cout << "wrote " << train << " train and " << val << " val rows to " << (dir / "dataset.csv").string() << "\n";
  return kExitOk;
}

int print_analysis(const std::vector<LogAnalysis>& results) {
  bool failed = false;
  for (const auto& a : results) {
    if (!a.report) {
      failed = true;
      std::cerr << a.log.string() << ": " << a.error << "\n";
      continue;
    }
    const auto& r = *a.report;
    std::cout << a.log.string() << ": cycles=" << r.cycles.size() << " spike_cycles=" << r.spike_cycles
              << " grokked=" << (r.verdict.grokked ? "true" : "false") << " best_val_acc=" << format_double(r.best_val_acc)
              << "\n";
    for (const auto& p : a.outputs) std::cout << "  " << p.string() << "\n";
  }
  return failed ? kExitIo : kExitOk;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Training-dynamics lab for adaptive optimizers"};
  app.require_subcommand(1);
  std::string config_path;

  auto* gen = app.add_subcommand("generate-data", "Materialize the configured dataset");
  std::string gen_dir = "data";
  gen->add_option("--config", config_path, "Config file");
  gen->add_option("--output", gen_dir, "Output directory");
  gen->allow_extras();

  auto* train = app.add_subcommand("train", "Run one training job");
  bool resume = false;
  std::optional<std::uint64_t> stop_at;
  train->add_option("--config", config_path, "Config file");
  train->add_flag("--resume", resume, "Continue from out_dir's checkpoint");
  train->add_option("--stop-at", stop_at, "Checkpoint and stop after this step");
  train->allow_extras();

  auto* sw = app.add_subcommand("sweep", "Run every cell of a sweep file");
  std::string sweep_path;
  sw->add_option("spec", sweep_path, "Sweep file")->required();
  sw->allow_extras();

  auto* an = app.add_subcommand("analyze", "Phase report and plots for a log or directory of logs");
  std::string target;
  std::string out_dir;
  bool no_plots = false;
  an->add_option("path", target, "Metric log or directory")->required();
  an->add_option("--out", out_dir, "Output directory");
  an->add_option("--config", config_path, "Config file supplying analysis.*");
  an->add_flag("--no-plots", no_plots, "Skip SVG output");
  an->allow_extras();

  auto* pl = app.add_subcommand("plot", "SVG plots for one metric log");
  std::string plot_log_path;
  pl->add_option("log", plot_log_path, "Metric log")->required();
  pl->add_option("--out", out_dir, "Output directory");
  pl->add_option("--config", config_path, "Config file supplying analysis.*");
  pl->allow_extras();

  auto* toy = app.add_subcommand("toy", "Quadratic model of the adaptive update");
  toy->require_subcommand(1);
  auto* sim = toy->add_subcommand("simulate", "Iterate the error map on one random problem");
  std::size_t dim = 4, steps = 100000;
  double spectral = 0.5, mu = 0.1, eps = 0.1, init_scale = 1.0, tol = 1e-8;
  std::uint64_t seed = 0;
  sim->add_option("--dim", dim, "Problem dimension")->check(CLI::PositiveNumber);
  sim->add_option("--spectral-norm", spectral, "Largest eigenvalue of A")->check(CLI::PositiveNumber);
  sim->add_option("--mu", mu, "Learning rate")->check(CLI::PositiveNumber);
  sim->add_option("--eps", eps, "Stabilizer")->check(CLI::PositiveNumber);
  sim->add_option("--steps", steps, "Iteration budget");
  sim->add_option("--tol", tol, "Convergence tolerance on the error infinity norm");
  sim->add_option("--init-scale", init_scale, "Initial error scale");
  sim->add_option("--seed", seed, "Problem seed");

  auto* tsw = toy->add_subcommand("sweep", "Convergence fraction over a grid");
  std::string norms_text = "0.5,1,2,4", mus_text = "0.1", eps_text = "0.1", csv_path;
  std::size_t trials = 16;
  tsw->add_option("--spectral-norms", norms_text, "Comma-separated list");
  tsw->add_option("--mus", mus_text, "Comma-separated list");
  tsw->add_option("--eps", eps_text, "Comma-separated list");
  tsw->add_option("--dim", dim, "Problem dimension")->check(CLI::PositiveNumber);
  tsw->add_option("--trials", trials, "Problems per cell")->check(CLI::PositiveNumber);
  tsw->add_option("--steps", steps, "Iteration budget");
  tsw->add_option("--tol", tol, "Convergence tolerance");
  tsw->add_option("--init-scale", init_scale, "Initial error scale");
  tsw->add_option("--seed", seed, "Sweep seed");
  tsw->add_option("--output", csv_path, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (gen->parsed()) return generate_data(load_run_config(config_path, gen->remaining()), gen_dir);

  if (train->parsed()) {
    const RunConfig config = load_run_config(config_path, train->remaining());
    const RunResult r = run(config, RunOptions{resume, stop_at});
    std::cout << "log: " << r.log_path.string() << "\ncheckpoint: " << r.checkpoint_path.string()
              << "\nlast step: " << r.last_step << "\nparameters: " << r.parameter_count << "\n";
    if (r.aborted) {
      std::cerr << "aborted: " << r.abort_reason << "\n";
      return kExitNumerical;
    }
    return kExitOk;
  }

  if (sw->parsed()) {
    SweepSpec spec = load_sweep(sweep_path);
    for (const auto& [k, v] : overrides(sw->remaining())) set_config_value(spec.base, k, v);
    const SweepResult r = sweep(spec);
    std::size_t failed = 0;
    for (const auto& row : r.rows) {
      std::cout << row.cell << ": " << row.status << " cycles=" << row.cycles << "\n";
      if (row.status != "ok") ++failed;
    }
    std::cout << "summary: " << r.summary.string() << " (" << r.rows.size() << " cells, " << failed << " not ok)\n";
    return kExitOk;
  }

  if (an->parsed()) {
    const auto cfg = analysis_config(config_path, an->remaining());
    std::optional<std::filesystem::path> out;
    if (!out_dir.empty()) out = out_dir;
    return print_analysis(analyze_path(target, out, cfg, !no_plots));
  }

  if (pl->parsed()) {
    const auto cfg = analysis_config(config_path, pl->remaining());
    const std::filesystem::path log = plot_log_path;
    const auto dir = out_dir.empty() ? log.parent_path() : std::filesystem::path(out_dir);
    for (const auto& p : plot_log(log, dir.empty() ? "." : dir, cfg)) std::cout << p.string() << "\n";
    return kExitOk;
  }

  if (sim->parsed()) {
    const Eigen::MatrixXd a = toy::random_spd(dim, spectral, 0.1, seed);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal;
    Eigen::VectorXd b(static_cast<Eigen::Index>(dim)), x0(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = normal(rng);
    auto problem = toy::QuadraticProblem::make(a, b, 0.0, mu, eps);
    for (Eigen::Index i = 0; i < x0.size(); ++i) x0[i] = init_scale * normal(rng);
    x0 += problem.minimizer();
    toy::SimulateOptions options;
    options.tol = tol;
    options.record = false;
    const auto traj = toy::simulate(problem, x0, steps, options);
    std::cout << "spectral_norm=" << format_double(spectral) << " bound=" << format_double(2 * eps / mu)
              << " margin=" << format_double(toy::contraction_margin(problem)) << " verdict=" << toy::verdict_name(traj.verdict)
              << " steps=" << traj.steps << " final_error=" << format_double(traj.final_norm) << "\n";
    return kExitOk;
  }

  if (tsw->parsed()) {
    toy::SweepGrid grid;
    grid.spectral_norms = parse_list(norms_text, "--spectral-norms");
    grid.mus = parse_list(mus_text, "--mus");
    grid.epsilons = parse_list(eps_text, "--eps");
    grid.dim = dim;
    grid.trials = trials;
    grid.max_steps = steps;
    grid.tol = tol;
    grid.init_scale = init_scale;
    grid.seed = seed;
    const auto cells = toy::sweep_stability(grid);
    if (csv_path.empty()) {
      toy::write_sweep_csv(std::cout, cells);
    } else {
      std::ofstream out(csv_path);
      toy::write_sweep_csv(out, cells);
      if (!out) throw IoError("cannot write " + csv_path);
    }
    return kExitOk;
  }
  return kExitOther;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
}
