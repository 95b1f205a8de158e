#include "slingshot/toy_quadratic.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>

#include "slingshot/errors.hpp"

namespace slingshot::toy {

QuadraticProblem QuadraticProblem::make(Eigen::MatrixXd a, Eigen::VectorXd b, double c, double mu, double eps) {
  if (a.rows() != a.cols() || a.rows() == 0) throw ContractError("quadratic: A must be square and nonempty");
  if (b.size() != a.rows()) throw ContractError("quadratic: B length does not match A");
  if (!(mu > 0.0) || !(eps > 0.0)) throw ContractError("quadratic: mu and eps must be positive");
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw ContractError("quadratic: A is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw ContractError("quadratic: A is not positive definite");
  QuadraticProblem p;
  p.a = std::move(a);
  p.b = std::move(b);
  p.c = c;
  p.mu = mu;
  p.eps = eps;
  return p;
}

Eigen::VectorXd QuadraticProblem::minimizer() const { return -a.ldlt().solve(b); }

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::converged: return "converged";
    case Verdict::oscillating: return "oscillating";
    case Verdict::diverged: return "diverged";
  }
  return "?";
}

Eigen::VectorXd step_map(const QuadraticProblem& problem, const Eigen::VectorXd& e) {
  const Eigen::VectorXd ae = problem.a * e;
  return e - problem.mu * (ae.array() / (ae.array().abs() + problem.eps)).matrix();
}

Eigen::VectorXd parameter_step(const QuadraticProblem& problem, const Eigen::VectorXd& x) {
  const Eigen::VectorXd g = problem.a * x + problem.b;
  return x - problem.mu * (g.array() / (g.array().abs() + problem.eps)).matrix();
}

ErrorTrajectory simulate(const QuadraticProblem& problem, const Eigen::VectorXd& x0, std::size_t max_steps,
                         const SimulateOptions& options) {
  ErrorTrajectory traj;
  Eigen::VectorXd e = x0 - problem.minimizer();
  const double start = e.norm();
  if (options.record) traj.errors.push_back(e);

  const auto finish = [&](Verdict v, std::size_t steps) {
    traj.verdict = v;
    traj.steps = steps;
    traj.final_norm = e.size() ? e.cwiseAbs().maxCoeff() : 0.0;
    if (!options.record) traj.errors.push_back(e);
    return traj;
  };

  if (e.cwiseAbs().maxCoeff() < options.tol && options.stop_when_converged) return finish(Verdict::converged, 0);
  for (std::size_t t = 1; t <= max_steps; ++t) {
    e = step_map(problem, e);
    if (options.record) traj.errors.push_back(e);
    if (!e.allFinite() || e.norm() > options.divergence_factor * std::max(start, 1e-300)) {
      return finish(Verdict::diverged, t);
    }
    if (options.stop_when_converged && e.cwiseAbs().maxCoeff() < options.tol) return finish(Verdict::converged, t);
  }
  return finish(e.cwiseAbs().maxCoeff() < options.tol ? Verdict::converged : Verdict::oscillating, max_steps);
}

PowerIterationResult spectral_norm(const Eigen::MatrixXd& a, double rtol, std::size_t max_iterations,
                                   std::uint64_t seed) {
  if (a.rows() != a.cols() || a.rows() == 0) throw ContractError("spectral_norm: matrix must be square and nonempty");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(a.rows());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
  v.normalize();

  double estimate = 0.0;
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    Eigen::VectorXd w = a * v;
    const double next = w.norm();
    if (next == 0.0) return {0.0, it};
    if (it > 1 && std::abs(next - estimate) <= rtol * next) return {next, it};
    estimate = next;
    v = w / next;
  }
  throw NumericalError("spectral_norm: power iteration did not reach rtol " + std::to_string(rtol) + " within " +
                       std::to_string(max_iterations) + " iterations");
}

double contraction_margin(const QuadraticProblem& problem) {
  return 2.0 * problem.eps / problem.mu - spectral_norm(problem.a).norm;
}

Eigen::MatrixXd random_spd(std::size_t dim, double top, double lo_fraction, std::uint64_t seed) {
  if (dim == 0 || !(top > 0.0) || !(lo_fraction > 0.0 && lo_fraction <= 1.0)) {
    throw ContractError("random_spd: need dim >= 1, top > 0, lo_fraction in (0,1]");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(lo_fraction, 1.0);
  const auto n = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = normal(rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  Eigen::VectorXd eig(n);
  for (Eigen::Index i = 0; i < n; ++i) eig(i) = unif(rng);
  eig(0) = 1.0;
  Eigen::MatrixXd a = q * (top * eig).asDiagonal() * q.transpose();
  return 0.5 * (a + a.transpose());
}

std::vector<SweepCell> sweep_stability(const SweepGrid& grid) {
  if (grid.spectral_norms.empty() || grid.mus.empty() || grid.epsilons.empty()) {
    throw ContractError("sweep_stability: every grid axis must be nonempty");
  }
  if (grid.trials == 0) throw ContractError("sweep_stability: trial count must be positive");
  std::vector<SweepCell> cells;
  std::uint64_t cell_seed = grid.seed;
  SimulateOptions opts;
  opts.tol = grid.tol;
  opts.record = false;
  for (double s : grid.spectral_norms) {
    for (double mu : grid.mus) {
      for (double eps : grid.epsilons) {
        ++cell_seed;
        const Eigen::MatrixXd a = random_spd(grid.dim, s, 0.25, cell_seed);
        const auto problem = QuadraticProblem::make(a, Eigen::VectorXd::Zero(a.rows()), 0.0, mu, eps);
        std::mt19937_64 rng(cell_seed * 7919U + 1U);
        std::uniform_real_distribution<double> unif(-grid.init_scale, grid.init_scale);
        std::size_t converged = 0;
        for (std::size_t trial = 0; trial < grid.trials; ++trial) {
          Eigen::VectorXd x0(a.rows());
          for (Eigen::Index i = 0; i < x0.size(); ++i) x0(i) = unif(rng);
          if (simulate(problem, x0, grid.max_steps, opts).verdict == Verdict::converged) ++converged;
        }
        cells.push_back({s, mu, eps, contraction_margin(problem),
                         static_cast<double>(converged) / static_cast<double>(grid.trials)});
      }
    }
  }
  return cells;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells) {
  out << "spectral_norm,mu,eps,margin,converge_fraction\n";
  out << std::setprecision(17);
  for (const auto& c : cells) {
    out << c.spectral_norm << ',' << c.mu << ',' << c.eps << ',' << c.margin << ',' << c.converge_fraction << '\n';
  }
}

}  // namespace slingshot::toy
