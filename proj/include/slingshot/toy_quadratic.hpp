#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

namespace slingshot::toy {

// L(x) = 1/2 x^T A x + B^T x + C minimised by the elementwise-normalised
// update x <- x - mu * g / (|g| + eps) with g = A x + B.
struct QuadraticProblem {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  double c = 0.0;
  double mu = 0.1;
  double eps = 0.1;

  // Validates symmetry (1e-12) and positive definiteness; throws ContractError.
  static QuadraticProblem make(Eigen::MatrixXd a, Eigen::VectorXd b, double c, double mu, double eps);

  Eigen::VectorXd minimizer() const;  // -A^{-1} B
  Eigen::Index dim() const { return a.rows(); }
};

enum class Verdict { converged, oscillating, diverged };

const char* verdict_name(Verdict v);

struct ErrorTrajectory {
  std::vector<Eigen::VectorXd> errors;  // e_0 .. e_T (or fewer if stopped early)
  Verdict verdict = Verdict::oscillating;
  double final_norm = 0.0;  // infinity norm of the last iterate
  std::size_t steps = 0;    // iterations actually taken
};

struct SimulateOptions {
  double tol = 1e-10;
  double divergence_factor = 1e6;
  // Stops as soon as the tolerance is met instead of running all T steps.
  bool stop_when_converged = true;
  // Keep every iterate; off for long sweeps.
  bool record = true;
};

// e_{t+1} = e_t - mu * (A e_t) / (|A e_t| + eps), elementwise.
Eigen::VectorXd step_map(const QuadraticProblem& problem, const Eigen::VectorXd& e);
// The same update in parameter space, used to cross-check step_map.
Eigen::VectorXd parameter_step(const QuadraticProblem& problem, const Eigen::VectorXd& x);

ErrorTrajectory simulate(const QuadraticProblem& problem, const Eigen::VectorXd& x0, std::size_t max_steps,
                         const SimulateOptions& options = {});

struct PowerIterationResult {
  double norm = 0.0;
  std::size_t iterations = 0;
};

// Spectral norm of a symmetric matrix by power iteration from a seeded start
// vector; throws NumericalError if rtol is not met within max_iterations.
PowerIterationResult spectral_norm(const Eigen::MatrixXd& a, double rtol = 1e-10,
                                   std::size_t max_iterations = 100000, std::uint64_t seed = 0);

// (2 eps / mu) - ||A||_s; positive means every step map is a contraction.
double contraction_margin(const QuadraticProblem& problem);

// Random SPD matrix with eigenvalues drawn uniformly in [lo, hi] scaled so the
// largest equals top exactly.
Eigen::MatrixXd random_spd(std::size_t dim, double top, double lo_fraction, std::uint64_t seed);

struct SweepGrid {
  std::vector<double> spectral_norms;
  std::vector<double> mus;
  std::vector<double> epsilons;
  std::size_t dim = 4;
  std::size_t trials = 16;
  std::size_t max_steps = 100000;
  double tol = 1e-8;
  double init_scale = 1.0;
  std::uint64_t seed = 0;
};

struct SweepCell {
  double spectral_norm;
  double mu;
  double eps;
  double margin;
  double converge_fraction;
};

std::vector<SweepCell> sweep_stability(const SweepGrid& grid);
// Header: spectral_norm,mu,eps,margin,converge_fraction
void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells);

}  // namespace slingshot::toy
