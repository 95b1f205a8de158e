#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

// Central finite differences, independent of the tape.
namespace fd {

using Loss = std::function<double(std::span<const double>)>;

inline double rel_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

// d/dx_i with h = 1e-5 * (1 + |x_i|).
inline double coordinate(const Loss& f, std::vector<double> x, std::size_t i) {
  const double h = 1e-5 * (1.0 + std::abs(x[i]));
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

// Directional derivative along d with h = 1e-5 * (1 + ||x||_inf) / ||d||_2,
// so the displacement is as long as one coordinate step. Scaling by the
// infinity norm instead moves every preactivation of a wide relu network by
// ~sqrt(fan_in) coordinate steps and crosses kinks.
inline double directional(const Loss& f, std::span<const double> x, std::span<const double> d) {
  double xinf = 0.0, d2 = 0.0;
  for (double v : x) xinf = std::max(xinf, std::abs(v));
  for (double v : d) d2 += v * v;
  const double h = 1e-5 * (1.0 + xinf) / std::sqrt(d2);
  std::vector<double> xp(x.begin(), x.end()), xm(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] += h * d[i];
    xm[i] -= h * d[i];
  }
  return (f(xp) - f(xm)) / (2.0 * h);
}

struct Report {
  double directional_error = 0.0;
  double worst_coordinate_error = 0.0;
  std::size_t coordinates_checked = 0;
  double worst() const { return std::max(directional_error, worst_coordinate_error); }
};

// Compares an analytic gradient with finite differences: one random
// direction over every coordinate, then `samples` coordinates drawn among
// those with |g_i| >= 1e-3 * ||g||_inf (smaller entries sit below the
// difference quotient's noise floor).
inline Report check(const Loss& f, std::span<const double> x, std::span<const double> grad, std::size_t samples,
                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Report r;
  std::vector<double> d(x.size());
  double analytic = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    d[i] = normal(rng);
    analytic += grad[i] * d[i];
  }
  r.directional_error = rel_error(analytic, directional(f, x, d));

  double ginf = 0.0;
  for (double g : grad) ginf = std::max(ginf, std::abs(g));
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (std::abs(grad[i]) >= 1e-3 * ginf && ginf > 0.0) eligible.push_back(i);
  }
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(std::min(samples, eligible.size()));
  const std::vector<double> xv(x.begin(), x.end());
  for (std::size_t i : eligible) {
    r.worst_coordinate_error = std::max(r.worst_coordinate_error, rel_error(grad[i], coordinate(f, xv, i)));
    ++r.coordinates_checked;
  }
  return r;
}

}  // namespace fd
