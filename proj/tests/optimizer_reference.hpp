#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

// Straight-line single-step reference for each optimizer kind, written from
// the update formulas alone. Shares no code with the library; the only
// agreement is on the documented scalar evaluation order.
namespace ref {

template <typename T>
struct Step {
  std::vector<T> x, m, v, u;
};

struct Hyper {
  double lr = 1e-3;
  double eps = 1e-8;
  double beta1 = 0.9, beta2 = 0.98, alpha = 0.99, momentum = 0.9, weight_decay = 0.0;
  std::uint64_t warmup = 10;
};

inline double ramp(const Hyper& h, std::uint64_t t) {
  if (h.warmup == 0) return h.lr;
  const double frac = static_cast<double>(t) / static_cast<double>(h.warmup);
  return frac < 1.0 ? h.lr * frac : h.lr;
}

template <typename T>
Step<T> sgd(const Hyper& h, std::uint64_t t, std::vector<T> x, const std::vector<T>& g) {
  const T lr = T(ramp(h, t)), wd = T(h.weight_decay);
  Step<T> s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T gi = h.weight_decay != 0.0 ? g[i] + wd * x[i] : g[i];
    const T ui = lr * gi;
    s.u.push_back(ui);
    x[i] = x[i] - ui;
  }
  s.x = x;
  return s;
}

template <typename T>
Step<T> sgd_momentum(const Hyper& h, std::uint64_t t, std::vector<T> x, std::vector<T> buf, const std::vector<T>& g) {
  const T lr = T(ramp(h, t)), wd = T(h.weight_decay), mu = T(h.momentum);
  Step<T> s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T gi = h.weight_decay != 0.0 ? g[i] + wd * x[i] : g[i];
    buf[i] = mu * buf[i] + gi;
    const T ui = lr * buf[i];
    s.u.push_back(ui);
    x[i] = x[i] - ui;
  }
  s.x = x;
  s.m = buf;
  return s;
}

template <typename T>
Step<T> adagrad(const Hyper& h, std::uint64_t t, std::vector<T> x, std::vector<T> acc, const std::vector<T>& g) {
  const T lr = T(ramp(h, t)), wd = T(h.weight_decay), eps = T(h.eps);
  Step<T> s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T gi = h.weight_decay != 0.0 ? g[i] + wd * x[i] : g[i];
    acc[i] = acc[i] + gi * gi;
    const T ui = (lr * gi) / (std::sqrt(acc[i]) + eps);
    s.u.push_back(ui);
    x[i] = x[i] - ui;
  }
  s.x = x;
  s.v = acc;
  return s;
}

template <typename T>
Step<T> rmsprop(const Hyper& h, std::uint64_t t, std::vector<T> x, std::vector<T> sq, const std::vector<T>& g) {
  const T lr = T(ramp(h, t)), wd = T(h.weight_decay), eps = T(h.eps);
  const T keep = T(h.alpha), take = T(1.0 - h.alpha);
  Step<T> s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T gi = h.weight_decay != 0.0 ? g[i] + wd * x[i] : g[i];
    sq[i] = keep * sq[i] + (take * gi) * gi;
    const T ui = (lr * gi) / (std::sqrt(sq[i]) + eps);
    s.u.push_back(ui);
    x[i] = x[i] - ui;
  }
  s.x = x;
  s.v = sq;
  return s;
}

template <typename T>
Step<T> adam(const Hyper& h, std::uint64_t t, std::vector<T> x, std::vector<T> m, std::vector<T> v,
             const std::vector<T>& g, bool decoupled) {
  const double lr_d = ramp(h, t);
  const T lr = T(lr_d), wd = T(h.weight_decay), eps = T(h.eps);
  const T b1 = T(h.beta1), b2 = T(h.beta2), c1 = T(1.0 - h.beta1), c2 = T(1.0 - h.beta2);
  const T bc1 = T(1.0 - std::pow(h.beta1, double(t))), bc2 = T(1.0 - std::pow(h.beta2, double(t)));
  const T shrink = T(lr_d * h.weight_decay);
  Step<T> s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T gi = !decoupled && h.weight_decay != 0.0 ? g[i] + wd * x[i] : g[i];
    m[i] = b1 * m[i] + c1 * gi;
    v[i] = b2 * v[i] + (c2 * gi) * gi;
    const T ui = (lr * (m[i] / bc1)) / (std::sqrt(v[i] / bc2) + eps);
    s.u.push_back(ui);
    if (decoupled && h.weight_decay != 0.0) x[i] = x[i] - shrink * x[i];
    x[i] = x[i] - ui;
  }
  s.x = x;
  s.m = m;
  s.v = v;
  return s;
}

}  // namespace ref
