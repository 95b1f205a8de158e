#include "slingshot/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "slingshot/errors.hpp"

namespace slingshot {

std::string_view optimizer_kind_name(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::sgd_momentum: return "sgd_momentum";
    case OptimizerKind::adagrad: return "adagrad";
    case OptimizerKind::rmsprop: return "rmsprop";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
  }
  return "?";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  for (auto k : {OptimizerKind::sgd, OptimizerKind::sgd_momentum, OptimizerKind::adagrad, OptimizerKind::rmsprop,
                 OptimizerKind::adam, OptimizerKind::adamw}) {
    if (optimizer_kind_name(k) == name) return k;
  }
  throw ConfigError("unknown optimizer kind '" + std::string(name) + "'");
}

void OptimizerConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("optimizer: " + msg); };
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(eps > 0.0) || !std::isfinite(eps)) fail("eps must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(alpha >= 0.0 && alpha < 1.0)) fail("alpha must lie in [0, 1)");
  if (!(momentum >= 0.0) || !std::isfinite(momentum)) fail("momentum must be >= 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be >= 0");
}

double lr_at(const OptimizerConfig& config, std::uint64_t t) {
  if (config.warmup_steps == 0 || t >= config.warmup_steps) return config.lr;
  return config.lr * (static_cast<double>(t) / static_cast<double>(config.warmup_steps));
}

template <typename T>
BasicOptimizerState<T> make_state(const OptimizerConfig& config, std::size_t size) {
  BasicOptimizerState<T> s;
  switch (config.kind) {
    case OptimizerKind::sgd:
      break;
    case OptimizerKind::sgd_momentum:
      s.m.assign(size, T(0));
      break;
    case OptimizerKind::adagrad:
    case OptimizerKind::rmsprop:
      s.v.assign(size, T(0));
      break;
    case OptimizerKind::adam:
    case OptimizerKind::adamw:
      s.m.assign(size, T(0));
      s.v.assign(size, T(0));
      break;
  }
  return s;
}

template <typename T>
std::vector<T> step(const OptimizerConfig& config, BasicOptimizerState<T>& state, std::span<T> params,
                    std::span<const T> grads, const FlatView* view) {
  const std::size_t n = params.size();
  if (grads.size() != n) {
    throw ShapeError("optimizer step: " + std::to_string(grads.size()) + " gradients for " + std::to_string(n) +
                     " parameters");
  }
  const std::uint64_t t = state.t + 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(grads[i])) {
      std::string name = view && i < view->total_len ? view->segment_at(i).name : std::string("?");
      throw NonFiniteGradientError(t, i, name);
    }
  }
  const bool need_m = config.kind == OptimizerKind::sgd_momentum || config.kind == OptimizerKind::adam ||
                      config.kind == OptimizerKind::adamw;
  const bool need_v = config.kind != OptimizerKind::sgd && config.kind != OptimizerKind::sgd_momentum;
  if ((need_m && state.m.size() != n) || (need_v && state.v.size() != n)) {
    throw ContractError("optimizer state does not match parameter count " + std::to_string(n));
  }

  const double lr_d = lr_at(config, t);
  const T lr = static_cast<T>(lr_d);
  const T eps = static_cast<T>(config.eps);
  const T wd = static_cast<T>(config.weight_decay);
  const bool coupled = config.weight_decay != 0.0 && config.kind != OptimizerKind::adamw;
  std::vector<T> u(n);

  switch (config.kind) {
    case OptimizerKind::sgd:
      for (std::size_t i = 0; i < n; ++i) {
        T g = grads[i];
        if (coupled) g = g + wd * params[i];
        u[i] = lr * g;
      }
      break;
    case OptimizerKind::sgd_momentum: {
      const T mom = static_cast<T>(config.momentum);
      for (std::size_t i = 0; i < n; ++i) {
        T g = grads[i];
        if (coupled) g = g + wd * params[i];
        state.m[i] = mom * state.m[i] + g;
        u[i] = lr * state.m[i];
      }
      break;
    }
    case OptimizerKind::adagrad:
      for (std::size_t i = 0; i < n; ++i) {
        T g = grads[i];
        if (coupled) g = g + wd * params[i];
        state.v[i] = state.v[i] + g * g;
        u[i] = lr * g / (std::sqrt(state.v[i]) + eps);
      }
      break;
    case OptimizerKind::rmsprop: {
      const T a = static_cast<T>(config.alpha);
      const T one_minus_a = static_cast<T>(1.0 - config.alpha);
      for (std::size_t i = 0; i < n; ++i) {
        T g = grads[i];
        if (coupled) g = g + wd * params[i];
        state.v[i] = a * state.v[i] + one_minus_a * g * g;
        u[i] = lr * g / (std::sqrt(state.v[i]) + eps);
      }
      break;
    }
    case OptimizerKind::adam:
    case OptimizerKind::adamw: {
      const T b1 = static_cast<T>(config.beta1);
      const T b2 = static_cast<T>(config.beta2);
      const T one_minus_b1 = static_cast<T>(1.0 - config.beta1);
      const T one_minus_b2 = static_cast<T>(1.0 - config.beta2);
      const T bc1 = static_cast<T>(1.0 - std::pow(config.beta1, static_cast<double>(t)));
      const T bc2 = static_cast<T>(1.0 - std::pow(config.beta2, static_cast<double>(t)));
      const bool decoupled = config.kind == OptimizerKind::adamw && config.weight_decay != 0.0;
      const T decay = static_cast<T>(lr_d * config.weight_decay);
      for (std::size_t i = 0; i < n; ++i) {
        T g = grads[i];
        if (coupled) g = g + wd * params[i];
        state.m[i] = b1 * state.m[i] + one_minus_b1 * g;
        state.v[i] = b2 * state.v[i] + one_minus_b2 * g * g;
        const T m_hat = state.m[i] / bc1;
        const T v_hat = state.v[i] / bc2;
        u[i] = lr * m_hat / (std::sqrt(v_hat) + eps);
        if (decoupled) params[i] = params[i] - decay * params[i];
      }
      break;
    }
  }
  for (std::size_t i = 0; i < n; ++i) params[i] = params[i] - u[i];
  state.t = t;
  return u;
}

template BasicOptimizerState<float> make_state<float>(const OptimizerConfig&, std::size_t);
template BasicOptimizerState<double> make_state<double>(const OptimizerConfig&, std::size_t);
template std::vector<float> step<float>(const OptimizerConfig&, BasicOptimizerState<float>&, std::span<float>,
                                        std::span<const float>, const FlatView*);
template std::vector<double> step<double>(const OptimizerConfig&, BasicOptimizerState<double>&, std::span<double>,
                                          std::span<const double>, const FlatView*);

}  // namespace slingshot
