#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "slingshot/params.hpp"

namespace slingshot {

enum class OptimizerKind { sgd, sgd_momentum, adagrad, rmsprop, adam, adamw };

std::string_view optimizer_kind_name(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double eps = 1e-8;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double alpha = 0.99;  // rmsprop squared-gradient decay
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t warmup_steps = 10;

  // Throws ConfigError.
  void validate() const;
};

// lr * min(1, t / warmup_steps); t counts from 1.
double lr_at(const OptimizerConfig& config, std::uint64_t t);

template <typename T>
struct BasicOptimizerState {
  std::uint64_t t = 0;
  std::vector<T> m;  // first moment, or the momentum buffer
  std::vector<T> v;  // second moment
  friend bool operator==(const BasicOptimizerState&, const BasicOptimizerState&) = default;
};

using OptimizerState = BasicOptimizerState<double>;

template <typename T>
BasicOptimizerState<T> make_state(const OptimizerConfig& config, std::size_t size);

// One update in place; returns u with x_new = x - u (for adamw the decoupled
// decay x <- x - lr_t * wd * x happens first and is not part of u).
//
// Every scalar coefficient is formed in double and rounded to T once:
// lr_t, 1 - beta1, 1 - beta2, 1 - alpha, 1 - beta1^t, 1 - beta2^t, lr_t * wd.
// Per element, in T:
//   coupled decay (all kinds but adamw): g = g + wd * x
//   sgd:          u = lr_t * g
//   sgd_momentum: m = momentum * m + g;           u = lr_t * m
//   adagrad:      v = v + g * g;                  u = lr_t * g / (sqrt(v) + eps)
//   rmsprop:      v = alpha * v + (1 - alpha) * g * g;   u as adagrad
//   adam, adamw:  m = beta1 * m + (1 - beta1) * g
//                 v = beta2 * v + (1 - beta2) * g * g
//                 u = lr_t * (m / bc1) / (sqrt(v / bc2) + eps)
// Throws NonFiniteGradientError before touching state when any gradient
// entry is not finite.
template <typename T>
std::vector<T> step(const OptimizerConfig& config, BasicOptimizerState<T>& state, std::span<T> params,
                    std::span<const T> grads, const FlatView* view = nullptr);

}  // namespace slingshot
