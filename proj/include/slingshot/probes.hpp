#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "slingshot/models.hpp"
#include "slingshot/params.hpp"

namespace slingshot {

// Euclidean norm over every classifier-group parameter.
template <typename T>
double last_layer_norm(const BasicParamSet<T>& params);

// ||after_l - before_l|| / ||before_l|| per layer; nullopt when ||before_l|| = 0.
template <typename T>
std::vector<std::optional<double>> feature_change(const std::vector<BasicTensor<T>>& before,
                                                  const std::vector<BasicTensor<T>>& after);

using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

// 1e-3 * (1 + ||x||_inf)
double default_fd_step(std::span<const double> x);

// u_hat^T H u_hat with H u_hat from a central difference of gradients at
// x +- h * u_hat. Throws SingularInputError when ||u|| = 0.
double sharpness(const GradientFn& gradient, std::span<const double> x, std::span<const double> u, double h);

struct CosineDistances {
  std::optional<double> repr;
  std::optional<double> clf;
};

// 1 - cos(now_g, init_g) per group, matching parameters by name.
template <typename T>
CosineDistances cosine_distances(const BasicParamSet<T>& now, const BasicParamSet<T>& init);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mean answer-position cross-entropy and argmax accuracy over every row of
// the split, evaluated in consecutive chunks of batch_size rows.
template <typename T>
Evaluation evaluate(const ModelSpec& spec, const BasicParamSet<T>& params, const BasicBatch<T>& split,
                    std::size_t batch_size);

// Rows [begin, begin + count) of a batch.
template <typename T>
BasicBatch<T> batch_rows(const ModelSpec& spec, const BasicBatch<T>& all, std::size_t begin, std::size_t count);

// Rows picked by index, in the given order.
template <typename T>
BasicBatch<T> gather_rows(const ModelSpec& spec, const BasicBatch<T>& all, std::span<const std::size_t> rows);

}  // namespace slingshot
