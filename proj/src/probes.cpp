#include "slingshot/probes.hpp"

#include <algorithm>
#include <cmath>

#include "slingshot/errors.hpp"

namespace slingshot {

template <typename T>
double last_layer_norm(const BasicParamSet<T>& params) {
  double ss = 0.0;
  for (const auto& e : params.entries()) {
    if (e.group != ParamGroup::classifier) continue;
    for (T v : e.value.data()) ss += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(ss);
}

template <typename T>
std::vector<std::optional<double>> feature_change(const std::vector<BasicTensor<T>>& before,
                                                  const std::vector<BasicTensor<T>>& after) {
  if (before.size() != after.size()) {
    throw ShapeError("feature_change: traces have " + std::to_string(before.size()) + " and " +
                     std::to_string(after.size()) + " layers");
  }
  std::vector<std::optional<double>> out;
  for (std::size_t l = 0; l < before.size(); ++l) {
    if (before[l].shape() != after[l].shape()) {
      throw ShapeError("feature_change: layer " + std::to_string(l) + " shapes " + shape_string(before[l].shape()) +
                       " and " + shape_string(after[l].shape()));
    }
    double diff = 0.0, base = 0.0;
    for (std::size_t i = 0; i < before[l].numel(); ++i) {
      const double b = before[l][i];
      const double d = static_cast<double>(after[l][i]) - b;
      diff += d * d;
      base += b * b;
    }
    if (base > 0.0) {
      out.emplace_back(std::sqrt(diff) / std::sqrt(base));
    } else {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

double default_fd_step(std::span<const double> x) {
  double mx = 0.0;
  for (double v : x) mx = std::max(mx, std::abs(v));
  return 1e-3 * (1.0 + mx);
}

double sharpness(const GradientFn& gradient, std::span<const double> x, std::span<const double> u, double h) {
  if (x.size() != u.size()) throw ShapeError("sharpness: direction length differs from parameter length");
  if (!(h > 0.0)) throw ContractError("sharpness: finite-difference step must be positive");
  double nu = 0.0;
  for (double v : u) nu += v * v;
  nu = std::sqrt(nu);
  if (!(nu > 0.0)) throw SingularInputError("sharpness: update direction has zero norm");
  std::vector<double> dir(u.size()), plus(x.size()), minus(x.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    dir[i] = u[i] / nu;
    plus[i] = x[i] + h * dir[i];
    minus[i] = x[i] - h * dir[i];
  }
  const std::vector<double> gp = gradient(plus);
  const std::vector<double> gm = gradient(minus);
  if (gp.size() != x.size() || gm.size() != x.size()) throw ShapeError("sharpness: gradient length mismatch");
  double q = 0.0;
  for (std::size_t i = 0; i < dir.size(); ++i) q += dir[i] * (gp[i] - gm[i]);
  return q / (2.0 * h);
}

template <typename T>
CosineDistances cosine_distances(const BasicParamSet<T>& now, const BasicParamSet<T>& init) {
  double dot[2] = {0.0, 0.0}, nn[2] = {0.0, 0.0}, ni[2] = {0.0, 0.0};
  for (const auto& e : now.entries()) {
    const auto& ref = init.at(e.name);
    if (ref.numel() != e.value.numel()) throw ShapeError("cosine_distances: '" + e.name + "' changed size");
    const int g = e.group == ParamGroup::classifier ? 1 : 0;
    for (std::size_t i = 0; i < ref.numel(); ++i) {
      const double a = e.value[i];
      const double b = ref[i];
      dot[g] += a * b;
      nn[g] += a * a;
      ni[g] += b * b;
    }
  }
  auto distance = [&](int g) -> std::optional<double> {
    if (!(nn[g] > 0.0) || !(ni[g] > 0.0)) return std::nullopt;
    const double c = dot[g] / std::sqrt(nn[g] * ni[g]);
    return 1.0 - std::clamp(c, -1.0, 1.0);
  };
  return {distance(0), distance(1)};
}

template <typename T>
BasicBatch<T> batch_rows(const ModelSpec& spec, const BasicBatch<T>& all, std::size_t begin, std::size_t count) {
  if (begin + count > all.rows) throw IndexError("batch_rows: range past the end of the split");
  BasicBatch<T> b;
  b.rows = count;
  if (spec.kind == ModelKind::transformer) {
    const std::size_t s = spec.seq_len;
    b.tokens.assign(all.tokens.begin() + static_cast<std::ptrdiff_t>(begin * s),
                    all.tokens.begin() + static_cast<std::ptrdiff_t>((begin + count) * s));
  } else {
    const std::size_t d = spec.input_dim;
    b.features.assign(all.features.begin() + static_cast<std::ptrdiff_t>(begin * d),
                      all.features.begin() + static_cast<std::ptrdiff_t>((begin + count) * d));
  }
  b.targets.assign(all.targets.begin() + static_cast<std::ptrdiff_t>(begin),
                   all.targets.begin() + static_cast<std::ptrdiff_t>(begin + count));
  return b;
}

template <typename T>
BasicBatch<T> gather_rows(const ModelSpec& spec, const BasicBatch<T>& all, std::span<const std::size_t> rows) {
  BasicBatch<T> b;
  b.rows = rows.size();
  const bool tokens = spec.kind == ModelKind::transformer;
  const std::size_t w = tokens ? spec.seq_len : spec.input_dim;
  for (std::size_t r : rows) {
    if (r >= all.rows) throw IndexError("gather_rows: row " + std::to_string(r) + " past the end of the split");
    if (tokens) {
      b.tokens.insert(b.tokens.end(), all.tokens.begin() + static_cast<std::ptrdiff_t>(r * w),
                      all.tokens.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
    } else {
      b.features.insert(b.features.end(), all.features.begin() + static_cast<std::ptrdiff_t>(r * w),
                        all.features.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
    }
    b.targets.push_back(all.targets[r]);
  }
  return b;
}

template <typename T>
Evaluation evaluate(const ModelSpec& spec, const BasicParamSet<T>& params, const BasicBatch<T>& split,
                    std::size_t batch_size) {
  if (split.rows == 0) throw ContractError("evaluate: empty split");
  if (batch_size == 0) throw ContractError("evaluate: batch size must be >= 1");
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < split.rows; begin += batch_size) {
    const std::size_t count = std::min(batch_size, split.rows - begin);
    const BasicBatch<T> chunk = batch_rows(spec, split, begin, count);
    const BasicForwardTrace<T> tr = trace(spec, params, chunk);
    const std::vector<T> rows = cross_entropy_rows(tr.logits, std::span<const std::uint32_t>(chunk.targets));
    const std::size_t classes = tr.logits.dim(1);
    for (std::size_t r = 0; r < count; ++r) {
      loss += static_cast<double>(rows[r]);
      const T* z = tr.logits.ptr() + r * classes;
      const std::size_t best = static_cast<std::size_t>(std::max_element(z, z + classes) - z);
      if (best == chunk.targets[r]) ++correct;
    }
  }
  return {loss / static_cast<double>(split.rows), static_cast<double>(correct) / static_cast<double>(split.rows)};
}

#define SLINGSHOT_INSTANTIATE_PROBES(T)                                                                    \
  template double last_layer_norm<T>(const BasicParamSet<T>&);                                             \
  template std::vector<std::optional<double>> feature_change<T>(const std::vector<BasicTensor<T>>&,       \
                                                                const std::vector<BasicTensor<T>>&);      \
  template CosineDistances cosine_distances<T>(const BasicParamSet<T>&, const BasicParamSet<T>&);           \
  template Evaluation evaluate<T>(const ModelSpec&, const BasicParamSet<T>&, const BasicBatch<T>&,          \
                                  std::size_t);                                                            \
  template BasicBatch<T> batch_rows<T>(const ModelSpec&, const BasicBatch<T>&, std::size_t, std::size_t);  \
  template BasicBatch<T> gather_rows<T>(const ModelSpec&, const BasicBatch<T>&, std::span<const std::size_t>);

SLINGSHOT_INSTANTIATE_PROBES(float)
SLINGSHOT_INSTANTIATE_PROBES(double)

#undef SLINGSHOT_INSTANTIATE_PROBES

}  // namespace slingshot
