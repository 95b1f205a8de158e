#include "slingshot/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "dense.hpp"
#include "slingshot/errors.hpp"

namespace slingshot {

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::mlp: return "mlp";
    case ModelKind::deep_linear: return "deep_linear";
    case ModelKind::transformer: return "transformer";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "mlp") return ModelKind::mlp;
  if (name == "deep_linear") return ModelKind::deep_linear;
  if (name == "transformer") return ModelKind::transformer;
  throw ConfigError("unknown model kind '" + std::string(name) + "'");
}

std::string_view head_mode_name(HeadMode mode) { return mode == HeadMode::linear ? "linear" : "normalized"; }

HeadMode parse_head_mode(std::string_view name) {
  if (name == "linear") return HeadMode::linear;
  if (name == "normalized") return HeadMode::normalized;
  throw ConfigError("unknown head mode '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model spec: " + msg); };
  if (depth == 0) fail("depth must be >= 1");
  if (width == 0) fail("width must be >= 1");
  if (head_mode == HeadMode::normalized && !(tau > 0.0)) fail("normalized head needs tau > 0");
  if (kind == ModelKind::transformer) {
    if (heads == 0 || width % heads != 0) fail("width " + std::to_string(width) + " is not divisible by heads " + std::to_string(heads));
    if (vocab < 2) fail("transformer vocab must be >= 2");
    if (seq_len < 2) fail("transformer seq_len must be >= 2");
    if (mlp_ratio == 0) fail("mlp_ratio must be >= 1");
  } else {
    if (input_dim == 0) fail("input_dim must be >= 1");
    if (num_classes < 2) fail("num_classes must be >= 2");
  }
}

namespace {

std::string layer_name(std::size_t k, const char* what) { return "layer" + std::to_string(k) + "." + what; }
std::string block_name(std::size_t l, const char* what) { return "block" + std::to_string(l) + "." + what; }

enum class Init { fan_in_uniform, zeros, ones, embedding };

struct Decl {
  std::string name;
  Shape shape;
  Init init;
  std::size_t fan_in = 1;
  ParamGroup group = ParamGroup::representation;
};

std::vector<Decl> declarations(const ModelSpec& spec) {
  spec.validate();
  std::vector<Decl> out;
  const bool normalized = spec.head_mode == HeadMode::normalized;
  auto linear = [&](const std::string& w, const std::string& b, std::size_t in, std::size_t outd, ParamGroup g) {
    out.push_back({w, {in, outd}, Init::fan_in_uniform, in, g});
    out.push_back({b, {outd}, Init::zeros, 1, g});
  };
  if (spec.kind == ModelKind::transformer) {
    const std::size_t d = spec.width;
    out.push_back({"embed.token", {spec.vocab, d}, Init::embedding});
    out.push_back({"embed.position", {spec.seq_len, d}, Init::embedding});
    for (std::size_t l = 1; l <= spec.depth; ++l) {
      for (const char* p : {"q", "k", "v", "o"}) {
        const std::string base = std::string("attn.") + p;
        linear(block_name(l, (base + ".weight").c_str()), block_name(l, (base + ".bias").c_str()), d, d,
               ParamGroup::representation);
      }
      out.push_back({block_name(l, "ln1.gain"), {d}, Init::ones});
      out.push_back({block_name(l, "ln1.bias"), {d}, Init::zeros});
      linear(block_name(l, "mlp.fc1.weight"), block_name(l, "mlp.fc1.bias"), d, d * spec.mlp_ratio,
             ParamGroup::representation);
      linear(block_name(l, "mlp.fc2.weight"), block_name(l, "mlp.fc2.bias"), d * spec.mlp_ratio, d,
             ParamGroup::representation);
      out.push_back({block_name(l, "ln2.gain"), {d}, Init::ones});
      out.push_back({block_name(l, "ln2.bias"), {d}, Init::zeros});
    }
    if (normalized) {
      out.push_back({"head.weight", {spec.vocab, d}, Init::fan_in_uniform, d, ParamGroup::classifier});
    } else {
      linear("head.weight", "head.bias", d, spec.vocab, ParamGroup::classifier);
    }
    return out;
  }
  std::size_t in = spec.input_dim;
  for (std::size_t k = 1; k < spec.depth; ++k) {
    linear(layer_name(k, "weight"), layer_name(k, "bias"), in, spec.width, ParamGroup::representation);
    in = spec.width;
  }
  const std::size_t k = spec.depth;
  if (normalized) {
    out.push_back({layer_name(k, "weight"), {spec.num_classes, in}, Init::fan_in_uniform, in, ParamGroup::classifier});
  } else {
    linear(layer_name(k, "weight"), layer_name(k, "bias"), in, spec.num_classes, ParamGroup::classifier);
  }
  return out;
}

template <typename T>
const BasicVar<T>& param(const BoundParams<T>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw IndexError("model parameter '" + name + "' is not bound");
  return it->second;
}

template <typename T>
BasicVar<T> affine(const BoundParams<T>& p, const std::string& w, const std::string& b, BasicVar<T> x) {
  return add(matmul(x, param(p, w)), param(p, b));
}

template <typename T>
BasicVar<T> classifier(const ModelSpec& spec, const BoundParams<T>& p, const std::string& w, const std::string& b,
                       BasicVar<T> x) {
  if (spec.head_mode == HeadMode::normalized) return normalized_head(x, param(p, w), static_cast<T>(spec.tau));
  return affine(p, w, b, x);
}

template <typename T>
ModelOutput<T> forward_mlp(BasicTape<T>& tape, const ModelSpec& spec, const BoundParams<T>& p,
                           const BasicBatch<T>& batch) {
  if (batch.rows == 0) throw ShapeError("forward: empty batch");
  if (batch.features.size() != batch.rows * spec.input_dim) {
    throw ShapeError("forward: expected " + std::to_string(batch.rows) + "x" + std::to_string(spec.input_dim) +
                     " features, got " + std::to_string(batch.features.size()) + " values");
  }
  ModelOutput<T> out;
  BasicVar<T> x = tape.constant(BasicTensor<T>({batch.rows, spec.input_dim}, batch.features));
  const bool nonlinear = spec.kind == ModelKind::mlp;
  for (std::size_t k = 1; k < spec.depth; ++k) {
    x = affine(p, layer_name(k, "weight"), layer_name(k, "bias"), x);
    if (nonlinear) x = relu(x);
    out.features.push_back(x);
  }
  x = classifier(spec, p, layer_name(spec.depth, "weight"), layer_name(spec.depth, "bias"), x);
  out.features.push_back(x);
  out.logits = x;
  return out;
}

template <typename T>
ModelOutput<T> forward_transformer(BasicTape<T>& tape, const ModelSpec& spec, const BoundParams<T>& p,
                                   const BasicBatch<T>& batch, const ForwardOptions& options) {
  const std::size_t rows = batch.rows;
  const std::size_t s = spec.seq_len;
  const std::size_t d = spec.width;
  const std::size_t dh = d / spec.heads;
  if (rows == 0) throw ShapeError("forward: empty batch");
  if (batch.tokens.size() != rows * s) {
    throw ShapeError("forward: expected " + std::to_string(rows) + "x" + std::to_string(s) + " tokens, got " +
                     std::to_string(batch.tokens.size()));
  }
  ModelOutput<T> out;
  BasicVar<T> x = embedding_lookup(param(p, "embed.token"), std::span<const std::uint32_t>(batch.tokens), Shape{rows, s});
  x = add(x, param(p, "embed.position"));

  BasicTensor<T> mask({s, s});
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = i + 1; j < s; ++j) mask[i * s + j] = -std::numeric_limits<T>::infinity();
  }
  BasicVar<T> causal = tape.constant(std::move(mask));
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  for (std::size_t l = 1; l <= spec.depth; ++l) {
    auto lin = [&](const char* base, BasicVar<T> in) {
      return affine(p, block_name(l, (std::string(base) + ".weight").c_str()),
                    block_name(l, (std::string(base) + ".bias").c_str()), in);
    };
    BasicVar<T> q = lin("attn.q", x);
    BasicVar<T> k = lin("attn.k", x);
    BasicVar<T> v = lin("attn.v", x);
    std::vector<BasicVar<T>> heads;
    for (std::size_t h = 0; h < spec.heads; ++h) {
      BasicVar<T> qh = slice(q, 2, h * dh, dh);
      BasicVar<T> kh = slice(k, 2, h * dh, dh);
      BasicVar<T> vh = slice(v, 2, h * dh, dh);
      BasicVar<T> scores = add(scalar_mul(matmul(qh, transpose(kh)), scale), causal);
      heads.push_back(matmul(softmax_lastdim(scores), vh));
    }
    BasicVar<T> attn = lin("attn.o", heads.size() == 1 ? heads.front() : concat(heads, 2));
    x = layer_norm(add(x, attn), param(p, block_name(l, "ln1.gain")), param(p, block_name(l, "ln1.bias")));
    BasicVar<T> hidden = relu(lin("mlp.fc1", x));
    x = layer_norm(add(x, lin("mlp.fc2", hidden)), param(p, block_name(l, "ln2.gain")),
                   param(p, block_name(l, "ln2.bias")));
    out.features.push_back(x);
  }
  BasicVar<T> last = reshape(slice(x, 1, spec.answer_position(), 1), Shape{rows, d});
  out.logits = classifier(spec, p, "head.weight", "head.bias", last);
  if (options.all_positions) out.position_logits = classifier(spec, p, "head.weight", "head.bias", x);
  return out;
}

template <typename T>
using RowMat = dense::RowMat<T>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

}  // namespace

std::size_t parameter_count(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const auto& d : declarations(spec)) n += shape_numel(d.shape);
  return n;
}

template <typename T>
BasicParamSet<T> build(const ModelSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  BasicParamSet<T> params;
  for (const auto& d : declarations(spec)) {
    std::vector<double> values(shape_numel(d.shape), 0.0);
    switch (d.init) {
      case Init::fan_in_uniform: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(d.fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : values) v = dist(rng);
        break;
      }
      case Init::embedding: {
        std::normal_distribution<double> dist(0.0, 0.02);
        for (auto& v : values) v = dist(rng);
        break;
      }
      case Init::ones:
        std::fill(values.begin(), values.end(), 1.0);
        break;
      case Init::zeros:
        break;
    }
    params.add(d.name, BasicTensor<T>(d.shape, std::vector<T>(values.begin(), values.end())), d.group);
  }
  return params;
}

template <typename T>
BoundParams<T> bind(BasicTape<T>& tape, const BasicParamSet<T>& params, bool requires_grad) {
  BoundParams<T> out;
  for (const auto& e : params.entries()) {
    out.emplace(e.name, requires_grad ? tape.parameter(e.name, e.value) : tape.constant(e.value));
  }
  return out;
}

template <typename T>
ModelOutput<T> forward(BasicTape<T>& tape, const ModelSpec& spec, const BoundParams<T>& params,
                       const BasicBatch<T>& batch, const ForwardOptions& options) {
  spec.validate();
  if (spec.kind == ModelKind::transformer) return forward_transformer(tape, spec, params, batch, options);
  return forward_mlp(tape, spec, params, batch);
}

template <typename T>
BasicForwardTrace<T> trace(const ModelSpec& spec, const BasicParamSet<T>& params, const BasicBatch<T>& batch,
                           const ForwardOptions& options) {
  BasicTape<T> tape;
  auto bound = bind(tape, params, false);
  ModelOutput<T> out = forward(tape, spec, bound, batch, options);
  BasicForwardTrace<T> t;
  for (const auto& f : out.features) t.features.push_back(f.value());
  t.logits = out.logits.value();
  if (out.position_logits.valid()) t.position_logits = out.position_logits.value();
  return t;
}

template <typename T>
BasicVar<T> normalized_head(BasicVar<T> features, BasicVar<T> weight, T tau) {
  if (!(tau > T(0))) throw ContractError("normalized_head: tau must be positive");
  if (features.tape() != weight.tape() || !features.valid()) throw ContractError("normalized_head: operands on different tapes");
  auto& tape = *features.tape();
  const Shape& fs = features.shape();
  const Shape& ws = weight.shape();
  if (ws.size() != 2 || fs.back() != ws[1]) {
    throw ShapeError("normalized_head: incompatible shapes " + shape_string(fs) + " and " + shape_string(ws));
  }
  const std::size_t dim = ws[1];
  const std::size_t classes = ws[0];
  const std::size_t rows = features.value().numel() / dim;
  const T* fp = features.value().ptr();
  const T* wp = weight.value().ptr();
  // Norms and dot products share one sequential reduction, so a feature row
  // equal to a weight row has dot == |f|^2 == |w|^2 and, since
  // sqrt(s * s) == s in IEEE arithmetic, cosine exactly 1.
  auto dot = [dim](const T* a, const T* b) {
    T acc = T(0);
    for (std::size_t j = 0; j < dim; ++j) acc += a[j] * b[j];
    return acc;
  };
  Vec<T> fss(rows), wss(classes);
  for (std::size_t i = 0; i < rows; ++i) {
    fss[i] = dot(fp + i * dim, fp + i * dim);
    if (!(fss[i] > T(0))) throw SingularInputError("normalized_head: feature row " + std::to_string(i) + " has zero norm");
  }
  for (std::size_t k = 0; k < classes; ++k) {
    wss[k] = dot(wp + k * dim, wp + k * dim);
    if (!(wss[k] > T(0))) throw SingularInputError("normalized_head: weight row " + std::to_string(k) + " has zero norm");
  }
  RowMat<T> cos(rows, classes);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t k = 0; k < classes; ++k) {
      cos(i, k) = std::clamp(dot(fp + i * dim, wp + k * dim) / std::sqrt(fss[i] * wss[k]), T(-1), T(1));
    }
  }
  Shape out_shape = fs;
  out_shape.back() = classes;
  BasicTensor<T> out(out_shape);
  Eigen::Map<RowMat<T>>(out.ptr(), rows, classes) = cos / tau;
  Vec<T> fn = fss.cwiseSqrt();
  Vec<T> wn = wss.cwiseSqrt();
  return tape.record(std::move(out), {features, weight},
                     [rows, classes, dim, tau, cos = std::move(cos), fn = std::move(fn), wn = std::move(wn)](auto& ctx) {
                       const RowMat<T> g0 = dense::load(ctx.grad_output().ptr(), rows, classes);
                       const RowMat<T> f = dense::load(ctx.input(0).ptr(), rows, dim);
                       const RowMat<T> w = dense::load(ctx.input(1).ptr(), classes, dim);
                       RowMat<T> g = g0 / tau;
                       RowMat<T> gc = g.cwiseProduct(cos);
                       if (auto* gf = ctx.input_grad(0)) {
                         Eigen::Map<RowMat<T>> df(gf->ptr(), rows, dim);
                         RowMat<T> scaled = g.array().rowwise() / wn.transpose().array();
                         RowMat<T> term = scaled * w;
                         Vec<T> coef = gc.rowwise().sum();
                         for (std::size_t i = 0; i < rows; ++i) {
                           df.row(i) += term.row(i) / fn[i] - f.row(i) * (coef[i] / (fn[i] * fn[i]));
                         }
                       }
                       if (auto* gw = ctx.input_grad(1)) {
                         Eigen::Map<RowMat<T>> dw(gw->ptr(), classes, dim);
                         RowMat<T> scaled = g.array().colwise() / fn.array();
                         RowMat<T> term = scaled.transpose() * f;
                         Vec<T> coef = gc.colwise().sum().transpose();
                         for (std::size_t k = 0; k < classes; ++k) {
                           dw.row(k) += term.row(k) / wn[k] - w.row(k) * (coef[k] / (wn[k] * wn[k]));
                         }
                       }
                     });
}

template <typename T>
std::pair<std::vector<std::string>, std::vector<std::string>> param_groups(const BasicParamSet<T>& params) {
  return {params.names_in(ParamGroup::representation), params.names_in(ParamGroup::classifier)};
}

template <typename T>
LossAndGradient<T> loss_and_gradient(const ModelSpec& spec, const BasicParamSet<T>& params, const FlatView& view,
                                     const BasicBatch<T>& batch) {
  BasicTape<T> tape;
  auto bound = bind(tape, params, true);
  ModelOutput<T> out = forward(tape, spec, bound, batch);
  BasicVar<T> loss = cross_entropy(out.logits, std::span<const std::uint32_t>(batch.targets));
  LossAndGradient<T> result;
  result.loss = loss.value().item();
  auto grads = tape.backward(loss);
  result.gradient.resize(view.total_len);
  for (const auto& s : view.segments) {
    auto it = grads.find(s.name);
    if (it == grads.end() || it->second.numel() != s.length) {
      throw ContractError("gradient for '" + s.name + "' does not match the flat view");
    }
    std::copy_n(it->second.ptr(), s.length, result.gradient.begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
  return result;
}

#define SLINGSHOT_INSTANTIATE_MODELS(T)                                                                      \
  template BasicParamSet<T> build<T>(const ModelSpec&, std::uint64_t);                                       \
  template BoundParams<T> bind<T>(BasicTape<T>&, const BasicParamSet<T>&, bool);                             \
  template ModelOutput<T> forward<T>(BasicTape<T>&, const ModelSpec&, const BoundParams<T>&,                 \
                                     const BasicBatch<T>&, const ForwardOptions&);                           \
  template BasicForwardTrace<T> trace<T>(const ModelSpec&, const BasicParamSet<T>&, const BasicBatch<T>&,    \
                                         const ForwardOptions&);                                             \
  template BasicVar<T> normalized_head<T>(BasicVar<T>, BasicVar<T>, T);                                      \
  template std::pair<std::vector<std::string>, std::vector<std::string>> param_groups<T>(                    \
      const BasicParamSet<T>&);                                                                              \
  template LossAndGradient<T> loss_and_gradient<T>(const ModelSpec&, const BasicParamSet<T>&, const FlatView&, \
                                                   const BasicBatch<T>&);

SLINGSHOT_INSTANTIATE_MODELS(float)
SLINGSHOT_INSTANTIATE_MODELS(double)

#undef SLINGSHOT_INSTANTIATE_MODELS

}  // namespace slingshot
