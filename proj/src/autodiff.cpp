#include "slingshot/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dense.hpp"
#include "slingshot/errors.hpp"

namespace slingshot {

// ---- tape -------------------------------------------------------------------

template <typename T>
BasicVar<T> BasicTape<T>::push(Node node) {
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) throw ContractError("tape is full");
  nodes_.push_back(std::move(node));
  return VarT(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <typename T>
void BasicTape<T>::check_owned(const VarT& v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw ContractError("variable does not belong to this tape");
}

template <typename T>
BasicVar<T> BasicTape<T>::constant(TensorT value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
BasicVar<T> BasicTape<T>::parameter(std::string name, TensorT value) {
  for (const auto& n : nodes_) {
    if (n.leaf && n.name == name) throw ContractError("parameter '" + name + "' registered twice on one tape");
  }
  Node n;
  n.value = std::move(value);
  n.name = std::move(name);
  n.requires_grad = true;
  n.leaf = true;
  return push(std::move(n));
}

template <typename T>
BasicVar<T> BasicTape<T>::record(TensorT value, std::initializer_list<VarT> inputs, Backward backward) {
  return record(std::move(value), std::vector<VarT>(inputs), std::move(backward));
}

template <typename T>
BasicVar<T> BasicTape<T>::record(TensorT value, const std::vector<VarT>& inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& v : inputs) {
    check_owned(v);
    n.inputs.push_back(v.id_);
    n.requires_grad = n.requires_grad || nodes_[v.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
BasicTensor<T>* BasicTape<T>::grad_slot(std::uint32_t id) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = TensorT(n.value.shape());
  return &n.grad;
}

template <typename T>
std::map<std::string, BasicTensor<T>> BasicTape<T>::backward(VarT loss) {
  check_owned(loss);
  if (nodes_[loss.id_].value.numel() != 1) {
    throw ContractError("backward needs a single-element loss, got shape " +
                        shape_string(nodes_[loss.id_].value.shape()));
  }
  if (TensorT* g = grad_slot(loss.id_)) (*g)[0] = T(1);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    Context ctx(*this, static_cast<std::uint32_t>(i));
    n.backward(ctx);
  }
  std::map<std::string, TensorT> grads;
  for (auto& n : nodes_) {
    if (!n.leaf) continue;
    grads[n.name] = n.grad.empty() ? TensorT(n.value.shape()) : std::move(n.grad);
  }
  clear();
  return grads;
}

template <typename T>
void BasicTape<T>::clear() {
  nodes_.clear();
}

template class BasicTape<float>;
template class BasicTape<double>;

// ---- helpers ----------------------------------------------------------------

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

template <typename T>
BasicTape<T>& tape_of(const BasicVar<T>& v) {
  if (!v.valid()) throw ContractError("operation on an unbound variable");
  return *v.tape();
}

template <typename T>
BasicTape<T>& tape_of(const BasicVar<T>& a, const BasicVar<T>& b) {
  if (a.tape() != b.tape()) throw ContractError("operands live on different tapes");
  return tape_of(a);
}

enum class Binary { add, sub, mul };

template <typename T>
BasicVar<T> binary(const char* name, Binary kind, BasicVar<T> a, BasicVar<T> b) {
  auto& tape = tape_of(a, b);
  if (a.shape() != b.shape() && !is_suffix(b.shape(), a.shape())) {
    // add and mul commute, so a smaller left operand is moved right.
    if (kind != Binary::sub && is_suffix(a.shape(), b.shape())) {
      std::swap(a, b);
    } else {
      shape_mismatch(name, a.shape(), b.shape());
    }
  }
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t n = av.numel();
  const std::size_t nb = bv.numel();
  BasicTensor<T> out(av.shape());
  T* o = out.ptr();
  const T* x = av.ptr();
  const T* y = bv.ptr();
  for (std::size_t i = 0; i < n; ++i) {
    const T yi = y[i % nb];
    switch (kind) {
      case Binary::add: o[i] = x[i] + yi; break;
      case Binary::sub: o[i] = x[i] - yi; break;
      case Binary::mul: o[i] = x[i] * yi; break;
    }
  }
  return tape.record(std::move(out), {a, b}, [kind, n, nb](auto& ctx) {
    const T* g = ctx.grad_output().ptr();
    const T* x = ctx.input(0).ptr();
    const T* y = ctx.input(1).ptr();
    if (auto* ga = ctx.input_grad(0)) {
      T* d = ga->ptr();
      if (kind == Binary::mul) {
        for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * y[i % nb];
      } else {
        for (std::size_t i = 0; i < n; ++i) d[i] += g[i];
      }
    }
    if (auto* gb = ctx.input_grad(1)) {
      T* d = gb->ptr();
      switch (kind) {
        case Binary::add:
          for (std::size_t i = 0; i < n; ++i) d[i % nb] += g[i];
          break;
        case Binary::sub:
          for (std::size_t i = 0; i < n; ++i) d[i % nb] -= g[i];
          break;
        case Binary::mul:
          for (std::size_t i = 0; i < n; ++i) d[i % nb] += g[i] * x[i];
          break;
      }
    }
  });
}

// Splits a shape around an axis into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---- element-wise -------------------------------------------------------------

template <typename T>
BasicVar<T> add(BasicVar<T> a, BasicVar<T> b) {
  return binary("add", Binary::add, a, b);
}

template <typename T>
BasicVar<T> sub(BasicVar<T> a, BasicVar<T> b) {
  return binary("sub", Binary::sub, a, b);
}

template <typename T>
BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b) {
  return binary("mul", Binary::mul, a, b);
}

template <typename T>
BasicVar<T> scalar_mul(BasicVar<T> a, T s) {
  auto& tape = tape_of(a);
  BasicTensor<T> out(a.shape());
  const T* x = a.value().ptr();
  for (std::size_t i = 0, n = out.numel(); i < n; ++i) out[i] = x[i] * s;
  return tape.record(std::move(out), {a}, [s](auto& ctx) {
    auto* ga = ctx.input_grad(0);
    const T* g = ctx.grad_output().ptr();
    T* d = ga->ptr();
    for (std::size_t i = 0, n = ga->numel(); i < n; ++i) d[i] += g[i] * s;
  });
}

template <typename T>
BasicVar<T> relu(BasicVar<T> a) {
  auto& tape = tape_of(a);
  BasicTensor<T> out(a.shape());
  const T* x = a.value().ptr();
  for (std::size_t i = 0, n = out.numel(); i < n; ++i) out[i] = x[i] < T(0) ? T(0) : x[i];  // NaN passes through
  return tape.record(std::move(out), {a}, [](auto& ctx) {
    auto* ga = ctx.input_grad(0);
    const T* g = ctx.grad_output().ptr();
    const T* x = ctx.input(0).ptr();
    T* d = ga->ptr();
    for (std::size_t i = 0, n = ga->numel(); i < n; ++i) {
      if (x[i] > T(0)) {
        d[i] += g[i];
      } else if (std::isnan(x[i])) {
        d[i] += x[i];
      }
    }
  });
}

// ---- matmul -------------------------------------------------------------------

template <typename T>
BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b) {
  auto& tape = tape_of(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  // batch == 0 marks a plain 2-D product after folding leading dims of a.
  std::size_t batch = 0, m = 0, k = 0, n = 0;
  Shape out_shape;
  if (sb.size() == 2 && (sa.size() == 2 || sa.size() == 3)) {
    k = sa.back();
    m = a.value().numel() / k;
    if (sb[0] != k) shape_mismatch("matmul", sa, sb);
    n = sb[1];
    out_shape = sa;
    out_shape.back() = n;
  } else if (sa.size() == 3 && sb.size() == 3) {
    batch = sa[0];
    m = sa[1];
    k = sa[2];
    n = sb[2];
    if (sb[0] != batch || sb[1] != k) shape_mismatch("matmul", sa, sb);
    out_shape = {batch, m, n};
  } else {
    shape_mismatch("matmul", sa, sb);
  }
  BasicTensor<T> out(out_shape);
  const std::size_t reps = batch == 0 ? 1 : batch;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto A = dense::load(a.value().ptr() + r * m * k, m, k);
    const auto B = dense::load(b.value().ptr() + (batch == 0 ? 0 : r * k * n), k, n);
    const dense::RowMat<T> C = A * B;
    dense::store(C, out.ptr() + r * m * n);
  }
  return tape.record(std::move(out), {a, b}, [batch, m, k, n, reps](auto& ctx) {
    const T* g = ctx.grad_output().ptr();
    const T* x = ctx.input(0).ptr();
    const T* y = ctx.input(1).ptr();
    auto* ga = ctx.input_grad(0);
    auto* gb = ctx.input_grad(1);
    for (std::size_t r = 0; r < reps; ++r) {
      const auto G = dense::load(g + r * m * n, m, n);
      const std::size_t boff = batch == 0 ? 0 : r * k * n;
      if (ga) {
        const auto B = dense::load(y + boff, k, n);
        const dense::RowMat<T> dA = G * B.transpose();
        dense::accumulate(dA, ga->ptr() + r * m * k);
      }
      if (gb) {
        const auto A = dense::load(x + r * m * k, m, k);
        const dense::RowMat<T> dB = A.transpose() * G;
        dense::accumulate(dB, gb->ptr() + boff);
      }
    }
  });
}

// ---- softmax / normalization ----------------------------------------------------

template <typename T>
void softmax_rows(std::span<const T> in, std::span<T> out, std::size_t cols) {
  const std::size_t rows = in.size() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = in.data() + r * cols;
    T* y = out.data() + r * cols;
    T mx = x[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    T total = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      total += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
}

template <typename T>
BasicVar<T> softmax_lastdim(BasicVar<T> a) {
  auto& tape = tape_of(a);
  const std::size_t cols = a.shape().back();
  BasicTensor<T> out(a.shape());
  softmax_rows<T>(a.value().data(), out.data(), cols);
  return tape.record(std::move(out), {a}, [cols](auto& ctx) {
    const T* g = ctx.grad_output().ptr();
    const T* y = ctx.output().ptr();
    auto* ga = ctx.input_grad(0);
    T* d = ga->ptr();
    const std::size_t rows = ga->numel() / cols;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      T dot = T(0);
      for (std::size_t c = 0; c < cols; ++c) dot += g[o + c] * y[o + c];
      for (std::size_t c = 0; c < cols; ++c) d[o + c] += y[o + c] * (g[o + c] - dot);
    }
  });
}

template <typename T>
BasicVar<T> layer_norm(BasicVar<T> x, BasicVar<T> gain, BasicVar<T> bias) {
  constexpr T kEps = T(1e-5);
  auto& tape = tape_of(x, gain);
  tape_of(x, bias);
  const std::size_t cols = x.shape().back();
  if (gain.shape() != Shape{cols}) shape_mismatch("layer_norm", x.shape(), gain.shape());
  if (bias.shape() != Shape{cols}) shape_mismatch("layer_norm", x.shape(), bias.shape());
  const std::size_t rows = x.value().numel() / cols;
  std::vector<T> xhat(rows * cols);
  std::vector<T> inv_std(rows);
  BasicTensor<T> out(x.shape());
  const T* in = x.value().ptr();
  const T* gv = gain.value().ptr();
  const T* bv = bias.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in + r * cols;
    T mu = T(0);
    for (std::size_t c = 0; c < cols; ++c) mu += row[c];
    mu /= T(cols);
    T var = T(0);
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= T(cols);
    const T is = T(1) / std::sqrt(var + kEps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (row[c] - mu) * is;
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  return tape.record(std::move(out), {x, gain, bias},
                     [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](auto& ctx) {
                       const T* g = ctx.grad_output().ptr();
                       const T* gv = ctx.input(1).ptr();
                       if (auto* gx = ctx.input_grad(0)) {
                         T* d = gx->ptr();
                         std::vector<T> dh(cols);
                         for (std::size_t r = 0; r < rows; ++r) {
                           const std::size_t o = r * cols;
                           T mean_dh = T(0), mean_dh_h = T(0);
                           for (std::size_t c = 0; c < cols; ++c) {
                             dh[c] = g[o + c] * gv[c];
                             mean_dh += dh[c];
                             mean_dh_h += dh[c] * xhat[o + c];
                           }
                           mean_dh /= T(cols);
                           mean_dh_h /= T(cols);
                           for (std::size_t c = 0; c < cols; ++c) {
                             d[o + c] += inv_std[r] * (dh[c] - mean_dh - xhat[o + c] * mean_dh_h);
                           }
                         }
                       }
                       if (auto* gg = ctx.input_grad(1)) {
                         T* d = gg->ptr();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < cols; ++c) d[c] += g[r * cols + c] * xhat[r * cols + c];
                         }
                       }
                       if (auto* gb = ctx.input_grad(2)) {
                         T* d = gb->ptr();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < cols; ++c) d[c] += g[r * cols + c];
                         }
                       }
                     });
}

template <typename T>
BasicVar<T> normalize_rows(BasicVar<T> a) {
  auto& tape = tape_of(a);
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.value().numel() / cols;
  std::vector<T> norms(rows);
  BasicTensor<T> out(a.shape());
  const T* x = a.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = T(0);
    for (std::size_t c = 0; c < cols; ++c) ss += x[r * cols + c] * x[r * cols + c];
    const T nrm = std::sqrt(ss);
    if (!(nrm > T(0))) throw SingularInputError("normalize_rows: row " + std::to_string(r) + " has zero norm");
    norms[r] = nrm;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] / nrm;
  }
  return tape.record(std::move(out), {a}, [rows, cols, norms = std::move(norms)](auto& ctx) {
    const T* g = ctx.grad_output().ptr();
    const T* y = ctx.output().ptr();
    T* d = ctx.input_grad(0)->ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      T dot = T(0);
      for (std::size_t c = 0; c < cols; ++c) dot += y[o + c] * g[o + c];
      for (std::size_t c = 0; c < cols; ++c) d[o + c] += (g[o + c] - y[o + c] * dot) / norms[r];
    }
  });
}

// ---- indexing / layout ------------------------------------------------------------

template <typename T>
BasicVar<T> embedding_lookup(BasicVar<T> table, std::span<const std::uint32_t> ids, const Shape& index_shape) {
  auto& tape = tape_of(table);
  if (table.shape().size() != 2) throw ShapeError("embedding_lookup: table must be 2-D, got " + shape_string(table.shape()));
  if (shape_numel(index_shape) != ids.size()) {
    throw ShapeError("embedding_lookup: " + std::to_string(ids.size()) + " ids for index shape " +
                     shape_string(index_shape));
  }
  const std::size_t vocab = table.shape()[0];
  const std::size_t width = table.shape()[1];
  Shape out_shape = index_shape;
  out_shape.push_back(width);
  BasicTensor<T> out(out_shape);
  const T* tv = table.value().ptr();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                       " is outside vocabulary of " + std::to_string(vocab));
    }
    std::copy_n(tv + std::size_t(ids[i]) * width, width, out.ptr() + i * width);
  }
  std::vector<std::uint32_t> idx(ids.begin(), ids.end());
  return tape.record(std::move(out), {table}, [width, idx = std::move(idx)](auto& ctx) {
    const T* g = ctx.grad_output().ptr();
    T* d = ctx.input_grad(0)->ptr();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      T* row = d + std::size_t(idx[i]) * width;
      const T* src = g + i * width;
      for (std::size_t c = 0; c < width; ++c) row[c] += src[c];
    }
  });
}

template <typename T>
BasicVar<T> concat(const std::vector<BasicVar<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  auto& tape = tape_of(parts.front());
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    tape_of(parts.front(), p);
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) shape_mismatch("concat", first, s);
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_axis(out_shape, axis);
  BasicTensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const T* src = parts[p].value().ptr();
    const std::size_t block = extents[p] * os.inner;
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(src + o * block, block, out.ptr() + o * os.extent * os.inner + offset * os.inner);
    }
    offset += extents[p];
  }
  return tape.record(std::move(out), parts, [os, extents](auto& ctx) {
    const T* g = ctx.grad_output().ptr();
    std::size_t offset = 0;
    for (std::size_t p = 0; p < extents.size(); ++p) {
      const std::size_t block = extents[p] * os.inner;
      if (auto* gp = ctx.input_grad(p)) {
        T* d = gp->ptr();
        for (std::size_t o = 0; o < os.outer; ++o) {
          const T* src = g + o * os.extent * os.inner + offset * os.inner;
          for (std::size_t i = 0; i < block; ++i) d[o * block + i] += src[i];
        }
      }
      offset += extents[p];
    }
  });
}

template <typename T>
BasicVar<T> slice(BasicVar<T> a, std::size_t axis, std::size_t start, std::size_t length) {
  auto& tape = tape_of(a);
  const Shape& s = a.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) + ") on axis " +
                     std::to_string(axis) + " of " + shape_string(s));
  }
  const AxisSplit is = split_axis(s, axis);
  Shape out_shape = s;
  out_shape[axis] = length;
  BasicTensor<T> out(out_shape);
  const std::size_t block = length * is.inner;
  const T* src = a.value().ptr();
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::copy_n(src + o * is.extent * is.inner + start * is.inner, block, out.ptr() + o * block);
  }
  return tape.record(std::move(out), {a}, [is, start, block](auto& ctx) {
    const T* g = ctx.grad_output().ptr();
    T* d = ctx.input_grad(0)->ptr();
    for (std::size_t o = 0; o < is.outer; ++o) {
      T* dst = d + o * is.extent * is.inner + start * is.inner;
      for (std::size_t i = 0; i < block; ++i) dst[i] += g[o * block + i];
    }
  });
}

template <typename T>
BasicVar<T> transpose(BasicVar<T> a) {
  auto& tape = tape_of(a);
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("transpose: needs rank >= 2, got " + shape_string(s));
  const std::size_t rows = s[s.size() - 2];
  const std::size_t cols = s.back();
  const std::size_t batch = a.value().numel() / (rows * cols);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape.back());
  BasicTensor<T> out(out_shape);
  const T* x = a.value().ptr();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t o = b * rows * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out[o + c * rows + r] = x[o + r * cols + c];
    }
  }
  return tape.record(std::move(out), {a}, [batch, rows, cols](auto& ctx) {
    const T* g = ctx.grad_output().ptr();
    T* d = ctx.input_grad(0)->ptr();
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t o = b * rows * cols;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) d[o + r * cols + c] += g[o + c * rows + r];
      }
    }
  });
}

template <typename T>
BasicVar<T> reshape(BasicVar<T> a, Shape shape) {
  auto& tape = tape_of(a);
  BasicTensor<T> out = a.value().reshaped(std::move(shape));
  return tape.record(std::move(out), {a}, [](auto& ctx) {
    auto* ga = ctx.input_grad(0);
    const T* g = ctx.grad_output().ptr();
    T* d = ga->ptr();
    for (std::size_t i = 0, n = ga->numel(); i < n; ++i) d[i] += g[i];
  });
}

// ---- reductions / loss ------------------------------------------------------------

template <typename T>
BasicVar<T> sum(BasicVar<T> a) {
  auto& tape = tape_of(a);
  T total = T(0);
  for (T v : a.value().data()) total += v;
  return tape.record(BasicTensor<T>::scalar(total), {a}, [](auto& ctx) {
    auto* ga = ctx.input_grad(0);
    const T g = ctx.grad_output()[0];
    T* d = ga->ptr();
    for (std::size_t i = 0, n = ga->numel(); i < n; ++i) d[i] += g;
  });
}

template <typename T>
BasicVar<T> mean(BasicVar<T> a) {
  const T n = T(a.value().numel());
  return scalar_mul(sum(a), T(1) / n);
}

template <typename T>
std::vector<T> cross_entropy_rows(const BasicTensor<T>& logits, std::span<const std::uint32_t> targets) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [batch, vocab], got " + shape_string(logits.shape()));
  const std::size_t rows = logits.dim(0);
  const std::size_t vocab = logits.dim(1);
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) + " rows");
  }
  std::vector<T> losses(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) + " at row " + std::to_string(r) +
                       " is outside vocabulary of " + std::to_string(vocab));
    }
    const T* z = logits.ptr() + r * vocab;
    T mx = z[0];
    for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, z[c]);
    T total = T(0);
    for (std::size_t c = 0; c < vocab; ++c) total += std::exp(z[c] - mx);
    losses[r] = mx + std::log(total) - z[targets[r]];
  }
  return losses;
}

template <typename T>
BasicVar<T> cross_entropy(BasicVar<T> logits, std::span<const std::uint32_t> targets) {
  auto& tape = tape_of(logits);
  const std::vector<T> losses = cross_entropy_rows(logits.value(), targets);
  const std::size_t rows = losses.size();
  const std::size_t vocab = logits.shape()[1];
  T total = T(0);
  for (T l : losses) total += l;
  std::vector<std::uint32_t> tgt(targets.begin(), targets.end());
  return tape.record(BasicTensor<T>::scalar(total / T(rows)), {logits}, [rows, vocab, tgt = std::move(tgt)](auto& ctx) {
    const T scale = ctx.grad_output()[0] / T(rows);
    std::vector<T> p(rows * vocab);
    softmax_rows<T>(ctx.input(0).data(), p, vocab);
    T* d = ctx.input_grad(0)->ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      p[r * vocab + tgt[r]] -= T(1);
      for (std::size_t c = 0; c < vocab; ++c) d[r * vocab + c] += scale * p[r * vocab + c];
    }
  });
}

#define SLINGSHOT_INSTANTIATE_OPS(T)                                                                           \
  template BasicVar<T> add<T>(BasicVar<T>, BasicVar<T>);                                                       \
  template BasicVar<T> sub<T>(BasicVar<T>, BasicVar<T>);                                                       \
  template BasicVar<T> mul<T>(BasicVar<T>, BasicVar<T>);                                                       \
  template BasicVar<T> scalar_mul<T>(BasicVar<T>, T);                                                          \
  template BasicVar<T> matmul<T>(BasicVar<T>, BasicVar<T>);                                                    \
  template BasicVar<T> relu<T>(BasicVar<T>);                                                                   \
  template BasicVar<T> softmax_lastdim<T>(BasicVar<T>);                                                        \
  template BasicVar<T> layer_norm<T>(BasicVar<T>, BasicVar<T>, BasicVar<T>);                                   \
  template BasicVar<T> embedding_lookup<T>(BasicVar<T>, std::span<const std::uint32_t>, const Shape&);         \
  template BasicVar<T> concat<T>(const std::vector<BasicVar<T>>&, std::size_t);                                \
  template BasicVar<T> slice<T>(BasicVar<T>, std::size_t, std::size_t, std::size_t);                           \
  template BasicVar<T> transpose<T>(BasicVar<T>);                                                              \
  template BasicVar<T> reshape<T>(BasicVar<T>, Shape);                                                         \
  template BasicVar<T> sum<T>(BasicVar<T>);                                                                    \
  template BasicVar<T> mean<T>(BasicVar<T>);                                                                   \
  template BasicVar<T> normalize_rows<T>(BasicVar<T>);                                                         \
  template BasicVar<T> cross_entropy<T>(BasicVar<T>, std::span<const std::uint32_t>);                          \
  template void softmax_rows<T>(std::span<const T>, std::span<T>, std::size_t);                                \
  template std::vector<T> cross_entropy_rows<T>(const BasicTensor<T>&, std::span<const std::uint32_t>);

SLINGSHOT_INSTANTIATE_OPS(float)
SLINGSHOT_INSTANTIATE_OPS(double)

#undef SLINGSHOT_INSTANTIATE_OPS

}  // namespace slingshot
