#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "slingshot/tensor.hpp"

namespace slingshot {

template <typename T>
class BasicTape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives
// and has not been cleared.
template <typename T>
class BasicVar {
 public:
  BasicVar() = default;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  BasicTape<T>* tape() const noexcept { return tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class BasicTape<T>;
  BasicVar(BasicTape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  BasicTape<T>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  using VarT = BasicVar<T>;

  // What a backward closure sees for one node.
  class Context {
   public:
    const TensorT& grad_output() const { return tape_.nodes_[node_].grad; }
    const TensorT& output() const { return tape_.nodes_[node_].value; }
    const TensorT& input(std::size_t i) const { return tape_.nodes_[input_id(i)].value; }
    // Accumulator for the i-th input's gradient, or nullptr when that input
    // does not need one. Contributions must be added, never assigned.
    TensorT* input_grad(std::size_t i) { return tape_.grad_slot(input_id(i)); }

   private:
    friend class BasicTape;
    Context(BasicTape& tape, std::uint32_t node) : tape_(tape), node_(node) {}
    std::uint32_t input_id(std::size_t i) const { return tape_.nodes_[node_].inputs.at(i); }

    BasicTape& tape_;
    std::uint32_t node_;
  };

  using Backward = std::function<void(Context&)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  VarT constant(TensorT value);
  // Named leaf whose gradient is reported by backward().
  VarT parameter(std::string name, TensorT value);
  // Ops call this. The node requires grad iff any input does; otherwise the
  // closure is dropped.
  VarT record(TensorT value, std::initializer_list<VarT> inputs, Backward backward);
  VarT record(TensorT value, const std::vector<VarT>& inputs, Backward backward);

  // Reverse sweep from a single-element loss. Returns a gradient for every
  // named parameter (zeros when the loss does not depend on it) and clears
  // the tape.
  std::map<std::string, TensorT> backward(VarT loss);

  void clear();
  std::size_t size() const noexcept { return nodes_.size(); }
  const TensorT& value(std::uint32_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::uint32_t id) const { return nodes_.at(id).requires_grad; }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    std::vector<std::uint32_t> inputs;
    Backward backward;
    std::string name;
    bool requires_grad = false;
    bool leaf = false;
  };

  VarT push(Node node);
  TensorT* grad_slot(std::uint32_t id);
  void check_owned(const VarT& v) const;

  std::vector<Node> nodes_;
};

template <typename T>
const BasicTensor<T>& BasicVar<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool BasicVar<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

// Primitive ops. Element-wise binary ops accept equal shapes or a right (or
// left) operand whose shape is a suffix of the other's, which is then
// repeated over the leading dimensions.
template <typename T> BasicVar<T> add(BasicVar<T> a, BasicVar<T> b);
template <typename T> BasicVar<T> sub(BasicVar<T> a, BasicVar<T> b);
template <typename T> BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b);
template <typename T> BasicVar<T> scalar_mul(BasicVar<T> a, T s);
// [m,k]x[k,n], [b,m,k]x[b,k,n], or [b,m,k]x[k,n].
template <typename T> BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b);
template <typename T> BasicVar<T> relu(BasicVar<T> a);
template <typename T> BasicVar<T> softmax_lastdim(BasicVar<T> a);
template <typename T> BasicVar<T> layer_norm(BasicVar<T> x, BasicVar<T> gain, BasicVar<T> bias);
// Rows of table [V,D] gathered by ids; result shape is index_shape + [D].
template <typename T>
BasicVar<T> embedding_lookup(BasicVar<T> table, std::span<const std::uint32_t> ids, const Shape& index_shape);
template <typename T> BasicVar<T> concat(const std::vector<BasicVar<T>>& parts, std::size_t axis);
template <typename T> BasicVar<T> slice(BasicVar<T> a, std::size_t axis, std::size_t start, std::size_t length);
// Swaps the last two dimensions.
template <typename T> BasicVar<T> transpose(BasicVar<T> a);
template <typename T> BasicVar<T> reshape(BasicVar<T> a, Shape shape);
template <typename T> BasicVar<T> sum(BasicVar<T> a);
template <typename T> BasicVar<T> mean(BasicVar<T> a);
// Each last-dim row divided by its Euclidean norm; a zero row throws
// SingularInputError.
template <typename T> BasicVar<T> normalize_rows(BasicVar<T> a);
// Mean over rows of -log softmax(logits)[target]; logits [batch, vocab].
template <typename T> BasicVar<T> cross_entropy(BasicVar<T> logits, std::span<const std::uint32_t> targets);

// Value-only helpers shared with evaluation code.
template <typename T> void softmax_rows(std::span<const T> in, std::span<T> out, std::size_t cols);
// Per-row -log softmax(row)[target].
template <typename T>
std::vector<T> cross_entropy_rows(const BasicTensor<T>& logits, std::span<const std::uint32_t> targets);

using Tape = BasicTape<double>;
using Var = BasicVar<double>;

extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace slingshot
