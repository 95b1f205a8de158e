#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "slingshot/autodiff.hpp"
#include "slingshot/params.hpp"

namespace slingshot {

enum class ModelKind { mlp, deep_linear, transformer };
enum class HeadMode { linear, normalized };

std::string_view model_kind_name(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);
std::string_view head_mode_name(HeadMode mode);
HeadMode parse_head_mode(std::string_view name);

struct ModelSpec {
  ModelKind kind = ModelKind::mlp;
  std::size_t depth = 4;        // linear layers (mlp, deep_linear) or decoder blocks
  std::size_t width = 256;
  std::size_t heads = 4;        // transformer only
  std::size_t vocab = 0;        // transformer only
  std::size_t seq_len = 5;      // transformer only
  std::size_t input_dim = 128;  // mlp and deep_linear only
  std::size_t num_classes = 8;  // the transformer predicts over its vocabulary
  std::size_t mlp_ratio = 4;    // transformer feed-forward expansion
  HeadMode head_mode = HeadMode::linear;
  double tau = 1.0;

  // Throws ConfigError naming the offending field.
  void validate() const;
  std::size_t output_dim() const { return kind == ModelKind::transformer ? vocab : num_classes; }
  // Sequence position whose output predicts the final token.
  std::size_t answer_position() const { return seq_len - 2; }
};

// Deterministic initialization: weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
// biases 0, embeddings N(0, 0.02), layer-norm gains 1.
template <typename T>
BasicParamSet<T> build(const ModelSpec& spec, std::uint64_t seed);

std::size_t parameter_count(const ModelSpec& spec);

template <typename T>
struct BasicBatch {
  std::size_t rows = 0;
  std::vector<T> features;            // [rows x input_dim] for mlp and deep_linear
  std::vector<std::uint32_t> tokens;  // [rows x seq_len] for the transformer
  std::vector<std::uint32_t> targets;
};

using Batch = BasicBatch<double>;

struct ForwardOptions {
  // Transformer: also produce logits at every position, [rows, seq_len, vocab].
  bool all_positions = false;
};

template <typename T>
struct ModelOutput {
  BasicVar<T> logits;                // [rows, output_dim] at the answer position
  std::vector<BasicVar<T>> features;  // one per layer or decoder block
  BasicVar<T> position_logits;
};

template <typename T>
using BoundParams = std::map<std::string, BasicVar<T>>;

// Places every parameter on the tape, as a named gradient leaf or a constant.
template <typename T>
BoundParams<T> bind(BasicTape<T>& tape, const BasicParamSet<T>& params, bool requires_grad);

template <typename T>
ModelOutput<T> forward(BasicTape<T>& tape, const ModelSpec& spec, const BoundParams<T>& params,
                       const BasicBatch<T>& batch, const ForwardOptions& options = {});

template <typename T>
struct BasicForwardTrace {
  std::vector<BasicTensor<T>> features;
  BasicTensor<T> logits;
  BasicTensor<T> position_logits;  // empty unless requested
};

template <typename T>
BasicForwardTrace<T> trace(const ModelSpec& spec, const BasicParamSet<T>& params, const BasicBatch<T>& batch,
                           const ForwardOptions& options = {});

// logits[i][k] = cos(f_i, w_k) / tau with f [..., D] and weight [K, D].
// Throws SingularInputError on a zero-norm feature or weight row.
template <typename T>
BasicVar<T> normalized_head(BasicVar<T> features, BasicVar<T> weight, T tau);

// (representation names, classifier names), each in declaration order.
template <typename T>
std::pair<std::vector<std::string>, std::vector<std::string>> param_groups(const BasicParamSet<T>& params);

template <typename T>
struct LossAndGradient {
  T loss = T(0);
  std::vector<T> gradient;  // flat, in the view's order
};

// Mean cross-entropy of the batch and its gradient.
template <typename T>
LossAndGradient<T> loss_and_gradient(const ModelSpec& spec, const BasicParamSet<T>& params, const FlatView& view,
                                     const BasicBatch<T>& batch);

}  // namespace slingshot
