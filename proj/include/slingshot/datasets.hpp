#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace slingshot::data {

// The seventeen binary operations of the algorithmic grokking benchmark.
enum class Operation {
  add,
  sub,
  mul,
  div,
  a2_plus_b,
  a3_plus_b,
  a2_plus_b2,
  a2_plus_b2_plus_ab,
  a2_plus_b2_plus_ab_plus_b,
  a3_plus_ab,
  a3_plus_ab2_plus_b,
  div_if_b_odd_else_sub,
  s5_compose,
  s5_conjugate,
  // Nonstandard: the published formula references an undefined symbol; this
  // variant computes a^-1 * b * a and is never reported as a parity result.
  s5_inverse_conjugate,
  add_if_a_even_else_mul,
  add_if_a_even_else_sub,
};

inline constexpr std::size_t kOperationCount = 17;
inline constexpr std::size_t kS5Order = 120;
inline constexpr std::size_t kSequenceLength = 5;
inline constexpr std::size_t kAnswerIndex = 4;

const std::array<Operation, kOperationCount>& all_operations();
std::string_view operation_name(Operation op);
Operation parse_operation(std::string_view name);
bool is_group_operation(Operation op);
bool has_division(Operation op);
bool is_nonstandard(Operation op);

struct OpSpec {
  Operation op = Operation::div;
  std::uint32_t p = 97;  // ignored for S5 operations
};

bool is_prime(std::uint32_t n);
// Modular inverse by the extended Euclidean algorithm; b must be nonzero mod p.
std::uint32_t mod_inverse(std::uint32_t b, std::uint32_t p);
// Evaluates c = F(a, b) for one operation.
std::uint32_t apply(const OpSpec& spec, std::uint32_t a, std::uint32_t b);

// S5 elements are indexed 0..119 in lexicographic order of the permutation
// images (0,1,2,3,4) ... (4,3,2,1,0).
using Permutation = std::array<std::uint8_t, 5>;
const std::vector<Permutation>& s5_elements();
std::uint32_t s5_index(const Permutation& perm);
// (a * b)(i) = a(b(i))
std::uint32_t s5_compose(std::uint32_t a, std::uint32_t b);
std::uint32_t s5_inverse(std::uint32_t a);

struct Equation {
  std::uint32_t a;
  std::uint32_t b;
  std::uint32_t c;
};

struct EquationDataset {
  OpSpec spec;
  std::size_t vocab_size = 0;
  std::uint32_t op_token = 0;
  std::uint32_t eq_token = 0;
  std::vector<Equation> equations;
  // Row-major [equations x kSequenceLength] token ids: (a)(op)(b)(=)(c).
  std::vector<std::uint32_t> sequences;
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> val_ids;
  std::uint64_t seed = 0;
  bool is_split = false;

  std::size_t size() const noexcept { return equations.size(); }
  std::uint32_t answer(std::size_t i) const { return sequences[i * kSequenceLength + kAnswerIndex]; }
};

// Complete enumeration of the operation's domain, unsplit.
EquationDataset enumerate(const OpSpec& spec);
// Seeded uniform shuffle then prefix split; |train| = round(fraction * N).
EquationDataset split(EquationDataset dataset, double train_fraction, std::uint64_t seed);
// One "a op b = c" line per equation, in enumeration order.
void write_equations(std::ostream& out, const EquationDataset& dataset);

struct SyntheticSpec {
  std::size_t ambient_dim = 128;
  std::size_t informative_dim = 3;
  std::size_t classes = 8;
  std::size_t samples_per_split = 256;
  std::uint64_t seed = 0;
};

struct LabeledSet {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> features;  // row-major [rows x dim]
  std::vector<std::uint32_t> labels;
};

struct SyntheticData {
  LabeledSet train;
  LabeledSet val;
  // Orthogonal map applied to every sample (row-major ambient x ambient);
  // features = rotation * raw.
  std::vector<double> rotation;
  // Hypercube vertex coordinates (+-1) of each class in the informative block.
  std::vector<std::vector<double>> centers;
};

SyntheticData make_synthetic(const SyntheticSpec& spec);

inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarClasses = 10;

struct ImageSubset {
  LabeledSet images;  // pixels scaled into [0,1], 3072 per image
  std::vector<std::filesystem::path> sources;
  std::vector<std::size_t> record_ids;  // indices into the concatenated files
  std::uint64_t subset_seed = 0;
};

// Reads every record of the given CIFAR-10 binary batches.
LabeledSet read_cifar_binary(const std::vector<std::filesystem::path>& paths);
ImageSubset load_cifar_binary(const std::vector<std::filesystem::path>& paths, std::size_t subset_size,
                              std::uint64_t seed);

}  // namespace slingshot::data
