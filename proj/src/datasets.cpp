#include "slingshot/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>

#include <Eigen/Dense>

#include "slingshot/errors.hpp"

namespace slingshot::data {

namespace {

constexpr std::array<Operation, kOperationCount> kOperations = {
    Operation::add,
    Operation::sub,
    Operation::mul,
    Operation::div,
    Operation::a2_plus_b,
    Operation::a3_plus_b,
    Operation::a2_plus_b2,
    Operation::a2_plus_b2_plus_ab,
    Operation::a2_plus_b2_plus_ab_plus_b,
    Operation::a3_plus_ab,
    Operation::a3_plus_ab2_plus_b,
    Operation::div_if_b_odd_else_sub,
    Operation::s5_compose,
    Operation::s5_conjugate,
    Operation::s5_inverse_conjugate,
    Operation::add_if_a_even_else_mul,
    Operation::add_if_a_even_else_sub,
};

std::uint64_t mulmod(std::uint64_t x, std::uint64_t y, std::uint64_t p) { return (x * y) % p; }

std::string_view operation_symbol(Operation op) {
  switch (op) {
    case Operation::add: return "+";
    case Operation::sub: return "-";
    case Operation::mul: return "*";
    case Operation::div: return "/";
    case Operation::s5_compose: return "o";
    default: return operation_name(op);
  }
}

}  // namespace

const std::array<Operation, kOperationCount>& all_operations() { return kOperations; }

std::string_view operation_name(Operation op) {
  switch (op) {
    case Operation::add: return "add";
    case Operation::sub: return "sub";
    case Operation::mul: return "mul";
    case Operation::div: return "div";
    case Operation::a2_plus_b: return "a2_plus_b";
    case Operation::a3_plus_b: return "a3_plus_b";
    case Operation::a2_plus_b2: return "a2_plus_b2";
    case Operation::a2_plus_b2_plus_ab: return "a2_plus_b2_plus_ab";
    case Operation::a2_plus_b2_plus_ab_plus_b: return "a2_plus_b2_plus_ab_plus_b";
    case Operation::a3_plus_ab: return "a3_plus_ab";
    case Operation::a3_plus_ab2_plus_b: return "a3_plus_ab2_plus_b";
    case Operation::div_if_b_odd_else_sub: return "div_if_b_odd_else_sub";
    case Operation::s5_compose: return "s5_compose";
    case Operation::s5_conjugate: return "s5_conjugate";
    case Operation::s5_inverse_conjugate: return "s5_inverse_conjugate";
    case Operation::add_if_a_even_else_mul: return "add_if_a_even_else_mul";
    case Operation::add_if_a_even_else_sub: return "add_if_a_even_else_sub";
  }
  return "?";
}

Operation parse_operation(std::string_view name) {
  for (Operation op : kOperations) {
    if (operation_name(op) == name) return op;
  }
  throw ConfigError("unknown operation '" + std::string(name) + "'");
}

bool is_group_operation(Operation op) {
  return op == Operation::s5_compose || op == Operation::s5_conjugate ||
         op == Operation::s5_inverse_conjugate;
}

bool has_division(Operation op) { return op == Operation::div || op == Operation::div_if_b_odd_else_sub; }

bool is_nonstandard(Operation op) { return op == Operation::s5_inverse_conjugate; }

bool is_prime(std::uint32_t n) {
  if (n < 2) return false;
  for (std::uint32_t d = 2; d * d <= n; ++d) {
    if (n % d == 0) return false;
  }
  return true;
}

std::uint32_t mod_inverse(std::uint32_t b, std::uint32_t p) {
  std::int64_t old_r = b % p, r = p;
  std::int64_t old_s = 1, s = 0;
  while (r != 0) {
    const std::int64_t q = old_r / r;
    std::tie(old_r, r) = std::make_pair(r, old_r - q * r);
    std::tie(old_s, s) = std::make_pair(s, old_s - q * s);
  }
  if (old_r != 1) throw ContractError("mod_inverse: " + std::to_string(b) + " has no inverse mod " + std::to_string(p));
  const std::int64_t m = static_cast<std::int64_t>(p);
  return static_cast<std::uint32_t>(((old_s % m) + m) % m);
}

const std::vector<Permutation>& s5_elements() {
  static const std::vector<Permutation> elements = [] {
    std::vector<Permutation> out;
    Permutation perm = {0, 1, 2, 3, 4};
    do {
      out.push_back(perm);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
  }();
  return elements;
}

std::uint32_t s5_index(const Permutation& perm) {
  const auto& elems = s5_elements();
  auto it = std::lower_bound(elems.begin(), elems.end(), perm);
  if (it == elems.end() || *it != perm) throw ContractError("s5_index: not a permutation of 0..4");
  return static_cast<std::uint32_t>(it - elems.begin());
}

std::uint32_t s5_compose(std::uint32_t a, std::uint32_t b) {
  const auto& elems = s5_elements();
  const Permutation& pa = elems.at(a);
  const Permutation& pb = elems.at(b);
  Permutation out{};
  for (std::size_t i = 0; i < 5; ++i) out[i] = pa[pb[i]];
  return s5_index(out);
}

std::uint32_t s5_inverse(std::uint32_t a) {
  const Permutation& pa = s5_elements().at(a);
  Permutation out{};
  for (std::uint8_t i = 0; i < 5; ++i) out[pa[i]] = i;
  return s5_index(out);
}

std::uint32_t apply(const OpSpec& spec, std::uint32_t a, std::uint32_t b) {
  const std::uint64_t p = spec.p;
  const std::uint64_t x = a, y = b;
  const auto sq = [&](std::uint64_t v) { return mulmod(v, v, p); };
  const auto cube = [&](std::uint64_t v) { return mulmod(sq(v), v, p); };
  const auto add = [&](std::uint64_t u, std::uint64_t v) { return (u + v) % p; };
  const auto sub = [&](std::uint64_t u, std::uint64_t v) { return (u + p - v % p) % p; };
  const auto div = [&](std::uint64_t u, std::uint64_t v) {
    return mulmod(u, mod_inverse(static_cast<std::uint32_t>(v), spec.p), p);
  };
  std::uint64_t c = 0;
  switch (spec.op) {
    case Operation::add: c = add(x, y); break;
    case Operation::sub: c = sub(x, y); break;
    case Operation::mul: c = mulmod(x, y, p); break;
    case Operation::div: c = div(x, y); break;
    case Operation::a2_plus_b: c = add(sq(x), y); break;
    case Operation::a3_plus_b: c = add(cube(x), y); break;
    case Operation::a2_plus_b2: c = add(sq(x), sq(y)); break;
    case Operation::a2_plus_b2_plus_ab: c = add(add(sq(x), sq(y)), mulmod(x, y, p)); break;
    case Operation::a2_plus_b2_plus_ab_plus_b: c = add(add(add(sq(x), sq(y)), mulmod(x, y, p)), y); break;
    case Operation::a3_plus_ab: c = add(cube(x), mulmod(x, y, p)); break;
    case Operation::a3_plus_ab2_plus_b: c = add(add(cube(x), mulmod(x, sq(y), p)), y); break;
    case Operation::div_if_b_odd_else_sub: c = (y % 2 == 1) ? div(x, y) : sub(x, y); break;
    case Operation::add_if_a_even_else_mul: c = (x % 2 == 0) ? add(x, y) : mulmod(x, y, p); break;
    case Operation::add_if_a_even_else_sub: c = (x % 2 == 0) ? add(x, y) : sub(x, y); break;
    case Operation::s5_compose: return s5_compose(a, b);
    case Operation::s5_conjugate: return s5_compose(s5_compose(a, b), s5_inverse(a));
    case Operation::s5_inverse_conjugate: return s5_compose(s5_compose(s5_inverse(a), b), a);
  }
  return static_cast<std::uint32_t>(c);
}

EquationDataset enumerate(const OpSpec& spec) {
  EquationDataset ds;
  ds.spec = spec;
  std::uint32_t domain = 0;
  if (is_group_operation(spec.op)) {
    domain = static_cast<std::uint32_t>(kS5Order);
  } else {
    if (!is_prime(spec.p)) throw ConfigError("modulus " + std::to_string(spec.p) + " is not prime");
    domain = spec.p;
  }
  ds.op_token = domain;
  ds.eq_token = domain + 1;
  ds.vocab_size = domain + 2;
  const bool skip_zero_b = has_division(spec.op);
  ds.equations.reserve(static_cast<std::size_t>(domain) * domain);
  for (std::uint32_t a = 0; a < domain; ++a) {
    for (std::uint32_t b = 0; b < domain; ++b) {
      if (skip_zero_b && b == 0) continue;
      ds.equations.push_back({a, b, apply(spec, a, b)});
    }
  }
  ds.sequences.reserve(ds.equations.size() * kSequenceLength);
  for (const Equation& eq : ds.equations) {
    ds.sequences.insert(ds.sequences.end(), {eq.a, ds.op_token, eq.b, ds.eq_token, eq.c});
  }
  return ds;
}

EquationDataset split(EquationDataset dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0,1), got " + std::to_string(train_fraction));
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(order.size())));
  dataset.train_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  dataset.val_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  dataset.seed = seed;
  dataset.is_split = true;
  return dataset;
}

void write_equations(std::ostream& out, const EquationDataset& dataset) {
  const std::string_view symbol = operation_symbol(dataset.spec.op);
  for (const Equation& eq : dataset.equations) {
    out << eq.a << ' ' << symbol << ' ' << eq.b << " = " << eq.c << '\n';
  }
}

SyntheticData make_synthetic(const SyntheticSpec& spec) {
  if (spec.informative_dim == 0 || spec.informative_dim > spec.ambient_dim) {
    throw ConfigError("synthetic: informative_dim must lie in [1, ambient_dim]");
  }
  if (spec.classes == 0 || spec.classes > (std::size_t{1} << spec.informative_dim)) {
    throw ConfigError("synthetic: classes must not exceed the hypercube vertex count 2^informative_dim");
  }
  if (spec.samples_per_split == 0) throw ConfigError("synthetic: samples_per_split must be positive");

  const std::size_t d = spec.ambient_dim;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticData out;
  out.centers.resize(spec.classes, std::vector<double>(spec.informative_dim));
  for (std::size_t k = 0; k < spec.classes; ++k) {
    for (std::size_t j = 0; j < spec.informative_dim; ++j) out.centers[k][j] = ((k >> j) & 1U) ? 1.0 : -1.0;
  }

  Eigen::MatrixXd gaussian(d, d);
  for (Eigen::Index i = 0; i < gaussian.rows(); ++i) {
    for (Eigen::Index j = 0; j < gaussian.cols(); ++j) gaussian(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  out.rotation.resize(d * d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) out.rotation[i * d + j] = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

  std::uniform_int_distribution<std::size_t> pick_class(0, spec.classes - 1);
  const auto draw = [&](LabeledSet& set) {
    set.rows = spec.samples_per_split;
    set.dim = d;
    set.features.assign(set.rows * d, 0.0);
    set.labels.resize(set.rows);
    Eigen::VectorXd raw(d);
    for (std::size_t n = 0; n < set.rows; ++n) {
      const std::size_t k = pick_class(rng);
      set.labels[n] = static_cast<std::uint32_t>(k);
      for (std::size_t j = 0; j < d; ++j) {
        const double center = j < spec.informative_dim ? out.centers[k][j] : 0.0;
        raw(static_cast<Eigen::Index>(j)) = center + normal(rng);
      }
      const Eigen::VectorXd rotated = q * raw;
      std::copy(rotated.data(), rotated.data() + d, set.features.begin() + static_cast<std::ptrdiff_t>(n * d));
    }
  };
  draw(out.train);
  draw(out.val);
  return out;
}

LabeledSet read_cifar_binary(const std::vector<std::filesystem::path>& paths) {
  LabeledSet set;
  set.dim = kCifarImageBytes;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open CIFAR batch " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % kCifarRecordBytes != 0) {
      throw FormatError("CIFAR batch " + path.string() + ": length " + std::to_string(bytes.size()) +
                        " is not a multiple of " + std::to_string(kCifarRecordBytes));
    }
    const std::size_t records = bytes.size() / kCifarRecordBytes;
    for (std::size_t r = 0; r < records; ++r) {
      const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
      if (rec[0] >= kCifarClasses) {
        throw FormatError("CIFAR batch " + path.string() + ": record " + std::to_string(r) + " has label byte " +
                          std::to_string(rec[0]));
      }
      set.labels.push_back(rec[0]);
      for (std::size_t i = 1; i < kCifarRecordBytes; ++i) set.features.push_back(static_cast<double>(rec[i]) / 255.0);
    }
    set.rows += records;
  }
  return set;
}

ImageSubset load_cifar_binary(const std::vector<std::filesystem::path>& paths, std::size_t subset_size,
                              std::uint64_t seed) {
  const LabeledSet all = read_cifar_binary(paths);
  if (subset_size == 0 || subset_size > all.rows) {
    throw ConfigError("CIFAR subset size " + std::to_string(subset_size) + " outside [1, " +
                      std::to_string(all.rows) + "]");
  }
  std::vector<std::size_t> order(all.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(subset_size);

  ImageSubset out;
  out.sources = paths;
  out.subset_seed = seed;
  out.record_ids = order;
  out.images.rows = subset_size;
  out.images.dim = kCifarImageBytes;
  out.images.features.reserve(subset_size * kCifarImageBytes);
  for (std::size_t id : order) {
    const auto first = all.features.begin() + static_cast<std::ptrdiff_t>(id * kCifarImageBytes);
    out.images.features.insert(out.images.features.end(), first, first + static_cast<std::ptrdiff_t>(kCifarImageBytes));
    out.images.labels.push_back(all.labels[id]);
  }
  return out;
}

}  // namespace slingshot::data
