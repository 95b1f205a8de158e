#pragma once

#include <cstddef>

#include <Eigen/Dense>

// Eigen picks vectorized reduction order from operand addresses when a map is
// unaligned, so products over std::vector storage could differ from run to
// run. Operands are copied into Eigen-owned (aligned) matrices first, which
// fixes the order for given shapes.
namespace slingshot::dense {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
RowMat<T> load(const T* p, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const RowMat<T>>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
void store(const RowMat<T>& m, T* out) {
  const T* src = m.data();
  for (Eigen::Index i = 0, n = m.size(); i < n; ++i) out[i] = src[i];
}

template <typename T>
void accumulate(const RowMat<T>& m, T* out) {
  const T* src = m.data();
  for (Eigen::Index i = 0, n = m.size(); i < n; ++i) out[i] += src[i];
}

}  // namespace slingshot::dense
