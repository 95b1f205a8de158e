#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slingshot/tensor.hpp"

namespace slingshot {

enum class ParamGroup { representation, classifier };

const char* param_group_name(ParamGroup group);

// Named parameter tensors in declaration order. The group tag of an entry is
// fixed when it is added.
template <typename T>
class BasicParamSet {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> value;
    ParamGroup group = ParamGroup::representation;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  void add(std::string name, BasicTensor<T> value, ParamGroup group);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const BasicTensor<T>& at(const std::string& name) const;
  BasicTensor<T>& at(const std::string& name);
  BasicTensor<T>& value(std::size_t i) { return entries_.at(i).value; }
  ParamGroup group(const std::string& name) const;
  std::size_t total_elements() const;
  std::vector<std::string> names() const;
  std::vector<std::string> names_in(ParamGroup group) const;

  template <typename U>
  BasicParamSet<U> cast() const {
    BasicParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.group);
    return out;
  }

  friend bool operator==(const BasicParamSet& a, const BasicParamSet& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

using ParamSet = BasicParamSet<double>;

struct FlatSegment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
  Shape shape;
  ParamGroup group = ParamGroup::representation;
  friend bool operator==(const FlatSegment&, const FlatSegment&) = default;
};

struct FlatView {
  std::vector<FlatSegment> segments;
  std::size_t total_len = 0;

  const FlatSegment* find(const std::string& name) const;
  // Segment holding a flat index; throws IndexError past the end.
  const FlatSegment& segment_at(std::size_t flat_index) const;
  friend bool operator==(const FlatView&, const FlatView&) = default;
};

template <typename T>
FlatView make_flat_view(const BasicParamSet<T>& params);

template <typename T>
std::pair<std::vector<T>, FlatView> flatten_params(const BasicParamSet<T>& params);

// Into an existing buffer of length total_len.
template <typename T>
void flatten_into(const BasicParamSet<T>& params, std::span<T> out);

// Throws ShapeError when the vector length differs from the view's total.
template <typename T>
BasicParamSet<T> unflatten(std::span<const T> flat, const FlatView& view);

// Copies a flat vector back into params with the same layout.
template <typename T>
void unflatten_into(std::span<const T> flat, const FlatView& view, BasicParamSet<T>& params);

// Flat indices belonging to a group, in view order.
std::vector<std::size_t> group_indices(const FlatView& view, ParamGroup group);

extern template class BasicParamSet<float>;
extern template class BasicParamSet<double>;

}  // namespace slingshot
