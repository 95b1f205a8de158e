#include "slingshot/params.hpp"

#include <algorithm>

#include "slingshot/errors.hpp"

namespace slingshot {

const char* param_group_name(ParamGroup group) {
  return group == ParamGroup::classifier ? "classifier" : "representation";
}

template <typename T>
void BasicParamSet<T>::add(std::string name, BasicTensor<T> value, ParamGroup group) {
  if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value), group});
}

template <typename T>
const BasicTensor<T>& BasicParamSet<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

template <typename T>
BasicTensor<T>& BasicParamSet<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

template <typename T>
ParamGroup BasicParamSet<T>::group(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("unknown parameter '" + name + "'");
  return entries_[it->second].group;
}

template <typename T>
std::size_t BasicParamSet<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

template <typename T>
std::vector<std::string> BasicParamSet<T>::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

template <typename T>
std::vector<std::string> BasicParamSet<T>::names_in(ParamGroup group) const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.group == group) out.push_back(e.name);
  }
  return out;
}

template class BasicParamSet<float>;
template class BasicParamSet<double>;

const FlatSegment* FlatView::find(const std::string& name) const {
  for (const auto& s : segments) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const FlatSegment& FlatView::segment_at(std::size_t flat_index) const {
  if (flat_index >= total_len) {
    throw IndexError("flat index " + std::to_string(flat_index) + " past total length " + std::to_string(total_len));
  }
  auto it = std::upper_bound(segments.begin(), segments.end(), flat_index,
                             [](std::size_t i, const FlatSegment& s) { return i < s.offset; });
  return *(it - 1);
}

template <typename T>
FlatView make_flat_view(const BasicParamSet<T>& params) {
  FlatView view;
  for (const auto& e : params.entries()) {
    view.segments.push_back(FlatSegment{e.name, view.total_len, e.value.numel(), e.value.shape(), e.group});
    view.total_len += e.value.numel();
  }
  return view;
}

template <typename T>
void flatten_into(const BasicParamSet<T>& params, std::span<T> out) {
  if (out.size() != params.total_elements()) {
    throw ShapeError("flatten: buffer of " + std::to_string(out.size()) + " for " +
                     std::to_string(params.total_elements()) + " parameters");
  }
  std::size_t offset = 0;
  for (const auto& e : params.entries()) {
    std::copy(e.value.data().begin(), e.value.data().end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += e.value.numel();
  }
}

template <typename T>
std::pair<std::vector<T>, FlatView> flatten_params(const BasicParamSet<T>& params) {
  FlatView view = make_flat_view(params);
  std::vector<T> flat(view.total_len);
  flatten_into<T>(params, flat);
  return {std::move(flat), std::move(view)};
}

template <typename T>
BasicParamSet<T> unflatten(std::span<const T> flat, const FlatView& view) {
  if (flat.size() != view.total_len) {
    throw ShapeError("unflatten: vector of length " + std::to_string(flat.size()) + " for view of length " +
                     std::to_string(view.total_len));
  }
  BasicParamSet<T> out;
  for (const auto& s : view.segments) {
    auto first = flat.begin() + static_cast<std::ptrdiff_t>(s.offset);
    out.add(s.name, BasicTensor<T>(s.shape, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(s.length))),
            s.group);
  }
  return out;
}

template <typename T>
void unflatten_into(std::span<const T> flat, const FlatView& view, BasicParamSet<T>& params) {
  if (flat.size() != view.total_len) {
    throw ShapeError("unflatten: vector of length " + std::to_string(flat.size()) + " for view of length " +
                     std::to_string(view.total_len));
  }
  for (const auto& s : view.segments) {
    auto& dst = params.at(s.name);
    if (dst.numel() != s.length) throw ShapeError("unflatten: segment '" + s.name + "' length mismatch");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(s.offset), s.length, dst.ptr());
  }
}

std::vector<std::size_t> group_indices(const FlatView& view, ParamGroup group) {
  std::vector<std::size_t> out;
  for (const auto& s : view.segments) {
    if (s.group != group) continue;
    for (std::size_t i = 0; i < s.length; ++i) out.push_back(s.offset + i);
  }
  return out;
}

#define SLINGSHOT_INSTANTIATE_FLAT(T)                                                   \
  template FlatView make_flat_view<T>(const BasicParamSet<T>&);                         \
  template void flatten_into<T>(const BasicParamSet<T>&, std::span<T>);                 \
  template std::pair<std::vector<T>, FlatView> flatten_params<T>(const BasicParamSet<T>&); \
  template BasicParamSet<T> unflatten<T>(std::span<const T>, const FlatView&);          \
  template void unflatten_into<T>(std::span<const T>, const FlatView&, BasicParamSet<T>&);

SLINGSHOT_INSTANTIATE_FLAT(float)
SLINGSHOT_INSTANTIATE_FLAT(double)

#undef SLINGSHOT_INSTANTIATE_FLAT

}  // namespace slingshot
