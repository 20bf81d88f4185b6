#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "vpgc/tensor/tensor.hpp"

namespace vpgc::ad {

/// Topologically ordered view of the graph reachable from one root: every
/// node appears after all of its inputs.
template <typename T>
class Tape {
 public:
  explicit Tape(const Tensor<T>& root);

  const std::vector<const Node<T>*>& nodes() const { return order_; }
  size_t size() const { return order_.size(); }

 private:
  std::vector<const Node<T>*> order_;
};

/// Gradients keyed by leaf node id.
template <typename T>
class GradientMap {
 public:
  void set(NodeId id, Tensor<T> grad) { grads_.insert_or_assign(id, std::move(grad)); }
  bool contains(NodeId id) const { return grads_.count(id) > 0; }
  /// Gradient for `leaf`; zeros of its shape when the loss did not reach it.
  Tensor<T> of(const Tensor<T>& leaf) const;
  size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<NodeId, Tensor<T>> grads_;
};

/// Reverse pass from a scalar loss. Nodes are never mutated, so calling this
/// twice on the same graph yields identical results.
template <typename T>
GradientMap<T> backward(const Tensor<T>& loss);

struct GradCheckEntry {
  size_t parameter = 0;
  int64_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0;
  bool passed = false;
};

/// Compares analytic gradients of `fn` at `points` with central differences
/// (step 1e-5). Relative error is |a - n| / max(|a|, |n|, 1e-3).
GradCheckReport grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& fn,
                           const std::vector<Tensor<double>>& points, double tol, double step = 1e-5);

extern template class Tape<float>;
extern template class Tape<double>;
extern template class GradientMap<float>;
extern template class GradientMap<double>;

}  // namespace vpgc::ad
