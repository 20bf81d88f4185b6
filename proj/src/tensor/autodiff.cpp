#include "vpgc/tensor/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace vpgc::ad {

template <typename T>
Tape<T>::Tape(const Tensor<T>& root) {
  // Iterative post-order DFS; recursion depth would otherwise scale with
  // network depth times op count.
  std::unordered_set<const Node<T>*> visited;
  std::vector<std::pair<const Node<T>*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

template <typename T>
Tensor<T> GradientMap<T>::of(const Tensor<T>& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) return Tensor<T>::zeros(leaf.shape());
  return it->second;
}

template <typename T>
GradientMap<T> backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) throw ShapeError("backward: loss of shape " + shape_str(loss.shape()) + " is not a scalar");
  if (!loss.requires_grad()) throw std::invalid_argument("backward: loss is detached from the tape");

  Tape<T> tape(loss);
  const auto& order = tape.nodes();
  std::unordered_map<const Node<T>*, std::vector<T>> grads;
  // Remaining consumers per node so buffers can be released once consumed.
  std::unordered_map<const Node<T>*, int> pending;
  for (const Node<T>* n : order) {
    for (const auto& in : n->inputs) {
      if (in->requires_grad) ++pending[in.get()];
    }
  }
  grads[loss.node().get()] = std::vector<T>(1, T(1));

  GradientMap<T> result;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node<T>* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    std::vector<T> g = std::move(found->second);
    grads.erase(found);
    if (node->inputs.empty()) {
      result.set(node->id, Tensor<T>(node->shape, std::move(g)));
      continue;
    }
    std::vector<T*> gin(node->inputs.size(), nullptr);
    for (size_t k = 0; k < node->inputs.size(); ++k) {
      const Node<T>* in = node->inputs[k].get();
      if (!in->requires_grad) continue;
      auto& buf = grads[in];
      if (buf.empty()) buf.assign(in->value.size(), T(0));
      gin[k] = buf.data();
    }
    // The same input may appear twice (x * x); both slots then alias one
    // buffer, which accumulation handles correctly.
    node->backward(*node, g.data(), std::span<T* const>(gin));
  }
  return result;
}

GradCheckReport grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& fn,
                           const std::vector<Tensor<double>>& points, double tol, double step) {
  std::vector<Tensor<double>> leaves;
  leaves.reserve(points.size());
  for (const auto& p : points) leaves.push_back(p.as_leaf(true));
  Tensor<double> out = fn(leaves);
  if (out.numel() != 1) throw ShapeError("grad_check: function output " + shape_str(out.shape()) + " is not a scalar");

  GradientMap<double> grads;
  if (out.requires_grad()) grads = backward(out);

  GradCheckReport report;
  for (size_t p = 0; p < points.size(); ++p) {
    const Tensor<double> analytic = grads.of(leaves[p]);
    for (int64_t i = 0; i < points[p].numel(); ++i) {
      auto evaluate = [&](double delta) {
        std::vector<Tensor<double>> shifted;
        shifted.reserve(points.size());
        for (size_t q = 0; q < points.size(); ++q) {
          if (q != p) {
            shifted.push_back(points[q].detach());
            continue;
          }
          std::vector<double> v = points[q].values();
          v[i] += delta;
          shifted.emplace_back(points[q].shape(), std::move(v));
        }
        NoGradGuard guard;
        return fn(shifted).item();
      };
      const double numeric = (evaluate(step) - evaluate(-step)) / (2 * step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      const double rel = std::abs(a - numeric) / denom;
      report.entries.push_back({p, i, a, numeric, rel});
      report.max_rel_error = std::max(report.max_rel_error, rel);
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

template class Tape<float>;
template class Tape<double>;
template class GradientMap<float>;
template class GradientMap<double>;
template GradientMap<float> backward<float>(const Tensor<float>&);
template GradientMap<double> backward<double>(const Tensor<double>&);

}  // namespace vpgc::ad
