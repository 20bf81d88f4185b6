#include "vpgc/tensor/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace vpgc::ad {

namespace {

std::atomic<NodeId> g_next_id{1};
thread_local bool t_grad_enabled = true;
thread_local bool t_checked_mode = false;

NodeId next_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

}  // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

int normalize_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  }
  return a;
}

bool grad_enabled() { return t_grad_enabled; }
bool checked_mode() { return t_checked_mode; }
void set_checked_mode(bool on) { t_checked_mode = on; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

CheckedModeGuard::CheckedModeGuard(bool on) : previous_(t_checked_mode) { t_checked_mode = on; }
CheckedModeGuard::~CheckedModeGuard() { t_checked_mode = previous_; }

template <typename T>
Tensor<T>::Tensor() : Tensor(Shape{}, std::vector<T>{T(0)}, false) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
  }
  if (vpgc::ad::numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(vpgc::ad::numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<Node<T>>();
  node->id = next_id();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->op = "leaf";
  node_ = std::move(node);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  auto n = vpgc::ad::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::ones(Shape shape) {
  auto n = vpgc::ad::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(1)));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  auto n = vpgc::ad::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::record(std::string op, Shape shape, std::vector<T> value,
                            const std::vector<Tensor>& inputs, BackwardFn<T> backward) {
  if (vpgc::ad::numel(shape) != static_cast<int64_t>(value.size())) {
    throw ShapeError(op + ": internal size mismatch for " + shape_str(shape));
  }
  if (t_checked_mode) {
    for (size_t i = 0; i < value.size(); ++i) {
      if (!std::isfinite(value[i])) {
        throw NumericError(op + ": non-finite value at flat index " + std::to_string(i));
      }
    }
  }
  auto node = std::make_shared<Node<T>>();
  node->id = next_id();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = std::move(op);
  bool any = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) any = any || in.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::shared_ptr<const Node<T>>(std::move(node)));
}

template <typename T>
int64_t Tensor<T>::dim(int axis) const {
  return node_->shape[normalize_axis(axis, rank(), "dim")];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value, false);
}

template <typename T>
Tensor<T> Tensor<T>::as_leaf(bool requires_grad) const {
  return Tensor(node_->shape, node_->value, requires_grad);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace vpgc::ad
