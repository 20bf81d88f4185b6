#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vpgc::ad {

using Shape = std::vector<int64_t>;
using NodeId = uint64_t;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operand shapes do not fit a primitive's signature.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised in checked mode when a primitive produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct Node;

/// Accumulates the input gradients of one recorded primitive. `grad_in[k]`
/// is null when input k does not participate in differentiation.
template <typename T>
using BackwardFn =
    std::function<void(const Node<T>& self, const T* grad_out, std::span<T* const> grad_in)>;

template <typename T>
struct Node {
  NodeId id = 0;
  Shape shape;
  std::vector<T> value;
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<const Node<T>>> inputs;
  BackwardFn<T> backward;
};

/// Immutable handle to a dense row-major array that may participate in
/// reverse-mode differentiation. Copies share the underlying node.
template <typename T>
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value, bool requires_grad = false);

  /// Builds the output of a primitive. A tape node (with `backward`) is
  /// retained only when gradient recording is enabled and some input
  /// requires a gradient.
  static Tensor record(std::string op, Shape shape, std::vector<T> value,
                       const std::vector<Tensor>& inputs, BackwardFn<T> backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int axis) const;
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  std::span<const T> data() const { return node_->value; }
  const std::vector<T>& values() const& { return node_->value; }
  // A temporary tensor may own the last reference to its storage.
  std::vector<T> values() const&& { return node_->value; }
  T item() const;
  T operator[](int64_t flat_index) const { return node_->value[flat_index]; }

  bool requires_grad() const { return node_->requires_grad; }
  NodeId id() const { return node_->id; }
  const std::string& op() const { return node_->op; }
  const std::shared_ptr<const Node<T>>& node() const { return node_; }

  /// Same values, cut from the tape.
  Tensor detach() const;
  /// Fresh leaf with the same values.
  Tensor as_leaf(bool requires_grad) const;

 private:
  explicit Tensor(std::shared_ptr<const Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node<T>> node_;
};

/// Normalizes a possibly negative axis and validates it against `rank`.
int normalize_axis(int axis, int rank, const char* op);

bool grad_enabled();
bool checked_mode();
void set_checked_mode(bool on);

/// Disables tape recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Enables NaN/Inf detection after every primitive for the guard's lifetime.
class CheckedModeGuard {
 public:
  explicit CheckedModeGuard(bool on = true);
  ~CheckedModeGuard();
  CheckedModeGuard(const CheckedModeGuard&) = delete;
  CheckedModeGuard& operator=(const CheckedModeGuard&) = delete;

 private:
  bool previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace vpgc::ad
