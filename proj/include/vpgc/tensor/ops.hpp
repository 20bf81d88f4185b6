#pragma once

#include <vector>

#include "vpgc/tensor/tensor.hpp"

// Differentiable primitives. Binary elementwise operations follow NumPy
// broadcasting. Every function records a tape node when an input requires a
// gradient and recording is enabled.
namespace vpgc::ad {

// Elementwise arithmetic.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);

template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> sin(const Tensor<T>& x);
template <typename T> Tensor<T> cos(const Tensor<T>& x);
template <typename T> Tensor<T> sqrt(const Tensor<T>& x);
template <typename T> Tensor<T> pow(const Tensor<T>& x, T exponent);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> softplus(const Tensor<T>& x);

/// (m, k) x (k, n), or batched (b, m, k) x (b, k, n).
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Reductions. `axes` may hold negative indices.
template <typename T> Tensor<T> sum(const Tensor<T>& x, std::vector<int> axes, bool keepdim = false);
template <typename T> Tensor<T> mean(const Tensor<T>& x, std::vector<int> axes, bool keepdim = false);
template <typename T> Tensor<T> sum_all(const Tensor<T>& x);
template <typename T> Tensor<T> mean_all(const Tensor<T>& x);
/// Maximum along one axis; the gradient flows to the first maximal entry.
template <typename T> Tensor<T> max(const Tensor<T>& x, int axis, bool keepdim = false);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, int axis);

// Layout.
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& order);
template <typename T> Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t length);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);
/// Cyclic shift: out[i] = x[(i - shift) mod n] along `axis`.
template <typename T> Tensor<T> roll(const Tensor<T>& x, int64_t shift, int axis);
/// out[..., j, ...] = x[..., indices[j], ...] along `axis`.
template <typename T> Tensor<T> index_select(const Tensor<T>& x, int axis, const std::vector<int64_t>& indices);
/// Adds slice j of `x` into slice indices[j] of a zero tensor whose `axis` has length `size`.
template <typename T> Tensor<T> scatter_add(const Tensor<T>& x, int axis, const std::vector<int64_t>& indices, int64_t size);

// Convolution and pooling. All are cross-correlations.
struct Conv2dParams {
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
};
/// x: (b, c, h, w). weight: (o, c, kh, kw) shared, or (b, o, c, kh, kw) per batch item.
template <typename T> Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, Conv2dParams params = {});
/// x: (b, c, l). weight: (o, c, k).
template <typename T> Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, int pad = 0);
/// Non-overlapping max pooling over the two trailing axes.
template <typename T> Tensor<T> max_pool2d(const Tensor<T>& x, int window);

/// Bilinear sampling with zeros outside the grid. x: (b, c, h, w); grid:
/// (b, ho, wo, 2) holding (column, row) pixel coordinates.
template <typename T> Tensor<T> grid_sample(const Tensor<T>& x, const Tensor<T>& grid);

/// Rotates the two trailing axes about the exact spatial centre
/// ((h-1)/2, (w-1)/2) by `angle` radians, bilinear with zero fill.
template <typename T> Tensor<T> bilinear_rotate(const Tensor<T>& x, double angle);

// Gradient routing.
template <typename T> Tensor<T> stop_gradient(const Tensor<T>& x);
/// Forward value `hard`, backward as if the output were `soft`.
template <typename T> Tensor<T> straight_through(const Tensor<T>& hard, const Tensor<T>& soft);

/// Mean over the batch of -log softmax(logits)[label]. logits: (b, k).
template <typename T> Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, T s) { return mul_scalar(a, s); }
template <typename T> Tensor<T> operator*(T s, const Tensor<T>& a) { return mul_scalar(a, s); }
template <typename T> Tensor<T> operator+(const Tensor<T>& a, T s) { return add_scalar(a, s); }

}  // namespace vpgc::ad
