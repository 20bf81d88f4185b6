#include "vpgc/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace vpgc::ad {

namespace {

std::vector<int64_t> contiguous_strides(const Shape& shape) {
  std::vector<int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) s[i] = s[i + 1] * shape[i + 1];
  return s;
}

// Strides of `in` expressed over the axes of `out` (rank-aligned from the
// right), with zero stride on broadcast axes.
std::vector<int64_t> aligned_strides(const Shape& in, const Shape& out) {
  const auto s = contiguous_strides(in);
  std::vector<int64_t> a(out.size(), 0);
  const size_t offset = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i) a[offset + i] = in[i] == 1 ? 0 : s[i];
  return a;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b) + " at axis " + std::to_string(i));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Calls f(out_index, a_offset, b_offset) for every element of `out`.
template <typename F>
void for_each_pair(const Shape& out, const std::vector<int64_t>& sa, const std::vector<int64_t>& sb, F&& f) {
  const int r = static_cast<int>(out.size());
  if (r == 0) {
    f(int64_t{0}, int64_t{0}, int64_t{0});
    return;
  }
  const int64_t inner = out[r - 1];
  const int64_t step_a = sa[r - 1];
  const int64_t step_b = sb[r - 1];
  const int64_t outer = numel(out) / inner;
  std::vector<int64_t> idx(r, 0);
  int64_t ia = 0, ib = 0, io = 0;
  for (int64_t o = 0; o < outer; ++o) {
    int64_t a = ia, b = ib;
    for (int64_t k = 0; k < inner; ++k) {
      f(io++, a, b);
      a += step_a;
      b += step_b;
    }
    for (int d = r - 2; d >= 0; --d) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Splits `shape` around `axis` into (outer, length, inner) extents.
struct AxisSplit {
  int64_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T, typename F, typename GA, typename GB>
Tensor<T> binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f, GA grad_a, GB grad_b) {
  Shape out = broadcast_shape(a.shape(), b.shape(), name);
  auto sa = aligned_strides(a.shape(), out);
  auto sb = aligned_strides(b.shape(), out);
  std::vector<T> value(numel(out));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  if (a.shape() == b.shape()) {
    for (size_t i = 0; i < value.size(); ++i) value[i] = f(pa[i], pb[i]);
  } else {
    for_each_pair(out, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) { value[io] = f(pa[ia], pb[ib]); });
  }
  return Tensor<T>::record(
      name, out, std::move(value), {a, b},
      [sa, sb, grad_a, grad_b](const Node<T>& self, const T* g, std::span<T* const> gin) {
        const T* xa = self.inputs[0]->value.data();
        const T* xb = self.inputs[1]->value.data();
        const T* y = self.value.data();
        for_each_pair(self.shape, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) {
          if (gin[0]) gin[0][ia] += grad_a(xa[ia], xb[ib], y[io], g[io]);
          if (gin[1]) gin[1][ib] += grad_b(xa[ia], xb[ib], y[io], g[io]);
        });
      });
}

template <typename T, typename F, typename DF>
Tensor<T> unary(const char* name, const Tensor<T>& x, F f, DF df) {
  std::vector<T> value(x.numel());
  const T* px = x.data().data();
  for (size_t i = 0; i < value.size(); ++i) value[i] = f(px[i]);
  return Tensor<T>::record(name, x.shape(), std::move(value), {x},
                           [df](const Node<T>& self, const T* g, std::span<T* const> gin) {
                             const T* xv = self.inputs[0]->value.data();
                             const T* y = self.value.data();
                             const size_t n = self.value.size();
                             for (size_t i = 0; i < n; ++i) gin[0][i] += g[i] * df(xv[i], y[i]);
                           });
}

// sin/cos through Eigen's packet math; SIREN kernels evaluate millions of these per step.
// Eigen peels scalar iterations up to the first aligned address, and scalar and
// packet sin differ in the last bit, so all Eigen work happens on owned
// (aligned) buffers to keep results independent of where a tensor lives.
template <typename T>
Tensor<T> trig(const char* name, const Tensor<T>& x, bool cosine) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const auto n = static_cast<Eigen::Index>(x.numel());
  const Arr in = Eigen::Map<const Arr>(x.data().data(), n);
  const Arr out = cosine ? Arr(in.cos()) : Arr(in.sin());
  std::vector<T> value(out.data(), out.data() + n);
  return Tensor<T>::record(name, x.shape(), std::move(value), {x},
                           [cosine](const Node<T>& self, const T* g, std::span<T* const> gin) {
                             const auto m = static_cast<Eigen::Index>(self.value.size());
                             const Arr xv = Eigen::Map<const Arr>(self.inputs[0]->value.data(), m);
                             const Arr gv = Eigen::Map<const Arr>(g, m);
                             const Arr d = cosine ? Arr(-(gv * xv.sin())) : Arr(gv * xv.cos());
                             for (Eigen::Index i = 0; i < m; ++i) gin[0][i] += d[i];
                           });
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Aligned copy of a row-major block; see trig for why products avoid Maps.
template <typename T>
RowMat<T> owned(const T* p, int64_t rows, int64_t cols) {
  return Eigen::Map<const RowMat<T>>(p, rows, cols);
}

template <typename T>
void store(const RowMat<T>& m, T* dst) {
  std::copy(m.data(), m.data() + m.size(), dst);
}

template <typename T>
void accumulate(const RowMat<T>& m, T* dst) {
  const T* src = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) dst[i] += src[i];
}

std::vector<bool> axis_mask(std::vector<int> axes, int rank, const char* op) {
  std::vector<bool> mask(rank, false);
  for (int a : axes) mask[normalize_axis(a, rank, op)] = true;
  return mask;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T, T g) { return g; },
      [](T, T, T, T g) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T, T g) { return g; },
      [](T, T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T, T g) { return g * y; },
      [](T x, T, T, T g) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T, T g) { return g / y; },
      [](T, T y, T out, T g) { return -g * out / y; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary<T>("mul_scalar", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary<T>("neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sin(const Tensor<T>& x) {
  return trig<T>("sin", x, false);
}

template <typename T>
Tensor<T> cos(const Tensor<T>& x) {
  return trig<T>("cos", x, true);
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary<T>("sqrt", x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> pow(const Tensor<T>& x, T exponent) {
  return unary<T>(
      "pow", x, [exponent](T v) { return std::pow(v, exponent); },
      [exponent](T v, T) { return exponent * std::pow(v, exponent - T(1)); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>("relu", x, [](T v) { return v < T(0) ? T(0) : v; },  // NaN passes through
                  [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary<T>(
      "softplus", x, [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](T v, T) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool batched = a.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3))) {
    throw ShapeError("matmul: expected two rank-2 or two rank-3 operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const int64_t batch = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != batch) {
    throw ShapeError("matmul: batch axis 0 differs: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const int64_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k) {
    throw ShapeError("matmul: contraction axes differ: " + shape_str(a.shape()) + " axis -1 vs " +
                     shape_str(b.shape()) + " axis -2");
  }
  std::vector<T> value(batch * m * n);
  for (int64_t i = 0; i < batch; ++i) {
    const RowMat<T> C = owned(a.data().data() + i * m * k, m, k) * owned(b.data().data() + i * k * n, k, n);
    store(C, value.data() + i * m * n);
  }
  Shape out = batched ? Shape{batch, m, n} : Shape{m, n};
  return Tensor<T>::record("matmul", out, std::move(value), {a, b},
                           [batch, m, k, n](const Node<T>& self, const T* g, std::span<T* const> gin) {
                             for (int64_t i = 0; i < batch; ++i) {
                               const auto G = owned(g + i * m * n, m, n);
                               if (gin[0]) {
                                 const auto B = owned(self.inputs[1]->value.data() + i * k * n, k, n);
                                 accumulate<T>(G * B.transpose(), gin[0] + i * m * k);
                               }
                               if (gin[1]) {
                                 const auto A = owned(self.inputs[0]->value.data() + i * m * k, m, k);
                                 accumulate<T>(A.transpose() * G, gin[1] + i * k * n);
                               }
                             }
                           });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::vector<int> axes, bool keepdim) {
  const auto mask = axis_mask(std::move(axes), x.rank(), "sum");
  Shape kept = x.shape();
  Shape squeezed;
  for (int i = 0; i < x.rank(); ++i) {
    if (mask[i]) kept[i] = 1;
    else squeezed.push_back(x.shape()[i]);
  }
  const auto s_in = contiguous_strides(x.shape());
  const auto s_out = aligned_strides(kept, x.shape());
  std::vector<T> value(numel(kept), T(0));
  const T* px = x.data().data();
  for_each_pair(x.shape(), s_in, s_out, [&](int64_t, int64_t ia, int64_t ib) { value[ib] += px[ia]; });
  return Tensor<T>::record("sum", keepdim ? kept : squeezed, std::move(value), {x},
                           [s_in, s_out](const Node<T>& self, const T* g, std::span<T* const> gin) {
                             for_each_pair(self.inputs[0]->shape, s_in, s_out,
                                           [&](int64_t, int64_t ia, int64_t ib) { gin[0][ia] += g[ib]; });
                           });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::vector<int> axes, bool keepdim) {
  int64_t count = 1;
  const auto mask = axis_mask(axes, x.rank(), "mean");
  for (int i = 0; i < x.rank(); ++i) {
    if (mask[i]) count *= x.shape()[i];
  }
  return mul_scalar(sum(x, std::move(axes), keepdim), T(1) / static_cast<T>(count));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  std::vector<int> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return sum(x, axes, false);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return mul_scalar(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> max(const Tensor<T>& x, int axis, bool keepdim) {
  const int ax = normalize_axis(axis, x.rank(), "max");
  const auto sp = split_axis(x.shape(), ax);
  Shape out = x.shape();
  if (keepdim) out[ax] = 1;
  else out.erase(out.begin() + ax);
  std::vector<T> value(sp.outer * sp.inner);
  std::vector<int64_t> arg(sp.outer * sp.inner);
  const T* px = x.data().data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t i = 0; i < sp.inner; ++i) {
      int64_t best = 0;
      T bv = px[o * sp.length * sp.inner + i];
      for (int64_t j = 1; j < sp.length; ++j) {
        const T v = px[(o * sp.length + j) * sp.inner + i];
        if (v > bv) {
          bv = v;
          best = j;
        }
      }
      value[o * sp.inner + i] = bv;
      arg[o * sp.inner + i] = (o * sp.length + best) * sp.inner + i;
    }
  }
  return Tensor<T>::record("max", out, std::move(value), {x},
                           [arg = std::move(arg)](const Node<T>&, const T* g, std::span<T* const> gin) {
                             for (size_t i = 0; i < arg.size(); ++i) gin[0][arg[i]] += g[i];
                           });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "softmax");
  const auto sp = split_axis(x.shape(), ax);
  std::vector<T> value(x.numel());
  const T* px = x.data().data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t i = 0; i < sp.inner; ++i) {
      const int64_t base = o * sp.length * sp.inner + i;
      T m = px[base];
      for (int64_t j = 1; j < sp.length; ++j) m = std::max(m, px[base + j * sp.inner]);
      T z = 0;
      for (int64_t j = 0; j < sp.length; ++j) {
        const T e = std::exp(px[base + j * sp.inner] - m);
        value[base + j * sp.inner] = e;
        z += e;
      }
      for (int64_t j = 0; j < sp.length; ++j) value[base + j * sp.inner] /= z;
    }
  }
  return Tensor<T>::record("softmax", x.shape(), std::move(value), {x},
                           [sp](const Node<T>& self, const T* g, std::span<T* const> gin) {
                             const T* y = self.value.data();
                             for (int64_t o = 0; o < sp.outer; ++o) {
                               for (int64_t i = 0; i < sp.inner; ++i) {
                                 const int64_t base = o * sp.length * sp.inner + i;
                                 T dot = 0;
                                 for (int64_t j = 0; j < sp.length; ++j) dot += g[base + j * sp.inner] * y[base + j * sp.inner];
                                 for (int64_t j = 0; j < sp.length; ++j) {
                                   const int64_t k = base + j * sp.inner;
                                   gin[0][k] += y[k] * (g[k] - dot);
                                 }
                               }
                             }
                           });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "log_softmax");
  const auto sp = split_axis(x.shape(), ax);
  std::vector<T> value(x.numel());
  const T* px = x.data().data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t i = 0; i < sp.inner; ++i) {
      const int64_t base = o * sp.length * sp.inner + i;
      T m = px[base];
      for (int64_t j = 1; j < sp.length; ++j) m = std::max(m, px[base + j * sp.inner]);
      T z = 0;
      for (int64_t j = 0; j < sp.length; ++j) z += std::exp(px[base + j * sp.inner] - m);
      const T lse = m + std::log(z);
      for (int64_t j = 0; j < sp.length; ++j) value[base + j * sp.inner] = px[base + j * sp.inner] - lse;
    }
  }
  return Tensor<T>::record("log_softmax", x.shape(), std::move(value), {x},
                           [sp](const Node<T>& self, const T* g, std::span<T* const> gin) {
                             const T* y = self.value.data();
                             for (int64_t o = 0; o < sp.outer; ++o) {
                               for (int64_t i = 0; i < sp.inner; ++i) {
                                 const int64_t base = o * sp.length * sp.inner + i;
                                 T gs = 0;
                                 for (int64_t j = 0; j < sp.length; ++j) gs += g[base + j * sp.inner];
                                 for (int64_t j = 0; j < sp.length; ++j) {
                                   const int64_t k = base + j * sp.inner;
                                   gin[0][k] += g[k] - std::exp(y[k]) * gs;
                                 }
                               }
                             }
                           });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one inferred axis in " + shape_str(shape));
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[infer] = x.numel() / known;
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return Tensor<T>::record("reshape", std::move(shape), x.values(), {x},
                           [](const Node<T>& self, const T* g, std::span<T* const> gin) {
                             const size_t n = self.value.size();
                             for (size_t i = 0; i < n; ++i) gin[0][i] += g[i];
                           });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& order) {
  if (static_cast<int>(order.size()) != x.rank()) {
    throw ShapeError("permute: order of length " + std::to_string(order.size()) + " for rank " +
                     std::to_string(x.rank()));
  }
  std::vector<bool> seen(x.rank(), false);
  const auto s_in = contiguous_strides(x.shape());
  Shape out(x.rank());
  std::vector<int64_t> s_src(x.rank());
  for (int i = 0; i < x.rank(); ++i) {
    const int a = normalize_axis(order[i], x.rank(), "permute");
    if (seen[a]) throw ShapeError("permute: axis " + std::to_string(a) + " repeated");
    seen[a] = true;
    out[i] = x.shape()[a];
    s_src[i] = s_in[a];
  }
  const auto s_dummy = std::vector<int64_t>(x.rank(), 0);
  std::vector<T> value(x.numel());
  const T* px = x.data().data();
  for_each_pair(out, s_src, s_dummy, [&](int64_t io, int64_t ia, int64_t) { value[io] = px[ia]; });
  return Tensor<T>::record("permute", out, std::move(value), {x},
                           [s_src, s_dummy](const Node<T>& self, const T* g, std::span<T* const> gin) {
                             for_each_pair(self.shape, s_src, s_dummy,
                                           [&](int64_t io, int64_t ia, int64_t) { gin[0][ia] += g[io]; });
                           });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t length) {
  const int ax = normalize_axis(axis, x.rank(), "slice");
  if (start < 0 || length <= 0 || start + length > x.shape()[ax]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside axis " + std::to_string(ax) + " of " + shape_str(x.shape()));
  }
  const auto sp = split_axis(x.shape(), ax);
  Shape out = x.shape();
  out[ax] = length;
  std::vector<T> value(numel(out));
  const T* px = x.data().data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    std::copy_n(px + (o * sp.length + start) * sp.inner, length * sp.inner, value.data() + o * length * sp.inner);
  }
  return Tensor<T>::record("slice", out, std::move(value), {x},
                           [sp, start, length](const Node<T>&, const T* g, std::span<T* const> gin) {
                             for (int64_t o = 0; o < sp.outer; ++o) {
                               T* dst = gin[0] + (o * sp.length + start) * sp.inner;
                               const T* src = g + o * length * sp.inner;
                               for (int64_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
                             }
                           });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int ax = normalize_axis(axis, parts[0].rank(), "concat");
  Shape out = parts[0].shape();
  out[ax] = 0;
  std::vector<int64_t> lengths;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch " + shape_str(p.shape()));
    for (int i = 0; i < p.rank(); ++i) {
      if (i != ax && p.shape()[i] != parts[0].shape()[i]) {
        throw ShapeError("concat: axis " + std::to_string(i) + " differs: " + shape_str(p.shape()) + " vs " +
                         shape_str(parts[0].shape()));
      }
    }
    out[ax] += p.shape()[ax];
    lengths.push_back(p.shape()[ax]);
  }
  const auto sp = split_axis(out, ax);
  std::vector<T> value(numel(out));
  int64_t offset = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].data().data();
    for (int64_t o = 0; o < sp.outer; ++o) {
      std::copy_n(src + o * lengths[k] * sp.inner, lengths[k] * sp.inner,
                  value.data() + (o * sp.length + offset) * sp.inner);
    }
    offset += lengths[k];
  }
  return Tensor<T>::record("concat", out, std::move(value), parts,
                           [sp, lengths](const Node<T>&, const T* g, std::span<T* const> gin) {
                             int64_t off = 0;
                             for (size_t k = 0; k < lengths.size(); ++k) {
                               if (gin[k]) {
                                 for (int64_t o = 0; o < sp.outer; ++o) {
                                   const T* src = g + (o * sp.length + off) * sp.inner;
                                   T* dst = gin[k] + o * lengths[k] * sp.inner;
                                   for (int64_t i = 0; i < lengths[k] * sp.inner; ++i) dst[i] += src[i];
                                 }
                               }
                               off += lengths[k];
                             }
                           });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  const Shape out = broadcast_shape(x.shape(), shape, "broadcast_to");
  if (out != shape) {
    throw ShapeError("broadcast_to: " + shape_str(x.shape()) + " does not broadcast to " + shape_str(shape));
  }
  const auto sx = aligned_strides(x.shape(), out);
  const auto s_dummy = std::vector<int64_t>(out.size(), 0);
  std::vector<T> value(numel(out));
  const T* px = x.data().data();
  for_each_pair(out, sx, s_dummy, [&](int64_t io, int64_t ia, int64_t) { value[io] = px[ia]; });
  return Tensor<T>::record("broadcast_to", out, std::move(value), {x},
                           [sx, s_dummy](const Node<T>& self, const T* g, std::span<T* const> gin) {
                             for_each_pair(self.shape, sx, s_dummy,
                                           [&](int64_t io, int64_t ia, int64_t) { gin[0][ia] += g[io]; });
                           });
}

template <typename T>
Tensor<T> roll(const Tensor<T>& x, int64_t shift, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "roll");
  const auto sp = split_axis(x.shape(), ax);
  const int64_t n = sp.length;
  const int64_t s = ((shift % n) + n) % n;
  std::vector<T> value(x.numel());
  const T* px = x.data().data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t j = 0; j < n; ++j) {
      std::copy_n(px + (o * n + j) * sp.inner, sp.inner, value.data() + (o * n + (j + s) % n) * sp.inner);
    }
  }
  return Tensor<T>::record("roll", x.shape(), std::move(value), {x},
                           [sp, s](const Node<T>&, const T* g, std::span<T* const> gin) {
                             const int64_t n = sp.length;
                             for (int64_t o = 0; o < sp.outer; ++o) {
                               for (int64_t j = 0; j < n; ++j) {
                                 const T* src = g + (o * n + (j + s) % n) * sp.inner;
                                 T* dst = gin[0] + (o * n + j) * sp.inner;
                                 for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
                               }
                             }
                           });
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& x, int axis, const std::vector<int64_t>& indices) {
  const int ax = normalize_axis(axis, x.rank(), "index_select");
  const auto sp = split_axis(x.shape(), ax);
  if (indices.empty()) throw ShapeError("index_select: empty index list");
  for (int64_t i : indices) {
    if (i < 0 || i >= sp.length) {
      throw ShapeError("index_select: index " + std::to_string(i) + " outside axis " + std::to_string(ax) +
                       " of length " + std::to_string(sp.length));
    }
  }
  const int64_t k = static_cast<int64_t>(indices.size());
  Shape out = x.shape();
  out[ax] = k;
  std::vector<T> value(numel(out));
  const T* px = x.data().data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t j = 0; j < k; ++j) {
      std::copy_n(px + (o * sp.length + indices[j]) * sp.inner, sp.inner, value.data() + (o * k + j) * sp.inner);
    }
  }
  return Tensor<T>::record("index_select", out, std::move(value), {x},
                           [sp, indices](const Node<T>&, const T* g, std::span<T* const> gin) {
                             const int64_t k = static_cast<int64_t>(indices.size());
                             for (int64_t o = 0; o < sp.outer; ++o) {
                               for (int64_t j = 0; j < k; ++j) {
                                 const T* src = g + (o * k + j) * sp.inner;
                                 T* dst = gin[0] + (o * sp.length + indices[j]) * sp.inner;
                                 for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
                               }
                             }
                           });
}

template <typename T>
Tensor<T> scatter_add(const Tensor<T>& x, int axis, const std::vector<int64_t>& indices, int64_t size) {
  const int ax = normalize_axis(axis, x.rank(), "scatter_add");
  const auto sp = split_axis(x.shape(), ax);
  if (static_cast<int64_t>(indices.size()) != sp.length) {
    throw ShapeError("scatter_add: " + std::to_string(indices.size()) + " indices for axis " + std::to_string(ax) +
                     " of length " + std::to_string(sp.length));
  }
  for (int64_t i : indices) {
    if (i < 0 || i >= size) throw ShapeError("scatter_add: index " + std::to_string(i) + " outside target size");
  }
  Shape out = x.shape();
  out[ax] = size;
  std::vector<T> value(numel(out), T(0));
  const T* px = x.data().data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t j = 0; j < sp.length; ++j) {
      const T* src = px + (o * sp.length + j) * sp.inner;
      T* dst = value.data() + (o * size + indices[j]) * sp.inner;
      for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  return Tensor<T>::record("scatter_add", out, std::move(value), {x},
                           [sp, indices, size](const Node<T>&, const T* g, std::span<T* const> gin) {
                             for (int64_t o = 0; o < sp.outer; ++o) {
                               for (int64_t j = 0; j < sp.length; ++j) {
                                 const T* src = g + (o * size + indices[j]) * sp.inner;
                                 T* dst = gin[0] + (o * sp.length + j) * sp.inner;
                                 for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
                               }
                             }
                           });
}

namespace {

struct ConvGeometry {
  int64_t batch, in_ch, height, width, out_ch, kh, kw, out_h, out_w;
  int stride, pad_h, pad_w;
  bool per_item;
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const int64_t hw = g.out_h * g.out_w;
  for (int64_t c = 0; c < g.in_ch; ++c) {
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * hw;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.pad_h + ky;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = x + (c * g.height + iy) * g.width;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.pad_w + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  const int64_t hw = g.out_h * g.out_w;
  for (int64_t c = 0; c < g.in_ch; ++c) {
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * hw;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.pad_h + ky;
          if (iy < 0 || iy >= g.height) continue;
          T* dst = x + (c * g.height + iy) * g.width;
          const T* src = row + oy * g.out_w;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.pad_w + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, Conv2dParams params) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be (b, c, h, w), got " + shape_str(x.shape()));
  if (weight.rank() != 4 && weight.rank() != 5) {
    throw ShapeError("conv2d: weight must be (o, c, kh, kw) or (b, o, c, kh, kw), got " + shape_str(weight.shape()));
  }
  if (params.stride < 1 || params.pad_h < 0 || params.pad_w < 0) throw ShapeError("conv2d: invalid stride/padding");
  ConvGeometry g{};
  g.per_item = weight.rank() == 5;
  const int w0 = g.per_item ? 1 : 0;
  g.batch = x.dim(0);
  g.in_ch = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.out_ch = weight.dim(w0);
  g.kh = weight.dim(w0 + 2);
  g.kw = weight.dim(w0 + 3);
  g.stride = params.stride;
  g.pad_h = params.pad_h;
  g.pad_w = params.pad_w;
  if (weight.dim(w0 + 1) != g.in_ch) {
    throw ShapeError("conv2d: input channel axis 1 of " + shape_str(x.shape()) + " does not match weight axis " +
                     std::to_string(w0 + 1) + " of " + shape_str(weight.shape()));
  }
  if (g.per_item && weight.dim(0) != g.batch) {
    throw ShapeError("conv2d: per-item weight batch axis 0 of " + shape_str(weight.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  g.out_h = (g.height + 2 * g.pad_h - g.kh) / g.stride + 1;
  g.out_w = (g.width + 2 * g.pad_w - g.kw) / g.stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw ShapeError("conv2d: kernel larger than padded input");

  const int64_t ckk = g.in_ch * g.kh * g.kw;
  const int64_t hw = g.out_h * g.out_w;
  const int64_t w_item = g.out_ch * ckk;
  std::vector<T> value(g.batch * g.out_ch * hw);
  RowMat<T> col(ckk, hw);
  RowMat<T> W;
  for (int64_t b = 0; b < g.batch; ++b) {
    im2col(x.data().data() + b * g.in_ch * g.height * g.width, g, col.data());
    if (b == 0 || g.per_item) W = owned(weight.data().data() + (g.per_item ? b * w_item : 0), g.out_ch, ckk);
    const RowMat<T> O = W * col;
    store(O, value.data() + b * g.out_ch * hw);
  }
  Shape out{g.batch, g.out_ch, g.out_h, g.out_w};
  return Tensor<T>::record(
      "conv2d", out, std::move(value), {x, weight},
      [g, ckk, hw, w_item](const Node<T>& self, const T* grad, std::span<T* const> gin) {
        const T* xv = self.inputs[0]->value.data();
        const T* wv = self.inputs[1]->value.data();
        RowMat<T> col(ckk, hw);
        RowMat<T> W;
        for (int64_t b = 0; b < g.batch; ++b) {
          const auto G = owned(grad + b * g.out_ch * hw, g.out_ch, hw);
          if (gin[1]) {
            im2col(xv + b * g.in_ch * g.height * g.width, g, col.data());
            accumulate<T>(G * col.transpose(), gin[1] + (g.per_item ? b * w_item : 0));
          }
          if (gin[0]) {
            if (b == 0 || g.per_item) W = owned(wv + (g.per_item ? b * w_item : 0), g.out_ch, ckk);
            const RowMat<T> dcol = W.transpose() * G;
            col2im_add(dcol.data(), g, gin[0] + b * g.in_ch * g.height * g.width);
          }
        }
      });
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, int pad) {
  if (x.rank() != 3) throw ShapeError("conv1d: input must be (b, c, l), got " + shape_str(x.shape()));
  if (weight.rank() != 3) throw ShapeError("conv1d: weight must be (o, c, k), got " + shape_str(weight.shape()));
  auto x4 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
  auto w4 = reshape(weight, {weight.dim(0), weight.dim(1), 1, weight.dim(2)});
  auto y = conv2d(x4, w4, Conv2dParams{1, 0, pad});
  return reshape(y, {y.dim(0), y.dim(1), y.dim(3)});
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int window) {
  if (x.rank() < 2) throw ShapeError("max_pool2d: need at least two axes, got " + shape_str(x.shape()));
  if (window < 1) throw ShapeError("max_pool2d: window must be positive");
  const int64_t h = x.dim(-2), w = x.dim(-1);
  const int64_t oh = h / window, ow = w / window;
  if (oh == 0 || ow == 0) throw ShapeError("max_pool2d: window exceeds spatial size of " + shape_str(x.shape()));
  const int64_t planes = x.numel() / (h * w);
  Shape out = x.shape();
  out[out.size() - 2] = oh;
  out[out.size() - 1] = ow;
  std::vector<T> value(planes * oh * ow);
  std::vector<int64_t> arg(value.size());
  const T* px = x.data().data();
  for (int64_t p = 0; p < planes; ++p) {
    for (int64_t oy = 0; oy < oh; ++oy) {
      for (int64_t ox = 0; ox < ow; ++ox) {
        int64_t best = (p * h + oy * window) * w + ox * window;
        T bv = px[best];
        for (int64_t dy = 0; dy < window; ++dy) {
          for (int64_t dx = 0; dx < window; ++dx) {
            const int64_t k = (p * h + oy * window + dy) * w + ox * window + dx;
            if (px[k] > bv || std::isnan(px[k])) {
              bv = px[k];
              best = k;
            }
          }
        }
        const int64_t o = (p * oh + oy) * ow + ox;
        value[o] = bv;
        arg[o] = best;
      }
    }
  }
  return Tensor<T>::record("max_pool2d", out, std::move(value), {x},
                           [arg = std::move(arg)](const Node<T>&, const T* g, std::span<T* const> gin) {
                             for (size_t i = 0; i < arg.size(); ++i) gin[0][arg[i]] += g[i];
                           });
}

template <typename T>
Tensor<T> grid_sample(const Tensor<T>& x, const Tensor<T>& grid) {
  if (x.rank() != 4) throw ShapeError("grid_sample: input must be (b, c, h, w), got " + shape_str(x.shape()));
  if (grid.rank() != 4 || grid.dim(3) != 2 || grid.dim(0) != x.dim(0)) {
    throw ShapeError("grid_sample: grid must be (b, ho, wo, 2) matching batch of " + shape_str(x.shape()) + ", got " +
                     shape_str(grid.shape()));
  }
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t HO = grid.dim(1), WO = grid.dim(2);
  std::vector<T> value(B * C * HO * WO, T(0));
  const T* px = x.data().data();
  const T* pg = grid.data().data();
  auto at = [&](const T* base, int64_t yy, int64_t xx) -> T {
    return (yy >= 0 && yy < H && xx >= 0 && xx < W) ? base[yy * W + xx] : T(0);
  };
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t o = 0; o < HO * WO; ++o) {
      const T gx = pg[(b * HO * WO + o) * 2];
      const T gy = pg[(b * HO * WO + o) * 2 + 1];
      const T fx = std::floor(gx), fy = std::floor(gy);
      const int64_t x0 = static_cast<int64_t>(fx), y0 = static_cast<int64_t>(fy);
      const T ax = gx - fx, ay = gy - fy;
      for (int64_t c = 0; c < C; ++c) {
        const T* base = px + (b * C + c) * H * W;
        const T top = (T(1) - ax) * at(base, y0, x0) + ax * at(base, y0, x0 + 1);
        const T bottom = (T(1) - ax) * at(base, y0 + 1, x0) + ax * at(base, y0 + 1, x0 + 1);
        value[(b * C + c) * HO * WO + o] = (T(1) - ay) * top + ay * bottom;
      }
    }
  }
  return Tensor<T>::record(
      "grid_sample", Shape{B, C, HO, WO}, std::move(value), {x, grid},
      [B, C, H, W, HO, WO](const Node<T>& self, const T* g, std::span<T* const> gin) {
        const T* px = self.inputs[0]->value.data();
        const T* pg = self.inputs[1]->value.data();
        auto inside = [&](int64_t yy, int64_t xx) { return yy >= 0 && yy < H && xx >= 0 && xx < W; };
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t o = 0; o < HO * WO; ++o) {
            const T gx = pg[(b * HO * WO + o) * 2];
            const T gy = pg[(b * HO * WO + o) * 2 + 1];
            const T fx = std::floor(gx), fy = std::floor(gy);
            const int64_t x0 = static_cast<int64_t>(fx), y0 = static_cast<int64_t>(fy);
            const T ax = gx - fx, ay = gy - fy;
            const T w00 = (T(1) - ax) * (T(1) - ay), w01 = ax * (T(1) - ay);
            const T w10 = (T(1) - ax) * ay, w11 = ax * ay;
            T dgx = 0, dgy = 0;
            for (int64_t c = 0; c < C; ++c) {
              const T go = g[(b * C + c) * HO * WO + o];
              const int64_t plane = (b * C + c) * H * W;
              const T v00 = inside(y0, x0) ? px[plane + y0 * W + x0] : T(0);
              const T v01 = inside(y0, x0 + 1) ? px[plane + y0 * W + x0 + 1] : T(0);
              const T v10 = inside(y0 + 1, x0) ? px[plane + (y0 + 1) * W + x0] : T(0);
              const T v11 = inside(y0 + 1, x0 + 1) ? px[plane + (y0 + 1) * W + x0 + 1] : T(0);
              if (gin[0]) {
                if (inside(y0, x0)) gin[0][plane + y0 * W + x0] += go * w00;
                if (inside(y0, x0 + 1)) gin[0][plane + y0 * W + x0 + 1] += go * w01;
                if (inside(y0 + 1, x0)) gin[0][plane + (y0 + 1) * W + x0] += go * w10;
                if (inside(y0 + 1, x0 + 1)) gin[0][plane + (y0 + 1) * W + x0 + 1] += go * w11;
              }
              dgx += go * ((T(1) - ay) * (v01 - v00) + ay * (v11 - v10));
              dgy += go * ((T(1) - ax) * (v10 - v00) + ax * (v11 - v01));
            }
            if (gin[1]) {
              gin[1][(b * HO * WO + o) * 2] += dgx;
              gin[1][(b * HO * WO + o) * 2 + 1] += dgy;
            }
          }
        }
      });
}

namespace {

// cos/sin with multiples of pi/2 snapped to exact values so quarter turns are
// exact pixel permutations.
std::pair<double, double> snapped_cos_sin(double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  auto snap = [](double v) {
    if (std::abs(v) < 1e-12) return 0.0;
    if (std::abs(v - 1.0) < 1e-12) return 1.0;
    if (std::abs(v + 1.0) < 1e-12) return -1.0;
    return v;
  };
  return {snap(c), snap(s)};
}

}  // namespace

template <typename T>
Tensor<T> bilinear_rotate(const Tensor<T>& x, double angle) {
  if (x.rank() < 2) throw ShapeError("bilinear_rotate: need two spatial axes, got " + shape_str(x.shape()));
  if (!std::isfinite(angle)) throw std::invalid_argument("bilinear_rotate: angle must be finite");
  const int64_t H = x.dim(-2), W = x.dim(-1);
  const int64_t planes = x.numel() / (H * W);
  const auto [c, s] = snapped_cos_sin(angle);
  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
  std::vector<T> grid(H * W * 2);
  for (int64_t r = 0; r < H; ++r) {
    for (int64_t col = 0; col < W; ++col) {
      const double px = col - cx, py = r - cy;
      grid[(r * W + col) * 2] = static_cast<T>(c * px + s * py + cx);
      grid[(r * W + col) * 2 + 1] = static_cast<T>(-s * px + c * py + cy);
    }
  }
  Tensor<T> g({1, H, W, 2}, std::move(grid));
  auto y = grid_sample(reshape(x, {1, planes, H, W}), g);
  return reshape(y, x.shape());
}

template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return x.detach();
}

template <typename T>
Tensor<T> straight_through(const Tensor<T>& hard, const Tensor<T>& soft) {
  if (hard.shape() != soft.shape()) {
    throw ShapeError("straight_through: hard " + shape_str(hard.shape()) + " vs soft " + shape_str(soft.shape()));
  }
  return Tensor<T>::record("straight_through", hard.shape(), hard.values(), {hard, soft},
                           [](const Node<T>& self, const T* g, std::span<T* const> gin) {
                             if (!gin[1]) return;
                             const size_t n = self.value.size();
                             for (size_t i = 0; i < n; ++i) gin[1][i] += g[i];
                           });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be (b, k), got " + shape_str(logits.shape()));
  const int64_t B = logits.dim(0), K = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != B) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch axis 0 of length " +
                     std::to_string(B));
  }
  for (int y : labels) {
    if (y < 0 || y >= K) throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
  }
  auto ls = log_softmax(logits, 1);
  std::vector<T> pick(B * K, T(0));
  for (int64_t b = 0; b < B; ++b) pick[b * K + labels[b]] = T(-1) / static_cast<T>(B);
  return sum_all(mul(ls, Tensor<T>({B, K}, std::move(pick))));
}

#define VPGC_INSTANTIATE_OPS(T)                                                                        \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                               \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                               \
  template Tensor<T> neg<T>(const Tensor<T>&);                                                         \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                         \
  template Tensor<T> log<T>(const Tensor<T>&);                                                         \
  template Tensor<T> sin<T>(const Tensor<T>&);                                                         \
  template Tensor<T> cos<T>(const Tensor<T>&);                                                         \
  template Tensor<T> sqrt<T>(const Tensor<T>&);                                                        \
  template Tensor<T> pow<T>(const Tensor<T>&, T);                                                      \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                        \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                     \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                                    \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sum<T>(const Tensor<T>&, std::vector<int>, bool);                                 \
  template Tensor<T> mean<T>(const Tensor<T>&, std::vector<int>, bool);                                \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                                                     \
  template Tensor<T> mean_all<T>(const Tensor<T>&);                                                    \
  template Tensor<T> max<T>(const Tensor<T>&, int, bool);                                              \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                                \
  template Tensor<T> log_softmax<T>(const Tensor<T>&, int);                                            \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                              \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<int>&);                            \
  template Tensor<T> slice<T>(const Tensor<T>&, int, int64_t, int64_t);                                \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                                    \
  template Tensor<T> broadcast_to<T>(const Tensor<T>&, const Shape&);                                  \
  template Tensor<T> roll<T>(const Tensor<T>&, int64_t, int);                                          \
  template Tensor<T> index_select<T>(const Tensor<T>&, int, const std::vector<int64_t>&);              \
  template Tensor<T> scatter_add<T>(const Tensor<T>&, int, const std::vector<int64_t>&, int64_t);      \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, Conv2dParams);                      \
  template Tensor<T> conv1d<T>(const Tensor<T>&, const Tensor<T>&, int);                               \
  template Tensor<T> max_pool2d<T>(const Tensor<T>&, int);                                             \
  template Tensor<T> grid_sample<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> bilinear_rotate<T>(const Tensor<T>&, double);                                     \
  template Tensor<T> stop_gradient<T>(const Tensor<T>&);                                               \
  template Tensor<T> straight_through<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, const std::vector<int>&);

VPGC_INSTANTIATE_OPS(float)
VPGC_INSTANTIATE_OPS(double)

}  // namespace vpgc::ad
