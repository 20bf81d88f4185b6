#include "vpgc/conv/siren.hpp"

#include <cmath>
#include <stdexcept>

namespace vpgc::conv {

namespace {

template <typename T>
Tensor<T> uniform_tensor(ad::Shape shape, double bound, Rng& rng) {
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

}  // namespace

template <typename T>
SirenKernel<T>::SirenKernel(int in_dim, int out_dim, Rng& rng, SirenOptions options)
    : in_dim_(in_dim), out_dim_(out_dim), options_(options) {
  if (in_dim < 1 || out_dim < 1 || options.hidden < 1 || options.layers < 2) {
    throw std::invalid_argument("siren: dimensions must be positive and layers >= 2");
  }
  int fan_in = in_dim;
  for (int l = 0; l < options.layers; ++l) {
    const bool last = l + 1 == options.layers;
    const int fan_out = last ? out_dim : options.hidden;
    double bound;
    if (l == 0) {
      bound = 1.0 / fan_in;
    } else if (!last) {
      bound = std::sqrt(6.0 / fan_in);
    } else {
      // Hidden sine activations have variance about 1/2.
      bound = options.output_std * std::sqrt(3.0 / (0.5 * fan_in));
    }
    weights_.push_back(uniform_tensor<T>({fan_in, fan_out}, bound, rng));
    biases_.push_back(uniform_tensor<T>({1, fan_out}, l == 0 ? 1.0 / fan_in : (last ? 0.0 : 1.0 / std::sqrt(fan_in)), rng));
    fan_in = fan_out;
  }
}

template <typename T>
Tensor<T> SirenKernel<T>::eval(const Tensor<T>& coords) const {
  if (coords.rank() != 2 || coords.dim(1) != in_dim_) {
    throw ad::ShapeError("siren_eval: expected (points, " + std::to_string(in_dim_) + ") coordinates, got " +
                         ad::shape_str(coords.shape()));
  }
  Tensor<T> h = coords;
  const size_t n = weights_.size();
  for (size_t l = 0; l < n; ++l) {
    h = ad::add(ad::matmul(h, weights_[l]), biases_[l]);
    if (l + 1 < n) {
      if (l == 0) h = ad::mul_scalar(h, static_cast<T>(options_.omega0));
      h = ad::sin(h);
    }
  }
  return h;
}

template <typename T>
ad::ParamList<T> SirenKernel<T>::parameters() {
  ad::ParamList<T> out;
  for (size_t l = 0; l < weights_.size(); ++l) {
    out.push_back({"w" + std::to_string(l), &weights_[l]});
    out.push_back({"b" + std::to_string(l), &biases_[l]});
  }
  return out;
}

template class SirenKernel<float>;
template class SirenKernel<double>;

}  // namespace vpgc::conv
