#pragma once

#include "vpgc/tensor/ops.hpp"
#include "vpgc/tensor/param.hpp"
#include "vpgc/tensor/rng.hpp"

namespace vpgc::conv {

using ad::Tensor;

struct SirenOptions {
  int hidden = 32;
  int layers = 3;  // linear maps, the last one without activation
  double omega0 = 5.0;
  /// Standard deviation targeted for the output layer's values.
  double output_std = 0.1;
};

/// Sine-activated MLP mapping kernel coordinates to kernel values:
/// sin(omega0 (x W1 + b1)) -> sin(h W + b) ... -> h W_last + b_last.
template <typename T>
class SirenKernel {
 public:
  SirenKernel() = default;
  SirenKernel(int in_dim, int out_dim, Rng& rng, SirenOptions options = {});

  /// coords: (points, in_dim) -> (points, out_dim).
  Tensor<T> eval(const Tensor<T>& coords) const;

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  const SirenOptions& options() const { return options_; }
  ad::ParamList<T> parameters();
  std::vector<Tensor<T>>& weights() { return weights_; }
  std::vector<Tensor<T>>& biases() { return biases_; }

 private:
  int in_dim_ = 0;
  int out_dim_ = 0;
  SirenOptions options_;
  std::vector<Tensor<T>> weights_;  // (fan_in, fan_out)
  std::vector<Tensor<T>> biases_;   // (1, fan_out)
};

}  // namespace vpgc::conv
