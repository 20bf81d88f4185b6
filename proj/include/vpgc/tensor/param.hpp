#pragma once

#include <string>
#include <vector>

#include "vpgc/tensor/tensor.hpp"

namespace vpgc::ad {

/// Named handle to a trainable leaf owned by some layer. Optimizers replace
/// the pointee with a fresh leaf after each step.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor = nullptr;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

template <typename T>
void append_params(ParamList<T>& into, const std::string& prefix, ParamList<T> more) {
  for (auto& p : more) into.push_back({prefix + p.name, p.tensor});
}

}  // namespace vpgc::ad
