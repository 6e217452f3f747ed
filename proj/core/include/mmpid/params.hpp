#pragma once

#include <span>
#include <string_view>

namespace mmpid {

// A view of one trainable tensor. `decay` marks tensors subject to weight decay.
struct TensorRef {
  std::string_view name;
  std::span<double> values;
  bool decay = false;
};

enum class Mode { kTrain, kInfer };

}  // namespace mmpid
