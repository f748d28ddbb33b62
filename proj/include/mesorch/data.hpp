#ifndef MESORCH_DATA_HPP_
#define MESORCH_DATA_HPP_

#include <string>

#include "mesorch/dct.hpp"
#include "mesorch/tensor.hpp"

namespace mesorch {

// An image with its binary ground-truth mask (1 = manipulated), mask [H, W].
struct LabeledImage {
  Image image;
  Tensor mask;
  std::string id;
};

}  // namespace mesorch

#endif  // MESORCH_DATA_HPP_
