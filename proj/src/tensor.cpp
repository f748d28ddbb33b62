#include "mesorch/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mesorch {

std::string shape_to_string(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void check_input(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInputError(msg);
}

void check_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace mesorch
