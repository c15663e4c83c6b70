#include "mevo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mevo {

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::min() const {
  double m = data_.empty() ? 0.0 : data_[0];
  for (double v : data_) m = std::min(m, v);
  return m;
}

double Tensor::max() const {
  double m = data_.empty() ? 0.0 : data_[0];
  for (double v : data_) m = std::max(m, v);
  return m;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

std::string Tensor::shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* context) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(context) + ": shape mismatch " +
                                Tensor::shape_to_string(a.shape()) + " vs " +
                                Tensor::shape_to_string(b.shape()));
  }
}

}  // namespace mevo
