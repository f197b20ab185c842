#include "dckit/tensor.hpp"

#include <sstream>

namespace dckit {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (int64_t d : shape_)
    require(d > 0, ErrorKind::internal, "tensor dims must be positive, got " + shape_str(shape_));
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_numel(shape_) == static_cast<int64_t>(data_.size()), ErrorKind::internal,
          "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
              shape_str(shape_));
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.shape_ = {};
  t.data_ = {v};
  return t;
}

Tensor Tensor::full(const Shape& shape, double v) {
  Tensor t(shape);
  std::fill(t.data_.begin(), t.data_.end(), v);
  return t;
}

double Tensor::item() const {
  require(is_scalar(), ErrorKind::internal, "item() on non-scalar tensor " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace dckit
