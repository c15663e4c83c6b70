#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace mevo {

// Dense row-major double tensor. Rank is dynamic; the project mostly uses
// [C,H,W] feature maps, [2,H,W] deformation fields, [K,2] keypoint arrays
// and scalars (rank 0).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t{std::vector<int>{}};
    t.data_.assign(1, v);
    return t;
  }

  static Tensor from_values(std::vector<int> shape, std::vector<double> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    if (static_cast<std::int64_t>(values.size()) != count(t.shape_))
      throw std::invalid_argument("Tensor::from_values: value count does not match shape");
    t.data_ = std::move(values);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // [C,H,W] accessors.
  double& at(int c, int y, int x) {
    return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * dim(1) + y) * dim(2) + x)];
  }
  double at(int c, int y, int x) const {
    return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * dim(1) + y) * dim(2) + x)];
  }

  // [N,M] accessors.
  double& at(int i, int j) { return data_[static_cast<std::size_t>(static_cast<std::int64_t>(i) * dim(1) + j)]; }
  double at(int i, int j) const { return data_[static_cast<std::size_t>(static_cast<std::int64_t>(i) * dim(1) + j)]; }

  double item() const {
    if (data_.size() != 1) throw std::logic_error("Tensor::item: tensor is not a scalar");
    return data_[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) {
    for (auto& x : data_) x = v;
  }

  bool all_finite() const;
  double min() const;
  double max() const;
  double sum() const;
  double mean() const { return empty() ? 0.0 : sum() / static_cast<double>(size()); }

  static std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  static std::string shape_to_string(const std::vector<int>& shape);

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

// Require matching shapes; throws std::invalid_argument naming the context.
void check_same_shape(const Tensor& a, const Tensor& b, const char* context);

}  // namespace mevo
