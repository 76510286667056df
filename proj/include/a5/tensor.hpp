#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "a5/error.hpp"

namespace a5 {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowMajorMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(s));
    n *= d;
  }
  return n;
}

// Dense f64 tensor with row-major logical layout. The flat buffer is an
// Eigen vector so callers can hop into Eigen expressions without copies.
// Construction rejects non-finite entries: NaN/Inf never enter the system
// through this type.
class Tensor {
 public:
  Tensor() : shape_{0} {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_ = Vec::Zero(shape_numel(shape_));
  }

  Tensor(Shape shape, Vec data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match buffer of " +
                       std::to_string(data_.size()) + " values");
    check_finite();
  }

  Tensor(Shape shape, std::initializer_list<double> vals)
      : Tensor(std::move(shape), Eigen::Map<const Vec>(vals.begin(), (Eigen::Index)vals.size())) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    t.check_finite();
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  const Shape& shape() const { return shape_; }
  int rank() const { return (int)shape_.size(); }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  double operator[](Eigen::Index i) const { return data_[i]; }
  double& operator[](Eigen::Index i) { return data_[i]; }

  const Vec& data() const { return data_; }
  Vec& data() { return data_; }

  // Row-major offset of a multi-index.
  Eigen::Index offset(const Shape& idx) const {
    if ((int)idx.size() != rank()) throw ShapeError("tensor: index rank mismatch");
    Eigen::Index off = 0;
    for (size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= shape_[i]) throw ShapeError("tensor: index out of range");
      off = off * shape_[i] + idx[i];
    }
    return off;
  }

  double at(const Shape& idx) const { return data_[offset(idx)]; }
  double& at(const Shape& idx) { return data_[offset(idx)]; }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size())
      throw ShapeError("tensor: reshape to " + shape_str(shape) + " changes element count");
    return Tensor(std::move(shape), data_);
  }

  Tensor flattened() const { return reshaped({(int)data_.size()}); }

  bool same_as(const Tensor& o) const {
    return shape_ == o.shape_ && data_.size() == o.data_.size() && data_ == o.data_;
  }

  void check_finite() const {
    if (!data_.allFinite())
      throw NumericError("tensor: non-finite value in tensor " + shape_str(shape_));
  }

 private:
  Shape shape_;
  Vec data_;
};

}  // namespace a5
