#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsgan {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Incompatible or malformed shapes.
struct ShapeError : Error {
  using Error::Error;
};

/// Arguments outside an operation's domain (log of a non-positive value,
/// degenerate labels, bad config fields).
struct ValueError : Error {
  using Error::Error;
};

/// A computation produced NaN or infinity. Forward ops fail fast instead of
/// letting NaNs propagate silently.
struct NumericError : Error {
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array of 64-bit floats. The unit of all numeric
/// computation; immutable once recorded on a tape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);
  /// 1-D tensor from a list of values.
  static Tensor row(std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// 2-D accessors; throws ShapeError when rank != 2.
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;
  std::size_t rows() const;
  std::size_t cols() const;

  /// Value of a single-element tensor.
  double item() const;

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace lsgan
