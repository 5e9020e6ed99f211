#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace shapguard::numkit {

/// Dense row-major tensor of 64-bit floats. Shapes are arbitrary rank
/// but the library only ever builds rank 1..3. Values are plain data;
/// differentiability lives in Tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> data);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  /// Value of a one-element tensor.
  double item() const;

  std::size_t rows() const;  // rank-2 only
  std::size_t cols() const;

  double& at(std::size_t i) { return data_[i]; }
  double at(std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols_cache_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_cache_ + c]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

  /// Same data, new shape (element count must match).
  Tensor reshaped(std::vector<std::size_t> shape) const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::size_t cols_cache_ = 0;  // stride for rank-2 at()
};

/// Throws NumericError naming the op and the first offending index if
/// any element is NaN or infinite.
void ensure_finite(const Tensor& t, const char* op);

namespace kernels {

// All reductions accumulate strictly left to right so results are
// bitwise reproducible run to run.

Tensor matmul(const Tensor& a, const Tensor& b);
/// x*w + h*u + bias, bias broadcast over rows. h/u may be empty for a
/// plain linear map.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& h, const Tensor& u,
              const Tensor& bias);
Tensor transpose(const Tensor& a);
double sum(const Tensor& a);
Tensor sum_rows(const Tensor& a);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);

}  // namespace kernels

}  // namespace shapguard::numkit
