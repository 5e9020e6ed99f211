#include "numkit/tensor.hpp"

#include <cmath>
#include <sstream>

#include "common/error.hpp"

namespace shapguard::numkit {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str() + " does not match data length " +
                     std::to_string(data_.size()));
  }
  cols_cache_ = shape_.size() == 2 ? shape_[1] : 0;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  const std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  const std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> data) {
  const std::size_t n = data.size();
  return Tensor({n}, std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires a one-element tensor, got shape " + shape_str());
  }
  return data_[0];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() requires rank-2, got shape " + shape_str());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() requires rank-2, got shape " + shape_str());
  return shape_[1];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (shape_product(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str() + " to a different element count");
  }
  return Tensor(std::move(shape), data_);
}

void ensure_finite(const Tensor& t, const char* op) {
  const double* p = t.data();
  const std::size_t n = t.numel();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) {
      throw NumericError(std::string("non-finite value (") +
                         (std::isnan(p[i]) ? "nan" : "inf") + ") in output of '" + op +
                         "' at flat index " + std::to_string(i));
    }
  }
}

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + a.shape_str() + " x " + b.shape_str());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c = Tensor::zeros({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double aval = pa[i * k + l];
      const double* brow = pb + l * n;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aval * brow[j];
    }
  }
  return c;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& h, const Tensor& u,
              const Tensor& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows()) {
    throw ShapeError("affine shape mismatch: " + x.shape_str() + " x " + w.shape_str());
  }
  const std::size_t m = x.rows(), n = w.cols();
  const bool recurrent = !h.empty();
  if (recurrent && (h.rank() != 2 || u.rank() != 2 || h.rows() != m || h.cols() != u.rows() ||
                    u.cols() != n)) {
    throw ShapeError("affine recurrent shape mismatch: " + h.shape_str() + " x " +
                     u.shape_str());
  }
  if (bias.rank() != 1 || bias.numel() != n) {
    throw ShapeError("affine bias shape mismatch: " + bias.shape_str());
  }
  Tensor c = Tensor::zeros({m, n});
  double* pc = c.data();
  const double* pbias = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = pbias[j];
  }
  const double* px = x.data();
  const double* pw = w.data();
  const std::size_t kx = x.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t l = 0; l < kx; ++l) {
      const double v = px[i * kx + l];
      const double* wrow = pw + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += v * wrow[j];
    }
  }
  if (recurrent) {
    const double* ph = h.data();
    const double* pu = u.data();
    const std::size_t kh = h.cols();
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = pc + i * n;
      for (std::size_t l = 0; l < kh; ++l) {
        const double v = ph[i * kh + l];
        const double* urow = pu + l * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += v * urow[j];
      }
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor t = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

double sum(const Tensor& a) {
  double acc = 0.0;
  const double* p = a.data();
  for (std::size_t i = 0; i < a.numel(); ++i) acc += p[i];
  return acc;
}

Tensor sum_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    const double* row = a.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += row[j];
    out.at(i) = acc;
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = a;
  double* p = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) p[i] = 1.0 / (1.0 + std::exp(-p[i]));
  return out;
}

Tensor tanh(const Tensor& a) {
  Tensor out = a;
  double* p = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) p[i] = std::tanh(p[i]);
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2 || begin >= end || end > a.cols()) {
    throw ShapeError("slice_cols range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") invalid for " + a.shape_str());
  }
  const std::size_t m = a.rows(), n = end - begin;
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* src = a.data() + i * a.cols() + begin;
    double* dst = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) dst[j] = src[j];
  }
  return out;
}

}  // namespace kernels

}  // namespace shapguard::numkit
