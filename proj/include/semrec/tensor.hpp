#pragma once

#include <cmath>
#include <cstring>
#include <utility>

#include "semrec/common.hpp"

namespace semrec {

// Dense row-major tensor of float32. Values are expected to stay finite;
// ops in autodiff.hpp validate their outputs with check_finite().
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), 0.0f) {
    validate_shape();
  }

  Tensor(Shape shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
      throw ShapeError(str_cat("tensor: shape ", shape_str(shape_), " expects ",
                               shape_numel(shape_), " values, got ", data_.size()));
    }
  }

  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  static Tensor full(Shape shape, float v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool defined() const { return !shape_.empty(); }
  bool is_scalar() const { return numel() == 1; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  float& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * dim(1) + j)]; }
  float at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * dim(1) + j)]; }
  float& at(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  float at(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
  }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  // Sum with 64-bit accumulation; reductions consumed by tests go through this.
  double sum64() const {
    double acc = 0.0;
    for (float v : data_) acc += v;
    return acc;
  }

  void check_finite(const char* ctx) const {
    // |x| sums stay finite for finite float inputs; NaN/Inf poison the
    // accumulator, and only then do we rescan for the offending index.
    double acc = 0.0;
    for (size_t i = 0; i < data_.size(); ++i) acc += std::fabs(static_cast<double>(data_[i]));
    if (std::isfinite(acc)) return;
    for (size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw NumericError(str_cat(ctx, ": non-finite value ", data_[i], " at flat index ",
                                   i, " in tensor ", shape_str(shape_)));
      }
    }
  }

 private:
  void validate_shape() const {
    for (int64_t d : shape_) {
      if (d < 0) throw ShapeError(str_cat("tensor: negative extent in ", shape_str(shape_)));
    }
  }

  Shape shape_;
  std::vector<float> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* ctx) {
  if (a.shape() != b.shape()) {
    throw ShapeError(str_cat(ctx, ": shape mismatch ", shape_str(a.shape()), " vs ",
                             shape_str(b.shape())));
  }
}

}  // namespace semrec
