#ifndef TTLAB_TENSOR_HPP
#define TTLAB_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "ttlab/common.hpp"

namespace ttlab {

/// Dense n-dimensional array, row-major. The numeric substrate for
/// parameters, activations and gradients. Training paths use float,
/// gradient-check and theory paths instantiate with double.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<std::int64_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  TensorT(std::vector<std::int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  // Multi-index accessors for the ranks the layer vocabulary needs.
  T& at(std::int64_t a, std::int64_t b) { return data_[a * shape_[1] + b]; }
  const T& at(std::int64_t a, std::int64_t b) const {
    return data_[a * shape_[1] + b];
  }
  T& at(std::int64_t a, std::int64_t b, std::int64_t c) {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  const T& at(std::int64_t a, std::int64_t b, std::int64_t c) const {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  T& at(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  const T& at(std::int64_t a, std::int64_t b, std::int64_t c,
              std::int64_t d) const {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  TensorT reshaped(std::vector<std::int64_t> new_shape) const {
    if (checked_numel(new_shape) != numel()) {
      throw ShapeError("reshape from " + shape_string(shape_) + " to " +
                       shape_string(new_shape) + " changes element count");
    }
    TensorT out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
  }

  static std::string shape_string(const std::vector<std::int64_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
  }
  std::string shape_string() const { return shape_string(shape_); }

 private:
  static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
      if (d <= 0) {
        throw ShapeError("tensor dimensions must be positive, got " +
                         shape_string(shape));
      }
      n *= d;
    }
    return n;
  }

  std::vector<std::int64_t> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
bool bits_equal(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(T) * a.numel()) == 0;
}

/// Copies entry n out of a batched tensor, dropping the leading axis.
template <typename T>
TensorT<T> slice_outer(const TensorT<T>& batch, std::int64_t n) {
  if (batch.rank() < 2) {
    throw ShapeError("slice_outer: need rank >= 2, got " +
                     batch.shape_string());
  }
  if (n < 0 || n >= batch.dim(0)) {
    throw InputError("slice_outer: index " + std::to_string(n) +
                     " outside batch of " + std::to_string(batch.dim(0)));
  }
  std::vector<std::int64_t> shape(batch.shape().begin() + 1,
                                  batch.shape().end());
  TensorT<T> out(shape);
  const std::int64_t stride = out.numel();
  std::memcpy(out.data(), batch.data() + n * stride, sizeof(T) * stride);
  return out;
}

/// Writes an entry into slot n of a batched tensor.
template <typename T>
void set_outer(TensorT<T>& batch, std::int64_t n, const TensorT<T>& entry) {
  if (batch.rank() != entry.rank() + 1) {
    throw ShapeError("set_outer: rank mismatch between batch " +
                     batch.shape_string() + " and entry " +
                     entry.shape_string());
  }
  const std::int64_t stride = entry.numel();
  if (batch.numel() / batch.dim(0) != stride) {
    throw ShapeError("set_outer: entry " + entry.shape_string() +
                     " does not fit batch " + batch.shape_string());
  }
  if (n < 0 || n >= batch.dim(0)) {
    throw InputError("set_outer: index " + std::to_string(n) +
                     " outside batch of " + std::to_string(batch.dim(0)));
  }
  std::memcpy(batch.data() + n * stride, entry.data(), sizeof(T) * stride);
}

}  // namespace ttlab

#endif  // TTLAB_TENSOR_HPP
