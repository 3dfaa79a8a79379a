#pragma once

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tdnet {

/// Dense row-major tensor. Axis order convention across the project is
/// (class, depth, height, width); 3D grids drop the class axis.
template <typename T>
class TensorT {
public:
  TensorT() = default;

  explicit TensorT(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    for (int64_t d : shape_) {
      if (d < 1) throw std::invalid_argument("tensor dimensions must be >= 1");
    }
    data_.assign(static_cast<size_t>(numel_of(shape_)), T(0));
  }

  TensorT(std::vector<int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel_of(shape_) != static_cast<int64_t>(data_.size()))
      throw std::invalid_argument("tensor data size does not match shape");
  }

  static TensorT zeros(std::vector<int64_t> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int64_t> shape, T value) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 3D accessors, shape (D,H,W)
  T& at3(int64_t d, int64_t h, int64_t w) {
    return data_[static_cast<size_t>((d * shape_[1] + h) * shape_[2] + w)];
  }
  const T& at3(int64_t d, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>((d * shape_[1] + h) * shape_[2] + w)];
  }

  // 4D accessors, shape (C,D,H,W)
  T& at4(int64_t c, int64_t d, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(((c * shape_[1] + d) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at4(int64_t c, int64_t d, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(((c * shape_[1] + d) * shape_[2] + h) * shape_[3] + w)];
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  static int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

private:
  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;
using ByteGrid = TensorT<uint8_t>;

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

enum class Trans { No, Yes };

/// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
/// op(A) is m x k, op(B) is k x n, C is m x n; leading dims are the
/// row strides of the stored (untransposed) matrices.
template <typename T>
void gemm(Trans ta, Trans tb, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
          int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
  using MapMut = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;

  MapMut cm(c, m, n, Eigen::OuterStride<>(ldc));
  auto run = [&](const auto& prod) {
    if (beta == T(0)) {
      if (alpha == T(1))
        cm.noalias() = prod;
      else
        cm.noalias() = alpha * prod;
    } else {
      if (beta != T(1)) cm *= beta;
      if (alpha == T(1))
        cm.noalias() += prod;
      else
        cm.noalias() += alpha * prod;
    }
  };

  if (ta == Trans::No && tb == Trans::No) {
    Map am(a, m, k, Eigen::OuterStride<>(lda));
    Map bm(b, k, n, Eigen::OuterStride<>(ldb));
    run(am * bm);
  } else if (ta == Trans::No && tb == Trans::Yes) {
    Map am(a, m, k, Eigen::OuterStride<>(lda));
    Map bm(b, n, k, Eigen::OuterStride<>(ldb));
    run(am * bm.transpose());
  } else if (ta == Trans::Yes && tb == Trans::No) {
    Map am(a, k, m, Eigen::OuterStride<>(lda));
    Map bm(b, k, n, Eigen::OuterStride<>(ldb));
    run(am.transpose() * bm);
  } else {
    Map am(a, k, m, Eigen::OuterStride<>(lda));
    Map bm(b, n, k, Eigen::OuterStride<>(ldb));
    run(am.transpose() * bm.transpose());
  }
}

}  // namespace tdnet
