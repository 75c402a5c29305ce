#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace aarmvs {

// Dense row-major shape, rank 0..4. Images and feature maps are (H, W, C)
// with channels fastest; convolution weights are (KH, KW, Cin, Cout).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int64_t> ds) {
    if (ds.size() > 4) throw std::invalid_argument("Shape: rank > 4");
    rank_ = static_cast<int>(ds.size());
    int i = 0;
    for (int64_t d : ds) d_[i++] = d;
  }

  int rank() const { return rank_; }
  int64_t operator[](int i) const { return d_[i]; }
  int64_t& operator[](int i) { return d_[i]; }

  int64_t numel() const {
    int64_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= d_[i];
    return n;
  }

  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (d_[i] != o.d_[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (int i = 0; i < rank_; ++i) os << d_[i] << (i + 1 < rank_ ? "x" : "");
    os << ')';
    return os.str();
  }

 private:
  std::array<int64_t, 4> d_{1, 1, 1, 1};
  int rank_ = 0;
};

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), data(static_cast<size_t>(s.numel()), T(0)) {}
  Tensor(Shape s, T fill) : shape(s), data(static_cast<size_t>(s.numel()), fill) {}
  Tensor(Shape s, std::vector<T> d) : shape(s), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != shape.numel())
      throw std::invalid_argument("Tensor: data size does not match shape " + shape.str());
  }

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor full(Shape s, T v) { return Tensor(s, v); }

  int64_t numel() const { return shape.numel(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // (i, j) for rank-2, (i, j, k) for rank-3 row-major access.
  T& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  const T& at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
  T& at(int64_t i, int64_t j, int64_t k) {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const T& at(int64_t i, int64_t j, int64_t k) const {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <typename U, typename T>
Tensor<U> tensor_cast(const Tensor<T>& t) {
  Tensor<U> out(t.shape);
  for (int64_t i = 0; i < t.numel(); ++i) out[i] = static_cast<U>(t[i]);
  return out;
}

template <typename T>
void check_shape(const Tensor<T>& t, const Shape& want, const char* what) {
  if (t.shape != want)
    throw std::invalid_argument(std::string(what) + ": expected shape " + want.str() +
                                ", got " + t.shape.str());
}

}  // namespace aarmvs
