#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ilr {

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 5;

inline std::size_t shape_size(Shape const &s)
{
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(Shape const &s)
{
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    os << (i ? ", " : "") << s[i];
  }
  os << ')';
  return os.str();
}

class ShapeError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of up to five axes. Value type; copies are deep.
template <typename T>
class BasicTensor
{
public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0})
    : shape_{std::move(shape)}
  {
    check_rank(shape_);
    data_.assign(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data)
    : shape_{std::move(shape)}
    , data_{std::move(data)}
  {
    check_rank(shape_);
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  Shape const &shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T *data() { return data_.data(); }
  T const *data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<T const> span() const { return data_; }
  std::vector<T> const &values() const { return data_; }

  T &operator[](std::size_t i) { return data_[i]; }
  T const &operator[](std::size_t i) const { return data_[i]; }

  template <typename... I>
  T &operator()(I... idx)
  {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... I>
  T const &operator()(I... idx) const
  {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  /// Same data, new extents. Row-major order is preserved.
  BasicTensor reshaped(Shape new_shape) const &
  {
    check_reshape(new_shape);
    return BasicTensor(std::move(new_shape), data_);
  }
  BasicTensor reshaped(Shape new_shape) &&
  {
    check_reshape(new_shape);
    return BasicTensor(std::move(new_shape), std::move(data_));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  BasicTensor &operator+=(BasicTensor const &o)
  {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) {
      data_[i] += o.data_[i];
    }
    return *this;
  }
  BasicTensor &operator-=(BasicTensor const &o)
  {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) {
      data_[i] -= o.data_[i];
    }
    return *this;
  }
  BasicTensor &operator*=(T s)
  {
    for (auto &v : data_) {
      v *= s;
    }
    return *this;
  }

  friend BasicTensor operator+(BasicTensor a, BasicTensor const &b) { return a += b; }
  friend BasicTensor operator-(BasicTensor a, BasicTensor const &b) { return a -= b; }
  friend BasicTensor operator*(T s, BasicTensor a) { return a *= s; }

  bool operator==(BasicTensor const &o) const = default;

  bool all_finite() const
  {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void require_same_shape(BasicTensor const &o, char const *what) const
  {
    if (shape_ != o.shape_) {
      throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(shape_) + " vs " +
                       shape_str(o.shape_));
    }
  }

private:
  static void check_rank(Shape const &s)
  {
    if (s.size() > kMaxRank) {
      throw ShapeError("tensor: rank " + std::to_string(s.size()) + " exceeds 5");
    }
  }

  void check_reshape(Shape const &s) const
  {
    check_rank(s);
    if (shape_size(s) != data_.size()) {
      throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(s));
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const
  {
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;
/// A hyperspectral cube, bands x height x width.
using HsiCube = Tensor;

/// Free-function form of BasicTensor::reshaped.
template <typename T>
BasicTensor<T> reshape(BasicTensor<T> const &t, Shape new_shape)
{
  return t.reshaped(std::move(new_shape));
}

template <typename T>
T max_abs_diff(BasicTensor<T> const &a, BasicTensor<T> const &b)
{
  a.require_same_shape(b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

template <typename T>
T dot(BasicTensor<T> const &a, BasicTensor<T> const &b)
{
  a.require_same_shape(b, "dot");
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

template <typename T>
T squared_norm(BasicTensor<T> const &a)
{
  T s = 0;
  for (auto v : a.values()) {
    s += v * v;
  }
  return s;
}

template <typename T>
T sum(BasicTensor<T> const &a)
{
  T s = 0;
  for (auto v : a.values()) {
    s += v;
  }
  return s;
}

template <typename To, typename From>
BasicTensor<To> cast(BasicTensor<From> const &t)
{
  std::vector<To> out(t.size());
  std::transform(t.values().begin(), t.values().end(), out.begin(),
                 [](From v) { return static_cast<To>(v); });
  return BasicTensor<To>(t.shape(), std::move(out));
}

} // namespace ilr
