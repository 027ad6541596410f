#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace slim {

/// Sharing dimensions of a second-moment tensor. FanOut is axis 0 and FanIn
/// is axis 1 of a (fan_out, fan_in) matrix; Both reduces every axis.
enum class Axes { None, FanOut, FanIn, Both };

std::string_view to_string(Axes k);
std::optional<Axes> parse_axes(std::string_view token);

class Shape {
 public:
  Shape() = default;
  explicit Shape(std::size_t length);
  Shape(std::size_t fan_out, std::size_t fan_in);

  int rank() const noexcept { return rank_; }
  std::size_t dim(int axis) const;
  std::size_t rows() const noexcept { return dims_[0]; }
  /// Columns of a matrix; 1 for vectors.
  std::size_t cols() const noexcept { return rank_ == 2 ? dims_[1] : 1; }
  std::size_t numel() const noexcept { return rank_ == 0 ? 0 : rows() * cols(); }
  std::string str() const;

  bool operator==(const Shape&) const = default;

 private:
  std::array<std::size_t, 2> dims_{0, 0};
  int rank_ = 0;
};

/// Dense rank-1 or rank-2 array of doubles, row-major.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return shape_.rank(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t rows() const noexcept { return shape_.rows(); }
  std::size_t cols() const noexcept { return shape_.cols(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// Bitwise-by-value comparison of shape and every entry.
  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class Variance { Population, Sample };

/// Whether `k` may be applied to a tensor of the given rank.
bool axes_valid_for(Axes k, int rank) noexcept;

/// Shape left after removing the dims in `k`. Both yields a length-1 vector.
Shape reduced_shape(const Shape& full, Axes k);

/// Arithmetic mean over the dims in `k`; None is the identity.
Tensor mean_along(const Tensor& t, Axes k);

/// Variance over the dims in `k` (None not allowed). A reduced extent of one,
/// or an exactly constant slice, gives exactly zero.
Tensor var_along(const Tensor& t, Axes k, Variance kind = Variance::Population);

/// Inverse of the reduction: repeats `reduced` along the dims in `k`.
Tensor broadcast_along(const Tensor& reduced, Axes k, const Shape& full_shape);

Tensor square(const Tensor& t);
double sum(const Tensor& t);
bool all_finite(const Tensor& t);

namespace serial {

// Straight-loop reference versions of the reductions, kept for tests and
// benchmarks. Results are bit-identical to the parallel kernels.
Tensor mean_along(const Tensor& t, Axes k);
Tensor var_along(const Tensor& t, Axes k, Variance kind = Variance::Population);

}  // namespace serial

}  // namespace slim
