#include "slim/tensor.hpp"

#include <cmath>
#include <numeric>

#include "slim/errors.hpp"
#include "slim/kernels.hpp"

namespace slim {

std::string_view to_string(Axes k) {
  switch (k) {
    case Axes::None: return "none";
    case Axes::FanOut: return "fan_out";
    case Axes::FanIn: return "fan_in";
    case Axes::Both: return "both";
  }
  return "none";
}

std::optional<Axes> parse_axes(std::string_view token) {
  if (token == "none") return Axes::None;
  if (token == "fan_out") return Axes::FanOut;
  if (token == "fan_in") return Axes::FanIn;
  if (token == "both") return Axes::Both;
  return std::nullopt;
}

Shape::Shape(std::size_t length) : dims_{length, 0}, rank_(1) {
  if (length == 0) throw ShapeError("tensor dims must be positive");
}

Shape::Shape(std::size_t fan_out, std::size_t fan_in) : dims_{fan_out, fan_in}, rank_(2) {
  if (fan_out == 0 || fan_in == 0) throw ShapeError("tensor dims must be positive");
}

std::size_t Shape::dim(int axis) const {
  if (axis < 0 || axis >= rank_) throw ShapeError("axis out of range for " + str());
  return dims_[static_cast<std::size_t>(axis)];
}

std::string Shape::str() const {
  if (rank_ == 1) return "(" + std::to_string(dims_[0]) + ")";
  if (rank_ == 2) return "(" + std::to_string(dims_[0]) + "," + std::to_string(dims_[1]) + ")";
  return "()";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_.str());
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape(1), std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape(values.size()), std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(n_rows * n_cols);
  for (const auto& row : rows) {
    if (row.size() != n_cols) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape(n_rows, n_cols), std::move(data));
}

bool axes_valid_for(Axes k, int rank) noexcept {
  switch (k) {
    case Axes::None:
    case Axes::Both: return rank == 1 || rank == 2;
    case Axes::FanOut:
    case Axes::FanIn: return rank == 2;
  }
  return false;
}

Shape reduced_shape(const Shape& full, Axes k) {
  if (!axes_valid_for(k, full.rank())) {
    throw ShapeError("axes " + std::string(to_string(k)) + " invalid for shape " + full.str());
  }
  switch (k) {
    case Axes::None: return full;
    case Axes::FanOut: return Shape(full.cols());
    case Axes::FanIn: return Shape(full.rows());
    case Axes::Both: return Shape(1);
  }
  return full;
}

namespace {

using MeanKernel = void (*)(std::span<const double>, std::size_t, std::size_t, std::span<double>);
using VarKernel = void (*)(std::span<const double>, std::size_t, std::size_t, std::span<const double>,
                           std::size_t, std::span<double>);

struct ReductionKernels {
  MeanKernel row_means;
  MeanKernel col_means;
  VarKernel row_vars;
  VarKernel col_vars;
};

constexpr ReductionKernels kParallel{kernels::row_means, kernels::col_means, kernels::row_vars,
                                     kernels::col_vars};
constexpr ReductionKernels kSerial{serial::row_means, serial::col_means, serial::row_vars,
                                   serial::col_vars};

Tensor mean_with(const ReductionKernels& kern, const Tensor& t, Axes k) {
  const Shape out_shape = reduced_shape(t.shape(), k);
  if (k == Axes::None) return t;
  Tensor out(out_shape);
  switch (k) {
    case Axes::FanIn: kern.row_means(t.data(), t.rows(), t.cols(), out.data()); break;
    case Axes::FanOut: kern.col_means(t.data(), t.rows(), t.cols(), out.data()); break;
    case Axes::Both: kern.row_means(t.data(), 1, t.size(), out.data()); break;
    case Axes::None: break;
  }
  return out;
}

Tensor var_with(const ReductionKernels& kern, const Tensor& t, Axes k, Variance kind) {
  if (k == Axes::None) throw ContractError("variance needs at least one reduced axis");
  const Tensor means = mean_with(kern, t, k);
  const std::size_t ddof = kind == Variance::Sample ? 1 : 0;
  Tensor out(means.shape());
  switch (k) {
    case Axes::FanIn: kern.row_vars(t.data(), t.rows(), t.cols(), means.data(), ddof, out.data()); break;
    case Axes::FanOut: kern.col_vars(t.data(), t.rows(), t.cols(), means.data(), ddof, out.data()); break;
    case Axes::Both: kern.row_vars(t.data(), 1, t.size(), means.data(), ddof, out.data()); break;
    case Axes::None: break;
  }
  return out;
}

}  // namespace

Tensor mean_along(const Tensor& t, Axes k) { return mean_with(kParallel, t, k); }

Tensor var_along(const Tensor& t, Axes k, Variance kind) { return var_with(kParallel, t, k, kind); }

Tensor broadcast_along(const Tensor& reduced, Axes k, const Shape& full_shape) {
  const Shape expect = reduced_shape(full_shape, k);
  if (reduced.shape() != expect) {
    throw ShapeError("cannot broadcast " + reduced.shape().str() + " along " +
                     std::string(to_string(k)) + " to " + full_shape.str());
  }
  if (k == Axes::None) return reduced;
  Tensor out(full_shape);
  const std::size_t rows = full_shape.rows();
  const std::size_t cols = full_shape.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double v = 0.0;
      switch (k) {
        case Axes::FanIn: v = reduced[r]; break;
        case Axes::FanOut: v = reduced[c]; break;
        case Axes::Both: v = reduced[0]; break;
        case Axes::None: break;
      }
      out[r * cols + c] = v;
    }
  }
  return out;
}

Tensor square(const Tensor& t) {
  Tensor out = t;
  for (double& x : out.data()) x *= x;
  return out;
}

double sum(const Tensor& t) { return std::accumulate(t.data().begin(), t.data().end(), 0.0); }

bool all_finite(const Tensor& t) {
  for (double x : t.data()) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

namespace serial {

Tensor mean_along(const Tensor& t, Axes k) { return mean_with(kSerial, t, k); }

Tensor var_along(const Tensor& t, Axes k, Variance kind) { return var_with(kSerial, t, k, kind); }

}  // namespace serial
}  // namespace slim
