#include "slim/kernels.hpp"

#include <algorithm>
#include <vector>

namespace slim {
namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1 << 15;
// Column reductions walk rows in order over this many adjacent columns at once.
constexpr std::size_t kColBlock = 64;

std::vector<double> transpose(std::span<const double> x, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  }
  return t;
}

double slice_mean(const double* first, std::size_t count, std::size_t stride) {
  double lo = first[0];
  double hi = first[0];
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double x = first[i * stride];
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    acc += x;
  }
  // A constant slice averages to itself exactly; sum/count can be off by an ulp.
  if (lo == hi) return lo;
  return acc / static_cast<double>(count);
}

double slice_variance(const double* first, std::size_t count, std::size_t stride, double mean,
                      std::size_t ddof) {
  if (count <= ddof) return 0.0;
  double lo = first[0];
  double hi = first[0];
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double x = first[i * stride];
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    const double d = x - mean;
    acc += d * d;
  }
  if (lo == hi) return 0.0;
  return acc / static_cast<double>(count - ddof);
}

}  // namespace

namespace kernels {
namespace {

// c_i += sum_p a(i, p) * b_p over p in order, where a(i, p) = ai[p * a_stride].
// Four p at a time cuts loads and stores of c_i; each element still sees the
// additions in the same order as a plain dot-product loop.
void accumulate_row(const double* ai, std::size_t a_stride, const double* b, double* ci, std::size_t k,
                    std::size_t n) {
  std::fill(ci, ci + n, 0.0);
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    const double a0 = ai[p * a_stride];
    const double a1 = ai[(p + 1) * a_stride];
    const double a2 = ai[(p + 2) * a_stride];
    const double a3 = ai[(p + 3) * a_stride];
    const double* b0 = b + p * n;
    const double* b1 = b0 + n;
    const double* b2 = b1 + n;
    const double* b3 = b2 + n;
    for (std::size_t j = 0; j < n; ++j) ci[j] = (((ci[j] + a0 * b0[j]) + a1 * b1[j]) + a2 * b2[j]) + a3 * b3[j];
  }
  for (; p < k; ++p) {
    const double ap = ai[p * a_stride];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += ap * bp[j];
  }
}

}  // namespace

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    accumulate_row(a.data() + i * k, 1, b.data(), c.data() + i * n, k, n);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const std::vector<double> bt = transpose(b, n, k);
  gemm_nn(a, bt, c, m, k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  // Output rows in tiles so each pass over p reads a contiguous run of a's row.
  constexpr std::size_t kTile = 16;
  const auto tiles = static_cast<std::ptrdiff_t>((m + kTile - 1) / kTile);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::ptrdiff_t t = 0; t < tiles; ++t) {
    const std::size_t lo = static_cast<std::size_t>(t) * kTile;
    const std::size_t hi = std::min(m, lo + kTile);
    std::fill(c.data() + lo * n, c.data() + hi * n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double* ap = a.data() + p * m;
      const double* bp = b.data() + p * n;
      for (std::size_t i = lo; i < hi; ++i) {
        const double aip = ap[i];
        double* ci = c.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
  }
}

void row_means(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<double> out) {
  const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::ptrdiff_t r = 0; r < nrows; ++r) {
    out[r] = slice_mean(x.data() + r * cols, cols, 1);
  }
}

void col_means(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<double> out) {
  const auto nblocks = static_cast<std::ptrdiff_t>((cols + kColBlock - 1) / kColBlock);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::ptrdiff_t b = 0; b < nblocks; ++b) {
    const std::size_t c0 = static_cast<std::size_t>(b) * kColBlock;
    const std::size_t w = std::min(kColBlock, cols - c0);
    double acc[kColBlock] = {};
    bool constant[kColBlock];
    std::fill(constant, constant + w, true);
    const double* first = x.data() + c0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = first + r * cols;
      for (std::size_t j = 0; j < w; ++j) {
        acc[j] += row[j];
        if (row[j] != first[j]) constant[j] = false;
      }
    }
    for (std::size_t j = 0; j < w; ++j) out[c0 + j] = constant[j] ? first[j] : acc[j] / static_cast<double>(rows);
  }
}

void row_vars(std::span<const double> x, std::size_t rows, std::size_t cols,
              std::span<const double> means, std::size_t ddof, std::span<double> out) {
  const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::ptrdiff_t r = 0; r < nrows; ++r) {
    out[r] = slice_variance(x.data() + r * cols, cols, 1, means[r], ddof);
  }
}

void col_vars(std::span<const double> x, std::size_t rows, std::size_t cols,
              std::span<const double> means, std::size_t ddof, std::span<double> out) {
  if (rows <= ddof) {
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(cols), 0.0);
    return;
  }
  const auto nblocks = static_cast<std::ptrdiff_t>((cols + kColBlock - 1) / kColBlock);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::ptrdiff_t b = 0; b < nblocks; ++b) {
    const std::size_t c0 = static_cast<std::size_t>(b) * kColBlock;
    const std::size_t w = std::min(kColBlock, cols - c0);
    double acc[kColBlock] = {};
    bool constant[kColBlock];
    std::fill(constant, constant + w, true);
    const double* first = x.data() + c0;
    const double* mu = means.data() + c0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = first + r * cols;
      for (std::size_t j = 0; j < w; ++j) {
        const double d = row[j] - mu[j];
        acc[j] += d * d;
        if (row[j] != first[j]) constant[j] = false;
      }
    }
    for (std::size_t j = 0; j < w; ++j) out[c0 + j] = constant[j] ? 0.0 : acc[j] / static_cast<double>(rows - ddof);
  }
}

}  // namespace kernels

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void row_means(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    bool constant = true;
    for (std::size_t c = 0; c < cols; ++c) {
      acc += x[r * cols + c];
      constant = constant && x[r * cols + c] == x[r * cols];
    }
    out[r] = constant ? x[r * cols] : acc / static_cast<double>(cols);
  }
}

void col_means(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<double> out) {
  std::vector<double> acc(cols, 0.0);
  std::vector<char> constant(cols, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      acc[c] += x[r * cols + c];
      if (x[r * cols + c] != x[c]) constant[c] = 0;
    }
  }
  for (std::size_t c = 0; c < cols; ++c) {
    out[c] = constant[c] ? x[c] : acc[c] / static_cast<double>(rows);
  }
}

void row_vars(std::span<const double> x, std::size_t rows, std::size_t cols,
              std::span<const double> means, std::size_t ddof, std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = slice_variance(x.data() + r * cols, cols, 1, means[r], ddof);
  }
}

void col_vars(std::span<const double> x, std::size_t rows, std::size_t cols,
              std::span<const double> means, std::size_t ddof, std::span<double> out) {
  for (std::size_t c = 0; c < cols; ++c) {
    out[c] = slice_variance(x.data() + c, rows, cols, means[c], ddof);
  }
}

}  // namespace serial
}  // namespace slim
