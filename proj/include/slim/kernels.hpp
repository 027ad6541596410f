#pragma once

#include <cstddef>
#include <span>

// Raw row-major kernels behind Tensor and the autodiff ops.
//
// slim::kernels holds the OpenMP versions; slim::serial holds plain loop
// references with the same signatures. Every output element is accumulated in
// the same order by both, so results agree bit for bit at any thread count.

namespace slim::kernels {

/// c(m×n) = a(m×k) · b(k×n)
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
/// c(m×n) = a(m×k) · b(n×k)ᵀ
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
/// c(m×n) = a(k×m)ᵀ · b(k×n)
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);

void row_means(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<double> out);
void col_means(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<double> out);

/// Two-pass variance of each row around `means`; divisor is cols - ddof.
void row_vars(std::span<const double> x, std::size_t rows, std::size_t cols,
              std::span<const double> means, std::size_t ddof, std::span<double> out);
void col_vars(std::span<const double> x, std::size_t rows, std::size_t cols,
              std::span<const double> means, std::size_t ddof, std::span<double> out);

}  // namespace slim::kernels

namespace slim::serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);

void row_means(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<double> out);
void col_means(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<double> out);
void row_vars(std::span<const double> x, std::size_t rows, std::size_t cols,
              std::span<const double> means, std::size_t ddof, std::span<double> out);
void col_vars(std::span<const double> x, std::size_t rows, std::size_t cols,
              std::span<const double> means, std::size_t ddof, std::span<double> out);

}  // namespace slim::serial
