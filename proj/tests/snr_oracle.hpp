#pragma once

// Brute-force SNR: explicit loops, two-pass mean and population variance.

#include <vector>

namespace slim::testing {

enum class Reduce { Rows, Cols, All };  // Rows: over fan_out; Cols: over fan_in

inline double brute_snr(const std::vector<std::vector<double>>& v, Reduce how, double eps) {
  const std::size_t rows = v.size();
  const std::size_t cols = v[0].size();
  auto ratio = [&](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return mean * mean / (var + eps);
  };
  if (how == Reduce::All) {
    std::vector<double> all;
    for (const auto& row : v) all.insert(all.end(), row.begin(), row.end());
    return ratio(all);
  }
  double total = 0.0;
  if (how == Reduce::Cols) {
    for (std::size_t r = 0; r < rows; ++r) total += ratio(v[r]);
    return total / static_cast<double>(rows);
  }
  for (std::size_t c = 0; c < cols; ++c) {
    std::vector<double> column;
    for (std::size_t r = 0; r < rows; ++r) column.push_back(v[r][c]);
    total += ratio(column);
  }
  return total / static_cast<double>(cols);
}

}  // namespace slim::testing
