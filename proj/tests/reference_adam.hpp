#pragma once

// Textbook AdamW over flat arrays, written independently of slim::optim and
// used as the oracle for the k = None path.

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace slim::testing {

struct ReferenceAdam {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  std::optional<double> clip_norm = 1.0;

  std::vector<std::vector<double>> m, v;
  std::vector<double> decay;  // per block: weight_decay for matrices, 0 for vectors
  std::int64_t t = 0;

  void init(const std::vector<std::vector<double>>& params, const std::vector<bool>& is_matrix) {
    m.clear();
    v.clear();
    decay.clear();
    for (std::size_t b = 0; b < params.size(); ++b) {
      m.emplace_back(params[b].size(), 0.0);
      v.emplace_back(params[b].size(), 0.0);
      decay.push_back(is_matrix[b] ? weight_decay : 0.0);
    }
    t = 0;
  }

  void step(std::vector<std::vector<double>>& params, std::vector<std::vector<double>> grads, double lr) {
    t += 1;
    if (clip_norm) {
      double total = 0.0;
      for (const auto& g : grads) {
        double block = 0.0;
        for (double x : g) block += x * x;
        total += block;
      }
      const double norm = std::sqrt(total);
      if (norm > *clip_norm) {
        const double scale = *clip_norm / norm;
        for (auto& g : grads) {
          for (double& x : g) x *= scale;
        }
      }
    }
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t b = 0; b < params.size(); ++b) {
      for (std::size_t i = 0; i < params[b].size(); ++i) {
        const double g = grads[b][i];
        m[b][i] = beta1 * m[b][i] + (1.0 - beta1) * g;
        v[b][i] = beta2 * v[b][i] + (1.0 - beta2) * (g * g);
        const double step = (m[b][i] / c1) / (std::sqrt(v[b][i] / c2) + eps);
        params[b][i] = params[b][i] - lr * step - lr * decay[b] * params[b][i];
      }
    }
  }
};

}  // namespace slim::testing
