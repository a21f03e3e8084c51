// Shared helpers for the test suites.
#pragma once

#include <cmath>
#include <vector>

#include "abmt/common.hpp"
#include "abmt/tensor.hpp"

namespace testutil {

inline abmt::Tensor random_tensor(abmt::Rng& rng, std::vector<int> shape, double scale = 1.0,
                                  bool requires_grad = false) {
  abmt::Tensor t = abmt::Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.data_mut()) v = scale * rng.normal();
  return t;
}

// Random values kept away from zero: |v| >= margin. For finite-difference
// checks on kinked ops.
inline abmt::Tensor random_tensor_off_zero(abmt::Rng& rng, std::vector<int> shape, double margin,
                                           double scale = 1.0, bool requires_grad = false) {
  abmt::Tensor t = abmt::Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.data_mut()) {
    do {
      v = scale * rng.normal();
    } while (std::abs(v) < margin);
  }
  return t;
}

// Random square orthogonal matrix via Gram-Schmidt on a Gaussian matrix.
inline std::vector<double> random_orthogonal(abmt::Rng& rng, int d) {
  std::vector<double> q(static_cast<std::size_t>(d) * d);
  for (int i = 0; i < d; ++i) {
    std::vector<double> v(static_cast<std::size_t>(d));
    while (true) {
      for (double& x : v) x = rng.normal();
      for (int k = 0; k < i; ++k) {
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += v[static_cast<std::size_t>(j)] * q[static_cast<std::size_t>(k) * d + j];
        for (int j = 0; j < d; ++j) v[static_cast<std::size_t>(j)] -= dot * q[static_cast<std::size_t>(k) * d + j];
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (int j = 0; j < d; ++j) q[static_cast<std::size_t>(i) * d + j] = v[static_cast<std::size_t>(j)] / norm;
        break;
      }
    }
  }
  return q;
}

// PK-style label vector: n samples over k labels, round-robin.
inline std::vector<int> round_robin_labels(int n, int k) {
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = i % k;
  return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
