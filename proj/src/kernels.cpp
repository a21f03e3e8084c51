#include "abmt/kernels.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace abmt::kernels {

namespace {

bool g_parallel = true;

// Shared row bodies. Both the serial and OpenMP variants call these, which
// guarantees bitwise-identical results regardless of the execution path.

inline void matmul_nt_row(const double* a, const double* b, double* c, int k, int m, int i) {
  const double* ai = a + static_cast<std::size_t>(i) * k;
  double* ci = c + static_cast<std::size_t>(i) * m;
  for (int j = 0; j < m; ++j) {
    const double* bj = b + static_cast<std::size_t>(j) * k;
    double acc = 0.0;
    for (int t = 0; t < k; ++t) acc += ai[t] * bj[t];
    ci[j] = acc;
  }
}

inline void matmul_nn_row(const double* a, const double* b, double* c, int k, int m, int i) {
  const double* ai = a + static_cast<std::size_t>(i) * k;
  double* ci = c + static_cast<std::size_t>(i) * m;
  for (int j = 0; j < m; ++j) ci[j] = 0.0;
  for (int t = 0; t < k; ++t) {
    const double av = ai[t];
    const double* bt = b + static_cast<std::size_t>(t) * m;
    for (int j = 0; j < m; ++j) ci[j] += av * bt[j];
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c, int r, int n, int m, int i) {
  // c[i, :] = sum_t a[t, i] * b[t, :]
  double* ci = c + static_cast<std::size_t>(i) * m;
  for (int j = 0; j < m; ++j) ci[j] = 0.0;
  for (int t = 0; t < r; ++t) {
    const double av = a[static_cast<std::size_t>(t) * n + i];
    const double* bt = b + static_cast<std::size_t>(t) * m;
    for (int j = 0; j < m; ++j) ci[j] += av * bt[j];
  }
}

inline void pairwise_row(const double* x, double* d, int n, int dim, int i) {
  const double* xi = x + static_cast<std::size_t>(i) * dim;
  double* di = d + static_cast<std::size_t>(i) * n;
  for (int j = 0; j < n; ++j) {
    if (j == i) {
      di[j] = 0.0;
      continue;
    }
    const double* xj = x + static_cast<std::size_t>(j) * dim;
    double acc = 0.0;
    for (int t = 0; t < dim; ++t) {
      const double diff = xi[t] - xj[t];
      acc += diff * diff;
    }
    di[j] = std::sqrt(acc);
  }
}

}  // namespace

bool parallel_enabled() { return g_parallel; }
void set_parallel_enabled(bool on) { g_parallel = on; }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void matmul_nt(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) matmul_nt_row(a, b, c, k, m, i);
}

void matmul_nn(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) matmul_nn_row(a, b, c, k, m, i);
}

void matmul_tn(const double* a, const double* b, double* c, int r, int n, int m) {
  for (int i = 0; i < n; ++i) matmul_tn_row(a, b, c, r, n, m, i);
}

void pairwise_dist(const double* x, double* d, int n, int dim) {
  for (int i = 0; i < n; ++i) pairwise_row(x, d, n, dim, i);
}

}  // namespace serial

namespace openmp {

void matmul_nt(const double* a, const double* b, double* c, int n, int k, int m) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) matmul_nt_row(a, b, c, k, m, i);
}

void matmul_nn(const double* a, const double* b, double* c, int n, int k, int m) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) matmul_nn_row(a, b, c, k, m, i);
}

void matmul_tn(const double* a, const double* b, double* c, int r, int n, int m) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) matmul_tn_row(a, b, c, r, n, m, i);
}

void pairwise_dist(const double* x, double* d, int n, int dim) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) pairwise_row(x, d, n, dim, i);
}

}  // namespace openmp

void matmul_nt(const double* a, const double* b, double* c, int n, int k, int m) {
  const std::size_t work = static_cast<std::size_t>(n) * k * m;
  if (g_parallel && work >= kParallelGrain)
    openmp::matmul_nt(a, b, c, n, k, m);
  else
    serial::matmul_nt(a, b, c, n, k, m);
}

void matmul_nn(const double* a, const double* b, double* c, int n, int k, int m) {
  const std::size_t work = static_cast<std::size_t>(n) * k * m;
  if (g_parallel && work >= kParallelGrain)
    openmp::matmul_nn(a, b, c, n, k, m);
  else
    serial::matmul_nn(a, b, c, n, k, m);
}

void matmul_tn(const double* a, const double* b, double* c, int r, int n, int m) {
  const std::size_t work = static_cast<std::size_t>(r) * n * m;
  if (g_parallel && work >= kParallelGrain)
    openmp::matmul_tn(a, b, c, r, n, m);
  else
    serial::matmul_tn(a, b, c, r, n, m);
}

void pairwise_dist(const double* x, double* d, int n, int dim) {
  const std::size_t work = static_cast<std::size_t>(n) * n * dim;
  if (g_parallel && work >= kParallelGrain)
    openmp::pairwise_dist(x, d, n, dim);
  else
    serial::pairwise_dist(x, d, n, dim);
}

}  // namespace abmt::kernels
