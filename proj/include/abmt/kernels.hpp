#pragma once

#include <cstddef>

namespace abmt::kernels {

// Global switch for the OpenMP paths. Serial and parallel variants share the
// same per-row bodies, so results are bitwise identical either way; the
// switch exists for testing and benchmarking.
bool parallel_enabled();
void set_parallel_enabled(bool on);
int max_threads();

// Work sizes below this many inner-loop operations stay serial.
inline constexpr std::size_t kParallelGrain = 16384;

namespace serial {
// c[n x m] = a[n x k] * b[m x k]^T
void matmul_nt(const double* a, const double* b, double* c, int n, int k, int m);
// c[n x m] = a[n x k] * b[k x m]
void matmul_nn(const double* a, const double* b, double* c, int n, int k, int m);
// c[n x m] = a[r x n]^T * b[r x m]
void matmul_tn(const double* a, const double* b, double* c, int r, int n, int m);
// d[n x n], d[i,j] = euclidean distance between rows i and j of x[n x dim]
void pairwise_dist(const double* x, double* d, int n, int dim);
}  // namespace serial

namespace openmp {
void matmul_nt(const double* a, const double* b, double* c, int n, int k, int m);
void matmul_nn(const double* a, const double* b, double* c, int n, int k, int m);
void matmul_tn(const double* a, const double* b, double* c, int r, int n, int m);
void pairwise_dist(const double* x, double* d, int n, int dim);
}  // namespace openmp

// Dispatchers: pick the OpenMP path when enabled and the work is large
// enough to amortize thread startup.
void matmul_nt(const double* a, const double* b, double* c, int n, int k, int m);
void matmul_nn(const double* a, const double* b, double* c, int n, int k, int m);
void matmul_tn(const double* a, const double* b, double* c, int r, int n, int m);
void pairwise_dist(const double* x, double* d, int n, int dim);

// Row-parallel helper for loops whose iterations write disjoint outputs.
// Each iteration is serial internally, so the result does not depend on the
// thread count.
template <class F>
void parallel_for(int n, F&& f) {
#ifdef _OPENMP
  if (parallel_enabled() && n > 1) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
#endif
  for (int i = 0; i < n; ++i) f(i);
}

}  // namespace abmt::kernels
