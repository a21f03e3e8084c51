// Timing comparison of the serial and OpenMP kernel paths. Also verifies the
// two paths produce bitwise-identical results on every measured case.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "abmt/common.hpp"
#include "abmt/kernels.hpp"

namespace {

using Clock = std::chrono::steady_clock;

std::vector<double> random_matrix(abmt::Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct Case {
  const char* name;
  std::function<void(double*)> serial;
  std::function<void(double*)> openmp;
  std::size_t out_size;
};

}  // namespace

int main() {
  abmt::Rng rng(42);

  const int n = 256, k = 128, m = 192;
  const auto a = random_matrix(rng, static_cast<std::size_t>(n) * k);
  const auto b_nt = random_matrix(rng, static_cast<std::size_t>(m) * k);
  const auto b_nn = random_matrix(rng, static_cast<std::size_t>(k) * m);
  const auto a_tn = random_matrix(rng, static_cast<std::size_t>(n) * k);
  const auto b_tn = random_matrix(rng, static_cast<std::size_t>(n) * m);
  const int pn = 512, pd = 64;
  const auto points = random_matrix(rng, static_cast<std::size_t>(pn) * pd);

  const std::vector<Case> cases = {
      {"matmul_nt 256x128 * (192x128)^T",
       [&](double* c) { abmt::kernels::serial::matmul_nt(a.data(), b_nt.data(), c, n, k, m); },
       [&](double* c) { abmt::kernels::openmp::matmul_nt(a.data(), b_nt.data(), c, n, k, m); },
       static_cast<std::size_t>(n) * m},
      {"matmul_nn 256x128 * 128x192",
       [&](double* c) { abmt::kernels::serial::matmul_nn(a.data(), b_nn.data(), c, n, k, m); },
       [&](double* c) { abmt::kernels::openmp::matmul_nn(a.data(), b_nn.data(), c, n, k, m); },
       static_cast<std::size_t>(n) * m},
      {"matmul_tn (256x128)^T * 256x192",
       [&](double* c) { abmt::kernels::serial::matmul_tn(a_tn.data(), b_tn.data(), c, n, k, m); },
       [&](double* c) { abmt::kernels::openmp::matmul_tn(a_tn.data(), b_tn.data(), c, n, k, m); },
       static_cast<std::size_t>(k) * m},
      {"pairwise_dist 512 x 64",
       [&](double* c) { abmt::kernels::serial::pairwise_dist(points.data(), c, pn, pd); },
       [&](double* c) { abmt::kernels::openmp::pairwise_dist(points.data(), c, pn, pd); },
       static_cast<std::size_t>(pn) * pn},
  };

  std::printf("threads available: %d\n\n", abmt::kernels::max_threads());
  std::printf("%-36s %12s %12s %9s %s\n", "kernel", "serial ms", "openmp ms", "speedup", "equal");

  int failures = 0;
  for (const auto& c : cases) {
    std::vector<double> out_serial(c.out_size), out_openmp(c.out_size);
    const double ts = time_ms([&]() { c.serial(out_serial.data()); }, 20);
    const double tp = time_ms([&]() { c.openmp(out_openmp.data()); }, 20);
    const bool eq = bitwise_equal(out_serial, out_openmp);
    if (!eq) ++failures;
    std::printf("%-36s %12.3f %12.3f %8.2fx %s\n", c.name, ts, tp, ts / tp, eq ? "yes" : "NO");
  }

  if (failures > 0) {
    std::printf("\n%d kernel(s) diverged between paths\n", failures);
    return 1;
  }
  return 0;
}
