// Benchmark of the OpenMP kernels against their serial reference
// implementations, on the shapes that dominate training and evaluation.

#include <chrono>
#include <cstdio>
#include <vector>

#include "mmrec/kernels.hpp"
#include "mmrec/rng.hpp"

using namespace mmrec;

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<float> random_matrix(size_t n, uint64_t seed, const char* label) {
  SeededRng rng(seed, label);
  std::vector<float> m(n);
  for (float& v : m) v = static_cast<float>(rng.normal());
  return m;
}

template <typename F>
double time_best_of(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    double t0 = now_ms();
    f();
    best = std::min(best, now_ms() - t0);
  }
  return best;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

void bench_case(const char* name, size_t m, size_t n, size_t k) {
  auto a = random_matrix(m * k, 1, "bench-a");
  auto b = random_matrix(n * k, 2, "bench-b");
  std::vector<float> c_ref(m * n), c_omp(m * n);
  double t_ref = time_best_of(3, [&] {
    kernels::reference::matmul_nt(a.data(), b.data(), c_ref.data(), m, n, k);
  });
  double t_omp =
      time_best_of(3, [&] { kernels::matmul_nt(a.data(), b.data(), c_omp.data(), m, n, k); });
  bool same = bitwise_equal(c_ref, c_omp);
  std::printf("%-28s %4zux%-4zux%-4zu  serial %9.2f ms   omp %9.2f ms   speedup %5.2fx   %s\n", name,
              m, n, k, t_ref, t_omp, t_ref / t_omp, same ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
  std::printf("threads: %d\n", kernels::thread_count());
  bench_case("linear forward (batch)", 512, 512, 512);
  bench_case("score users vs catalog", 2000, 5000, 64);
  bench_case("wide feature projection", 256, 256, 4096);
  return 0;
}
