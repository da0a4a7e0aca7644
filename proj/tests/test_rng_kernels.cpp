#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmrec/kernels.hpp"
#include "mmrec/rng.hpp"

using namespace mmrec;

TEST_CASE("seeded rng: identical (seed, label) streams are identical") {
  SeededRng a(42, "stream");
  SeededRng b(42, "stream");
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("seeded rng: different labels give independent streams") {
  SeededRng a(42, "stream-a");
  SeededRng b(42, "stream-b");
  int same = 0;
  for (int i = 0; i < 100; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("seeded rng: uniform(n) is in range and roughly flat") {
  SeededRng rng(7, "uniform");
  std::vector<int> counts(10, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<size_t>(rng.uniform(10))];
  for (int c : counts) {
    CHECK(c > draws / 10 - 600);
    CHECK(c < draws / 10 + 600);
  }
}

TEST_CASE("seeded rng: normal has near-zero mean and unit variance") {
  SeededRng rng(7, "normal");
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("seeded rng: shuffle is a permutation and seed-stable") {
  std::vector<int> v1{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, v2 = v1, sorted = v1;
  SeededRng a(3, "shuffle"), b(3, "shuffle");
  a.shuffle(v1);
  b.shuffle(v2);
  CHECK(v1 == v2);
  std::sort(v2.begin(), v2.end());
  CHECK(v2 == sorted);
}

namespace {

std::vector<float> random_vec(size_t n, const char* label) {
  SeededRng rng(11, label);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.normal());
  return v;
}

}  // namespace

TEST_CASE("kernels: parallel matmul variants are bit-identical to the serial reference") {
  const size_t m = 37, n = 29, k = 53;
  auto a = random_vec(m * k, "a");
  auto b = random_vec(n * k, "b");
  std::vector<float> c1(m * n), c2(m * n);
  kernels::matmul_nt(a.data(), b.data(), c1.data(), m, n, k);
  kernels::reference::matmul_nt(a.data(), b.data(), c2.data(), m, n, k);
  CHECK(c1 == c2);

  auto b2 = random_vec(k * n, "b2");
  kernels::matmul_nn(a.data(), b2.data(), c1.data(), m, n, k);
  kernels::reference::matmul_nn(a.data(), b2.data(), c2.data(), m, n, k);
  CHECK(c1 == c2);

  auto g = random_vec(m * k, "g");
  auto x = random_vec(m * n, "x");
  std::vector<float> w1(k * n, 0.5f), w2(k * n, 0.5f);
  kernels::matmul_tn(g.data(), x.data(), w1.data(), m, n, k, true);
  kernels::reference::matmul_tn(g.data(), x.data(), w2.data(), m, n, k, true);
  CHECK(w1 == w2);

  std::vector<float> s1(n), s2(n);
  kernels::col_sum(x.data(), s1.data(), m, n);
  kernels::reference::col_sum(x.data(), s2.data(), m, n);
  CHECK(s1 == s2);

  auto y = random_vec(m * k, "y");
  std::vector<float> d1(m), d2(m);
  kernels::row_dot(a.data(), y.data(), d1.data(), m, k);
  kernels::reference::row_dot(a.data(), y.data(), d2.data(), m, k);
  CHECK(d1 == d2);
}

TEST_CASE("kernels: accumulate flag adds instead of overwriting") {
  std::vector<float> a{1, 2, 3, 4}, b{1, 0, 0, 1};  // 2x2
  std::vector<float> c{10, 10, 10, 10};
  kernels::matmul_nn(a.data(), b.data(), c.data(), 2, 2, 2, true);
  CHECK(c == std::vector<float>{11, 12, 13, 14});
}

TEST_CASE("kernels: matmul accumulates in double") {
  // 1e8 + 1 - 1e8 collapses in pure f32 accumulation when summed in order.
  std::vector<float> a{1e8f, 1.0f, -1e8f};
  std::vector<float> b{1.0f, 1.0f, 1.0f};
  std::vector<float> c(1);
  kernels::matmul_nt(a.data(), b.data(), c.data(), 1, 1, 3);
  CHECK(c[0] == 1.0f);
}
