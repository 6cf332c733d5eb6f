#include <omp.h>

#include <random>

#include "doctest.h"
#include "needle/kernels/distance.hpp"
#include "temp_dir.hpp"

using namespace needle;
using namespace needle::kernels;

TEST_CASE("parallel exact scan equals the serial reference") {
  omp_set_num_threads(4);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t n = 1 + rng() % 900, dim = 1 + rng() % 40;
    std::vector<float> rows;
    std::vector<uint64_t> ids(n);
    std::vector<uint8_t> skip(n);
    for (size_t i = 0; i < n; ++i) {
      auto v = testing::randomUnitVector(rng, dim);
      // Duplicate some rows so ties exercise the id tie-break.
      if (i > 0 && rng() % 7 == 0) v.assign(rows.end() - long(dim), rows.end());
      rows.insert(rows.end(), v.begin(), v.end());
      ids[i] = rng() % 100000;
      skip[i] = rng() % 5 == 0;
    }
    auto q = testing::randomUnitVector(rng, dim);
    const Metric metric = trial % 2 ? Metric::L2 : Metric::Cosine;
    ScanInput in{rows, ids, skip, dim, metric};
    for (size_t k : {size_t{1}, size_t{10}, n}) {
      auto a = exactTopKSerial(in, q, k);
      auto b = exactTopKParallel(in, q, k);
      REQUIRE(a.size() == b.size());
      for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].distance == b[i].distance);
        CHECK_FALSE(skip[a[i].index]);
      }
    }
  }
}

TEST_CASE("parallel pairwise distances equal the serial reference") {
  omp_set_num_threads(4);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-5, 5);
  const size_t n = 77, dim = 6;
  std::vector<double> pts(n * dim);
  for (auto& x : pts) x = u(rng);
  auto a = pairwiseEuclideanSerial(pts, n, dim);
  auto b = pairwiseEuclideanParallel(pts, n, dim);
  CHECK(a == b);
  CHECK(a[0] == 0.0);
  CHECK(a[1 * n + 2] == a[2 * n + 1]);
}

TEST_CASE("normalize rejects the zero vector") {
  std::vector<float> z(4, 0.0f);
  CHECK_FALSE(normalize(z));
  std::vector<float> v{3, 4};
  CHECK(normalize(v));
  CHECK(v[0] == doctest::Approx(0.6));
}
