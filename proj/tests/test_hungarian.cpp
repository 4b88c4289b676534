#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fovdet/hungarian.hpp"
#include "fovdet/rng.hpp"

using namespace fovdet;

namespace {

// Permutation brute force: minimum total cost over all injective
// row -> column maps.
double brute_force_min(const Tensor& cost) {
  const int n = cost.dim(0), m = cost.dim(1);
  std::vector<int> cols(static_cast<std::size_t>(m));
  std::iota(cols.begin(), cols.end(), 0);
  double best = 1e300;
  // iterate over all m!/(m-n)! injective assignments via permutations of the
  // column set, reading the first n entries
  std::sort(cols.begin(), cols.end());
  do {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += cost.at(i, cols[static_cast<std::size_t>(i)]);
    best = std::min(best, acc);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

}  // namespace

TEST_SUITE("hungarian") {

TEST_CASE("single ground truth picks the argmin query") {
  Tensor cost({1, 5}, {3.0, 1.5, 2.0, 0.25, 9.0});
  const auto a = hungarian_min_cost(cost);
  REQUIRE(a.col_of_row.size() == 1);
  CHECK(a.col_of_row[0] == 3);
  CHECK(a.total_cost == doctest::Approx(0.25));
}

TEST_CASE("tie between two queries resolves to the lower index") {
  Tensor cost({1, 4}, {2.0, 1.0, 1.0, 5.0});
  const auto a = hungarian_min_cost(cost);
  CHECK(a.col_of_row[0] == 1);

  // Two rows, symmetric costs: both optima cost 2; the scan order settles it.
  Tensor c2({2, 2}, {1.0, 1.0, 1.0, 1.0});
  const auto a2 = hungarian_min_cost(c2);
  CHECK(a2.total_cost == doctest::Approx(2.0));
  CHECK(a2.col_of_row[0] == 0);
  CHECK(a2.col_of_row[1] == 1);
}

TEST_CASE("matches the brute-force oracle on random instances up to 6 GTs") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 5));
    const int m = n + static_cast<int>(rng.uniform_int(0, 7 - n));
    Tensor cost({n, m});
    for (double& v : cost.data) v = rng.uniform(0.0, 10.0);
    const auto a = hungarian_min_cost(cost);
    const double oracle = brute_force_min(cost);
    CHECK(a.total_cost == doctest::Approx(oracle).epsilon(1e-9));
    // assignment is injective
    std::vector<int> used;
    for (int c : a.col_of_row) {
      CHECK(c >= 0);
      CHECK(c < m);
      CHECK(std::find(used.begin(), used.end(), c) == used.end());
      used.push_back(c);
    }
  }
}

TEST_CASE("rejects more rows than columns") {
  Tensor cost({3, 2});
  CHECK_THROWS_AS(hungarian_min_cost(cost), InternalError);
}

TEST_CASE("empty input yields an empty assignment") {
  Tensor cost({0, 4});
  const auto a = hungarian_min_cost(cost);
  CHECK(a.col_of_row.empty());
  CHECK(a.total_cost == 0.0);
}

}  // TEST_SUITE
