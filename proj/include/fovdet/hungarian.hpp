#pragma once

#include <vector>

#include "fovdet/tensor.hpp"

namespace fovdet {

// Minimum-cost one-to-one assignment of rows (ground truths) to columns
// (queries) of cost[n_rows, n_cols], n_rows <= n_cols. O(n^2 m) with
// potentials. Ties between equally priced optima resolve toward the lower
// column index (columns are scanned in order with strict improvement).
struct Assignment {
  std::vector<int> col_of_row;  // query index per ground truth
  double total_cost = 0.0;
};

Assignment hungarian_min_cost(const Tensor& cost);

}  // namespace fovdet
