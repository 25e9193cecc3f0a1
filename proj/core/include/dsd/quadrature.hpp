#pragma once

#include <vector>

namespace dsd {

/// Gauss-Legendre rule mapped onto (0, 1); weights sum to 1.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

QuadratureRule gauss_legendre_unit(int points);

/// Sum of `values` by pairwise (tree) reduction in index order.
double pairwise_sum(const std::vector<double>& values);

}  // namespace dsd
