#pragma once

#include <cstddef>
#include <vector>

namespace mcqd {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;  // sum to 1
};

// Gauss-Hermite rule for the standard normal density, so that
// sum_q weights[q] * f(nodes[q]) approximates E[f(Z)], Z ~ N(0, 1).
// Nodes are ascending. Built by Golub-Welsch on the probabilists' Hermite
// Jacobi matrix.
QuadratureRule gauss_hermite_normal(std::size_t n);

}  // namespace mcqd
