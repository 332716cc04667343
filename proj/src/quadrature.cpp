#include "quadrature.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "common.hpp"

namespace mcqd {

QuadratureRule gauss_hermite_normal(std::size_t n) {
  if (n == 0) throw UsageError("quadrature: node count must be >= 1");
  const auto m = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index k = 1; k < m; ++k) {
    const double off = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = off;
    jacobi(k, k - 1) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  if (solver.info() != Eigen::Success) throw NumericalError("quadrature: eigen decomposition failed");

  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  double total = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    rule.nodes[k] = solver.eigenvalues()(k);
    const double v = solver.eigenvectors()(0, k);
    rule.weights[k] = v * v;
    total += rule.weights[k];
  }
  // Symmetrize: the rule is exactly symmetric about zero.
  for (std::size_t k = 0; k < n / 2; ++k) {
    const std::size_t j = n - 1 - k;
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[k]);
    const double w = 0.5 * (rule.weights[j] + rule.weights[k]);
    rule.nodes[k] = -x;
    rule.nodes[j] = x;
    rule.weights[k] = rule.weights[j] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  for (double& w : rule.weights) w /= total;
  return rule;
}

}  // namespace mcqd
