#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Eigenvalues>

#include "mimo_lab/error.hpp"

namespace mimo_lab {

/// Gauss-Hermite rule for weight exp(-x^2): sum_k w_k f(x_k) ~ int f(x) exp(-x^2) dx.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;

  /// E[f(Z)] for Z ~ N(0, 1).
  template <class F>
  double expect_standard_normal(F&& f) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) acc += weights[k] * f(std::numbers::sqrt2 * nodes[k]);
    return acc / std::sqrt(std::numbers::pi);
  }
};

/// Golub-Welsch: nodes are eigenvalues of the symmetric Jacobi matrix.
inline GaussHermite gauss_hermite(int n) {
  if (n < 1) throw DomainError("gauss_hermite: need at least one node");
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd off(n > 1 ? n - 1 : 0);
  for (int k = 1; k < n; ++k) off(k - 1) = std::sqrt(0.5 * k);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, off, Eigen::ComputeEigenvectors);
  if (es.info() != Eigen::Success) throw NumericalError("gauss_hermite: eigen solver failed");
  GaussHermite rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  const double mu0 = std::sqrt(std::numbers::pi);
  for (int k = 0; k < n; ++k) {
    rule.nodes[static_cast<std::size_t>(k)] = es.eigenvalues()(k);
    const double v0 = es.eigenvectors()(0, k);
    rule.weights[static_cast<std::size_t>(k)] = mu0 * v0 * v0;
  }
  return rule;
}

}  // namespace mimo_lab
