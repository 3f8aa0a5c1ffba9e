#pragma once

// Dense spectral reference for small spaces. Not used by the solvers.

#include "caplab/space.hpp"

#include <Eigen/Eigenvalues>

namespace caplab {

inline constexpr Index kDenseOracleLimit = 512;

/// Eigendecomposition of the symmetrized generator M^{-1/2} (W - D) M^{-1/2}.
class DenseOracle {
public:
  explicit DenseOracle(const Space& space) : sqrt_mu_(space.mu().cwiseSqrt()) {
    require(space.size() <= kDenseOracleLimit, "dense oracle limited to 512 nodes");
    Eigen::MatrixXd a = Eigen::MatrixXd(space.weights());
    a.diagonal() -= space.degree();
    const Eigen::VectorXd s = sqrt_mu_.cwiseInverse();
    a = s.asDiagonal() * a * s.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    require(eig.info() == Eigen::Success, "eigendecomposition failed");
    values_ = eig.eigenvalues();
    vectors_ = eig.eigenvectors();
  }

  /// Eigenvalues of L, ascending (all <= 0).
  const Eigen::VectorXd& eigenvalues() const { return values_; }

  /// Applies phi(L) for a spectral multiplier phi.
  template <class Phi>
  NodeFunction apply(const NodeFunction& f, Phi phi) const {
    Eigen::VectorXd c = vectors_.transpose() * sqrt_mu_.cwiseProduct(f);
    for (Index k = 0; k < c.size(); ++k) c[k] *= phi(values_[k]);
    return (vectors_ * c).cwiseQuotient(sqrt_mu_);
  }

  NodeFunction heat(const NodeFunction& f, double t) const {
    return apply(f, [t](double ev) { return std::exp(t * ev); });
  }

  NodeFunction resolvent(const NodeFunction& f, double lambda) const {
    return apply(f, [lambda](double ev) { return 1.0 / (lambda - ev); });
  }

  NodeFunction truncated_resolvent(const NodeFunction& f, double lambda, double T) const {
    return apply(f, [lambda, T](double ev) {
      const double a = lambda - ev;
      return -std::expm1(-a * T) / a;
    });
  }

private:
  Eigen::VectorXd sqrt_mu_;
  Eigen::VectorXd values_;
  Eigen::MatrixXd vectors_;
};

}  // namespace caplab
