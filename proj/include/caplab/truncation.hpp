#pragma once

// C^2 truncations F and the estimates built on F o G_lambda f: truncation
// ratios, the Gamma(u)/u moment, the Hedberg splitting, the discrete chain
// rule defect and approximations of the identity.

#include "caplab/semigroup.hpp"

#include <array>

namespace caplab {

/// 0 on (-inf, t0], quintic smoothstep bridge on [t0, 1], 1 on [1, inf).
class TruncationFn {
public:
  explicit TruncationFn(double t0) : t0_(t0) {
    require(t0 > 0 && t0 < 1, "truncation threshold t0 must lie in (0, 1)");
    measure_bound();
  }

  double t0() const { return t0_; }
  /// max over i in {0,1,2} of sup_{t>0} t^{i-1} |F^(i)(t)|, on a fine grid
  double bound() const { return bound_; }
  const std::array<double, 3>& bounds() const { return bounds_; }

  double operator()(double t) const {
    if (t <= t0_) return 0.0;
    if (t >= 1) return 1.0;
    const double x = (t - t0_) / (1 - t0_);
    return x * x * x * (10 + x * (-15 + 6 * x));
  }
  double d1(double t) const {
    if (t <= t0_ || t >= 1) return 0.0;
    const double x = (t - t0_) / (1 - t0_);
    return 30 * x * x * (1 - x) * (1 - x) / (1 - t0_);
  }
  double d2(double t) const {
    if (t <= t0_ || t >= 1) return 0.0;
    const double x = (t - t0_) / (1 - t0_);
    return 60 * x * (1 - x) * (1 - 2 * x) / ((1 - t0_) * (1 - t0_));
  }

  NodeFunction apply(const NodeFunction& u) const { return u.unaryExpr([this](double t) { return (*this)(t); }); }
  NodeFunction apply_d1(const NodeFunction& u) const { return u.unaryExpr([this](double t) { return d1(t); }); }
  NodeFunction apply_d2(const NodeFunction& u) const { return u.unaryExpr([this](double t) { return d2(t); }); }

private:
  void measure_bound() {
    bounds_ = {0, 0, 0};
    const int points = 200000;
    for (int k = 1; k <= points; ++k) {
      const double t = t0_ + (2.0 - t0_) * k / points;
      bounds_[0] = std::max(bounds_[0], (*this)(t) / t);
      bounds_[1] = std::max(bounds_[1], std::abs(d1(t)));
      bounds_[2] = std::max(bounds_[2], t * std::abs(d2(t)));
    }
    bound_ = *std::max_element(bounds_.begin(), bounds_.end());
  }

  double t0_;
  double bound_ = 0.0;
  std::array<double, 3> bounds_{};
};

inline TruncationFn make_truncation(double t0) { return TruncationFn(t0); }

inline void require_nonnegative(const NodeFunction& f) {
  require(f.size() == 0 || f.minCoeff() >= 0, "f must be nonnegative");
}

struct TruncationResult {
  NodeFunction value;  // F o G_lambda f
  /// ||(lambda - L)(F o G f)||_p / ||f||_p; NaN when f = 0
  double ratio = std::numeric_limits<double>::quiet_NaN();
  /// ||L(F o G f)||_inf / ||f||_inf, reported for p = inf
  double sup_ratio = std::numeric_limits<double>::quiet_NaN();
  bool skipped = false;
};

inline TruncationResult truncate_potential(const Space& space, const NodeFunction& f, double lambda,
                                           const TruncationFn& F, double p) {
  require(lambda > 0, "lambda must be positive");
  require(p > 1, "exponent p must exceed 1");
  require_nonnegative(f);
  TruncationResult r;
  if (f.isZero(0.0)) {
    r.value = NodeFunction::Zero(space.size());
    r.skipped = true;
    return r;
  }
  r.value = F.apply(resolvent_apply(space, f, lambda));
  r.ratio = domain_norm(space, r.value, lambda, p) / lp_norm(f, space.mu(), p);
  if (std::isinf(p)) r.sup_ratio = apply_generator(space, r.value).cwiseAbs().maxCoeff() / f.cwiseAbs().maxCoeff();
  return r;
}

struct GammaQuotient {
  double value = 0.0;  // ||1_{u > 1e-14} Gamma(u)/u||_p
  double ratio = 0.0;  // value / ||f||_p
};

inline GammaQuotient gamma_quotient_norm(const Space& space, const NodeFunction& f, double lambda, double p) {
  require(lambda > 0, "lambda must be positive");
  require_nonnegative(f);
  require(!f.isZero(0.0), "gamma quotient needs a nonzero f");
  const NodeFunction u = resolvent_apply(space, f, lambda);
  const NodeFunction g = carre_du_champ(space, u);
  NodeFunction quot = NodeFunction::Zero(space.size());
  for (Index x = 0; x < space.size(); ++x)
    if (u[x] > kSkipThreshold) quot[x] = g[x] / u[x];
  GammaQuotient out;
  out.value = lp_norm(quot, space.mu(), p);
  out.ratio = out.value / lp_norm(f, space.mu(), p);
  return out;
}

struct HedbergReport {
  /// max over (x, s) of left / right
  double ratio = 0.0;
  std::vector<double> per_s;
  Index skipped = 0;
};

/// Left side int_0^inf e^{-lambda t} P_s(sqrt Gamma(P_t f)) dt by graded
/// quadrature up to T* with e^{-lambda T*} = 1e-12; right side
/// (P_s G_lambda f)^{1/2} (sup_t P_t f)^{1/2} with the sup over t = 0 and the
/// quadrature nodes.
inline HedbergReport hedberg_split_ratio(const Space& space, const NodeFunction& f, double lambda,
                                         const std::vector<double>& s_list) {
  require(lambda > 0, "lambda must be positive");
  require_nonnegative(f);
  require(!f.isZero(0.0), "Hedberg split needs a nonzero f");
  require(!s_list.empty(), "s list is empty");
  for (double s : s_list) require(s > 0 && std::isfinite(s), "s values must be positive");
  const double t_star = std::log(1e12) / lambda;
  const HeatPropagator heat(space);
  const auto rule = graded_rule(t_star, quadrature_levels(heat.rate(), t_star));
  NodeFunction acc = NodeFunction::Zero(space.size());
  NodeFunction sup = f;
  NodeFunction cur = f;
  double now = 0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    cur = heat.apply(cur, rule.nodes[i] - now);
    now = rule.nodes[i];
    sup = sup.cwiseMax(cur);
    acc += rule.weights[i] * std::exp(-lambda * now) * carre_du_champ(space, cur).cwiseSqrt();
  }
  const NodeFunction g = resolvent_apply(space, f, lambda);
  HedbergReport out;
  for (double s : s_list) {
    const NodeFunction left = heat.apply(acc, s);
    const NodeFunction right = (heat.apply(g, s).cwiseMax(0.0).array() * sup.array()).sqrt();
    double worst = 0;
    for (Index x = 0; x < space.size(); ++x) {
      if (right[x] <= kSkipThreshold) {
        ++out.skipped;
        continue;
      }
      worst = std::max(worst, left[x] / right[x]);
    }
    out.per_s.push_back(worst);
    out.ratio = std::max(out.ratio, worst);
  }
  return out;
}

/// Pointwise L(F(u)) - F'(u) L u - F''(u) Gamma(u).
inline NodeFunction chain_rule_defect(const Space& space, const NodeFunction& u, const TruncationFn& F) {
  return apply_generator(space, F.apply(u)) - F.apply_d1(u).cwiseProduct(apply_generator(space, u)) -
         F.apply_d2(u).cwiseProduct(carre_du_champ(space, u));
}

/// ||L(F(u)) - F'(u) L u - F''(u) Gamma(u)||_inf with u = G_lambda f.
inline double chain_rule_residual(const Space& space, const NodeFunction& f, double lambda, const TruncationFn& F) {
  require(lambda > 0, "lambda must be positive");
  require_nonnegative(f);
  const NodeFunction u = resolvent_apply(space, f, lambda);
  return chain_rule_defect(space, u, F).cwiseAbs().maxCoeff();
}

struct ApproxIdentity {
  std::vector<double> radii;
  std::vector<NodeFunction> h;
  std::vector<double> grad_sup;       // ||sqrt Gamma(h_n)||_inf
  std::vector<double> generator_sup;  // ||L h_n||_inf
  std::vector<bool> plateau;          // h_n(x0) = 1
  bool nested_monotone = true;
};

/// h_n = F o G_lambda 1_{B(x0, r_n)} for increasing radii.
inline ApproxIdentity approx_identity_sequence(const Space& space, Index x0, std::vector<double> radii,
                                               const TruncationFn& F, double lambda) {
  require(lambda > 0, "lambda must be positive");
  require(x0 >= 0 && x0 < space.size(), "centre outside the space");
  require(!radii.empty(), "radii list is empty");
  std::sort(radii.begin(), radii.end());
  const Eigen::VectorXd d = space.distances_from(x0);
  const ResolventSolver solver(space, lambda);
  ApproxIdentity out;
  out.radii = radii;
  for (double r : radii) {
    const NodeFunction ball = (d.array() <= r * (1 + 1e-12)).cast<double>();
    NodeFunction h = F.apply(solver.solve(ball));
    out.grad_sup.push_back(carre_du_champ(space, h).cwiseSqrt().maxCoeff());
    out.generator_sup.push_back(apply_generator(space, h).cwiseAbs().maxCoeff());
    out.plateau.push_back(h[x0] >= 1.0);
    if (!out.h.empty() && ((h - out.h.back()).array() < -1e-12).any()) out.nested_monotone = false;
    out.h.push_back(std::move(h));
  }
  return out;
}

}  // namespace caplab
