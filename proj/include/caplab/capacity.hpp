#pragma once

// (2,p)-capacities as convex programs: ccap (pinned operator norm), cap
// (resolvent potentials dominating 1), local capacities with truncated
// Neumann kernels, the distributional variant, and decay studies.

#include "caplab/dense_oracle.hpp"
#include "caplab/hausdorff.hpp"
#include "caplab/kernel_cache.hpp"
#include "caplab/potentials.hpp"

#include <Eigen/SparseCholesky>

#include <optional>
#include <queue>

namespace caplab {

enum class CapacityKind { CCap, Cap, CapLocal, CCapDistributional };

inline std::string to_string(CapacityKind k) {
  switch (k) {
    case CapacityKind::CCap: return "ccap";
    case CapacityKind::Cap: return "cap";
    case CapacityKind::CapLocal: return "cap_local";
    case CapacityKind::CCapDistributional: return "ccap_distributional";
  }
  return "unknown";
}

/// B (interior nodes), Omega (inner region) and the horizon T.
struct DomainSpec {
  std::vector<Index> interior;
  std::vector<Index> inner;
  double T = kInf;
};

/// T = dist(Omega, complement of B)^2. When B is the whole space, a box
/// measures the distance to the cube faces and other spaces give T = inf.
inline DomainSpec make_domain(const Space& space, std::vector<Index> interior, std::vector<Index> inner) {
  std::sort(interior.begin(), interior.end());
  interior.erase(std::unique(interior.begin(), interior.end()), interior.end());
  std::sort(inner.begin(), inner.end());
  inner.erase(std::unique(inner.begin(), inner.end()), inner.end());
  require(!inner.empty(), "inner region is empty");
  require(std::includes(interior.begin(), interior.end(), inner.begin(), inner.end()), "inner region must lie in B");
  for (Index x : interior) require(x >= 0 && x < space.size(), "domain node outside the space");
  std::vector<char> in_b(static_cast<std::size_t>(space.size()), 0);
  for (Index x : interior) in_b[static_cast<std::size_t>(x)] = 1;
  double dist = kInf;
  if (static_cast<Index>(interior.size()) < space.size()) {
    for (Index w : inner) {
      const Eigen::VectorXd d = space.distances_from(w);
      for (Index z = 0; z < space.size(); ++z)
        if (!in_b[static_cast<std::size_t>(z)]) dist = std::min(dist, d[z]);
    }
  } else if (space.kind() == SpaceKind::Box) {
    for (Index w : inner)
      for (double c : space.coords(w)) dist = std::min({dist, c, 1.0 - c});
  }
  return {std::move(interior), std::move(inner), dist * dist};
}

struct CapacityReport {
  CapacityKind kind = CapacityKind::Cap;
  double p = 2.0;
  double lambda = kDefaultLambda;
  std::optional<DomainSpec> domain;
  /// pinned hop radius for ccap, -1 otherwise
  Index nbhd_radius = -1;
  std::vector<Index> set;
  double primal = 0.0;
  double dual = 0.0;
  /// (primal - dual) / primal
  double gap = 0.0;
  NodeFunction f_star;
  /// cap kinds: normalized so that ||G nu||_q = 1, hence nu(K)^p = dual
  DiscreteMeasure nu_star;
  Index iterations = 0;
  bool converged = true;
  double tolerance = 0.0;
};

struct CapacityOptions {
  double gap_tolerance = 1e-6;
  Index max_iterations = 100'000;
  /// iterations between certificate evaluations
  Index check_every = 25;
  KernelCache* cache = nullptr;
  SolverOptions solver{};
};

inline double relative_gap(double primal, double dual) {
  if (primal == 0.0) return 0.0;
  return (primal - dual) / primal;
}

/// Nodes within `radius` graph hops of K.
inline std::vector<Index> hop_neighborhood(const Space& space, std::span<const Index> set, Index radius) {
  require(radius >= 0, "neighbourhood radius must be nonnegative");
  std::vector<Index> depth(static_cast<std::size_t>(space.size()), -1);
  std::queue<Index> queue;
  for (Index x : set) {
    require(x >= 0 && x < space.size(), "set node outside the space");
    if (depth[static_cast<std::size_t>(x)] < 0) {
      depth[static_cast<std::size_t>(x)] = 0;
      queue.push(x);
    }
  }
  while (!queue.empty()) {
    const Index x = queue.front();
    queue.pop();
    if (depth[static_cast<std::size_t>(x)] == radius) continue;
    for (SparseMatrix::InnerIterator it(space.weights(), x); it; ++it) {
      if (depth[static_cast<std::size_t>(it.col())] < 0) {
        depth[static_cast<std::size_t>(it.col())] = depth[static_cast<std::size_t>(x)] + 1;
        queue.push(it.col());
      }
    }
  }
  std::vector<Index> out;
  for (Index x = 0; x < space.size(); ++x)
    if (depth[static_cast<std::size_t>(x)] >= 0) out.push_back(x);
  return out;
}

inline std::vector<Index> normalized_set(const Space& space, std::vector<Index> set) {
  for (Index x : set) require(x >= 0 && x < space.size(), "set node outside the space");
  std::sort(set.begin(), set.end());
  set.erase(std::unique(set.begin(), set.end()), set.end());
  return set;
}

// cap ----------------------------------------------------------------------

/// Kernel columns c_k = g(x_k, .) restricted to the admissible nodes A, with
/// an independent evaluation of (G f)|_K for certificates.
class CapacityProblem {
public:
  /// G = G_lambda on the whole space, A = all nodes.
  static CapacityProblem global(const Space& space, std::vector<Index> set, double lambda,
                                const CapacityOptions& options = {}) {
    require(lambda > 0, "lambda must be positive");
    CapacityProblem pr;
    pr.kind_ = CapacityKind::Cap;
    pr.lambda_ = lambda;
    pr.full_size_ = space.size();
    pr.set_ = normalized_set(space, std::move(set));
    pr.admissible_.resize(static_cast<std::size_t>(space.size()));
    std::iota(pr.admissible_.begin(), pr.admissible_.end(), Index{0});
    pr.mu_ = space.mu();
    const auto k = static_cast<Index>(pr.set_.size());
    pr.columns_.resize(space.size(), k);
    parallel_for(k, [&](Index i) {
      pr.columns_.col(i) = *resolvent_column(space, pr.set_[static_cast<std::size_t>(i)], lambda, options.cache,
                                             options.solver);
    });
    const SolverOptions solver = options.solver;
    const Space* sp = &space;
    const std::vector<Index> set_copy = pr.set_;
    pr.evaluate_ = [sp, lambda, solver, set_copy](const NodeFunction& f) {
      const NodeFunction u = resolvent_apply(*sp, f, lambda, solver);
      NodeFunction out(static_cast<Index>(set_copy.size()));
      for (std::size_t i = 0; i < set_copy.size(); ++i) out[static_cast<Index>(i)] = u[set_copy[i]];
      return out;
    };
    pr.finish();
    return pr;
  }

  /// G = G^{B,T} on the Neumann restriction to B, A = Omega.
  static CapacityProblem local(const Space& space, const DomainSpec& domain, std::vector<Index> set, double lambda,
                               const CapacityOptions& options = {}) {
    require(lambda > 0, "lambda must be positive");
    require(domain.T > 0, "horizon T must be positive");
    if (lambda <= 1 / domain.T)
      throw InvalidArgument("local capacity needs lambda > 1/T (lambda = " + std::to_string(lambda) +
                            ", 1/T = " + std::to_string(1 / domain.T) + ")");
    CapacityProblem pr;
    pr.kind_ = CapacityKind::CapLocal;
    pr.lambda_ = lambda;
    pr.full_size_ = space.size();
    pr.set_ = normalized_set(space, std::move(set));
    require(std::includes(domain.inner.begin(), domain.inner.end(), pr.set_.begin(), pr.set_.end()),
            "K must lie in the inner region");
    auto [sub, to_old] = restrict_space(space, domain.interior);
    auto shared = std::make_shared<Space>(std::move(sub));
    std::map<Index, Index> to_new;
    for (std::size_t i = 0; i < to_old.size(); ++i) to_new[to_old[i]] = static_cast<Index>(i);
    std::vector<Index> inner_sub, set_sub;
    for (Index x : domain.inner) inner_sub.push_back(to_new.at(x));
    for (Index x : pr.set_) set_sub.push_back(to_new.at(x));
    pr.admissible_ = domain.inner;
    pr.mu_.resize(static_cast<Index>(inner_sub.size()));
    for (std::size_t i = 0; i < inner_sub.size(); ++i) pr.mu_[static_cast<Index>(i)] = shared->mu()[inner_sub[i]];
    const auto k = static_cast<Index>(set_sub.size());
    const double T = domain.T;
    pr.columns_.resize(static_cast<Index>(inner_sub.size()), k);
    parallel_for(k, [&](Index i) {
      const Index x = set_sub[static_cast<std::size_t>(i)];
      auto compute = [&] { return truncated_resolvent(*shared, delta_density(*shared, x), lambda, T).value; };
      KernelCache::Column col = options.cache ? options.cache->get_or_compute(
                                                    {shared->hash(), KernelKind::TruncatedResolvent, lambda, T, x}, compute)
                                              : std::make_shared<const NodeFunction>(compute());
      for (std::size_t a = 0; a < inner_sub.size(); ++a) pr.columns_(static_cast<Index>(a), i) = (*col)[inner_sub[a]];
    });
    pr.evaluate_ = [shared, lambda, T, inner_sub, set_sub](const NodeFunction& f) {
      NodeFunction g = NodeFunction::Zero(shared->size());
      for (std::size_t a = 0; a < inner_sub.size(); ++a) g[inner_sub[a]] = f[static_cast<Index>(a)];
      const NodeFunction u = truncated_resolvent(*shared, g, lambda, T).value;
      NodeFunction out(static_cast<Index>(set_sub.size()));
      for (std::size_t i = 0; i < set_sub.size(); ++i) out[static_cast<Index>(i)] = u[set_sub[i]];
      return out;
    };
    pr.finish();
    for (Index i = 0; i < k; ++i)
      if (!(pr.columns_.col(i).maxCoeff() > 0))
        throw SolverError("local capacity infeasible: G^{B,T} vanishes on the inner region");
    return pr;
  }

  CapacityKind kind() const { return kind_; }
  double lambda() const { return lambda_; }
  const std::vector<Index>& set() const { return set_; }
  const std::vector<Index>& admissible() const { return admissible_; }
  const Eigen::MatrixXd& columns() const { return columns_; }
  const Eigen::VectorXd& mu() const { return mu_; }
  /// Q = C^T diag(mu) C, the Gram matrix of the kernel columns.
  const Eigen::MatrixXd& gram() const { return gram_; }
  Index full_size() const { return full_size_; }

  /// (G f)|_K for f on A, by a fresh solve.
  NodeFunction evaluate(const NodeFunction& f_on_a) const { return evaluate_(f_on_a); }

  /// Primal/dual certificates for a nonnegative nu on K.
  struct Certificate {
    double primal = kInf;
    double dual = 0.0;
    double gap = kInf;
    NodeFunction f;  // feasible, on A
    Eigen::VectorXd nu;  // normalized, ||C nu||_q = 1
  };

  Certificate certify(const Eigen::VectorXd& nu, double p, bool independent) const {
    const double q = conjugate_exponent(p);
    Certificate c;
    const Eigen::VectorXd g = (columns_ * nu).cwiseMax(0.0);
    const double gq = std::pow((g.array().pow(q) * mu_.array()).sum(), 1 / q);
    if (!(gq > 0) || !(nu.sum() > 0)) return c;
    c.nu = nu / gq;
    c.dual = std::pow(c.nu.sum(), p);
    NodeFunction f = q == 2.0 ? NodeFunction(g) : NodeFunction(g.array().pow(q - 1));
    const NodeFunction gf = independent ? evaluate(f) : NodeFunction(columns_.transpose() * mu_.cwiseProduct(f));
    const double m = gf.minCoeff();
    if (!(m > 0)) return c;
    f /= m;
    c.primal = lp_power(f, mu_, p);
    c.gap = relative_gap(c.primal, c.dual);
    c.f = std::move(f);
    return c;
  }

  /// The optimal nu for p = 2 on a guessed support, when the KKT conditions hold there.
  std::optional<Eigen::VectorXd> polish(const Eigen::VectorXd& nu) const {
    const double top = nu.maxCoeff();
    if (!(top > 0)) return std::nullopt;
    std::vector<Index> support;
    for (Index i = 0; i < nu.size(); ++i)
      if (nu[i] > 1e-9 * top) support.push_back(i);
    const auto s = static_cast<Index>(support.size());
    Eigen::MatrixXd qs(s, s);
    for (Index a = 0; a < s; ++a)
      for (Index b = 0; b < s; ++b) qs(a, b) = gram_(support[static_cast<std::size_t>(a)], support[static_cast<std::size_t>(b)]);
    const Eigen::VectorXd xs = qs.ldlt().solve(Eigen::VectorXd::Ones(s));
    if (!(xs.minCoeff() > 0)) return std::nullopt;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(nu.size());
    for (Index a = 0; a < s; ++a) out[support[static_cast<std::size_t>(a)]] = xs[a];
    const Eigen::VectorXd qx = gram_ * out;
    if (qx.minCoeff() < 1 - 1e-10) return std::nullopt;
    return out;
  }

  /// f on A embedded into the full node set.
  NodeFunction embed(const NodeFunction& f_on_a) const {
    NodeFunction out = NodeFunction::Zero(full_size_);
    for (std::size_t a = 0; a < admissible_.size(); ++a) out[admissible_[a]] = f_on_a[static_cast<Index>(a)];
    return out;
  }

  DiscreteMeasure measure(const Eigen::VectorXd& nu) const {
    return {set_, std::vector<double>(nu.data(), nu.data() + nu.size())};
  }

private:
  void finish() {
    columns_ = columns_.cwiseMax(0.0);
    gram_ = columns_.transpose() * mu_.asDiagonal() * columns_;
  }

  CapacityKind kind_ = CapacityKind::Cap;
  double lambda_ = kDefaultLambda;
  Index full_size_ = 0;
  std::vector<Index> set_;
  std::vector<Index> admissible_;
  Eigen::VectorXd mu_;
  Eigen::MatrixXd columns_;
  Eigen::MatrixXd gram_;
  std::function<NodeFunction(const NodeFunction&)> evaluate_;
};

namespace detail {

inline CapacityReport empty_report(CapacityKind kind, double p, double lambda, Index size) {
  CapacityReport r;
  r.kind = kind;
  r.p = p;
  r.lambda = lambda;
  r.f_star = NodeFunction::Zero(size);
  return r;
}

inline CapacityReport finish_report(const CapacityProblem& pr, double p, const Eigen::VectorXd& nu, Index iterations,
                                    const CapacityOptions& options) {
  const auto cert = pr.certify(nu, p, true);
  if (!std::isfinite(cert.primal)) throw SolverError("capacity solver produced no feasible certificate");
  CapacityReport r;
  r.kind = pr.kind();
  r.p = p;
  r.lambda = pr.lambda();
  r.set = pr.set();
  r.primal = cert.primal;
  r.dual = cert.dual;
  r.gap = cert.gap;
  r.f_star = pr.embed(cert.f);
  r.nu_star = pr.measure(cert.nu);
  r.iterations = iterations;
  r.tolerance = options.gap_tolerance;
  r.converged = cert.gap <= options.gap_tolerance;
  return r;
}

/// Phi(nu) = (1/q) sum mu (C nu)^q - 1^T nu and its gradient.
inline double phi(const CapacityProblem& pr, double q, const Eigen::VectorXd& nu, Eigen::VectorXd* grad) {
  const Eigen::VectorXd g = (pr.columns() * nu).cwiseMax(0.0);
  const Eigen::ArrayXd gq1 = g.array().pow(q - 1);
  if (grad) *grad = pr.columns().transpose() * (pr.mu().array() * gq1).matrix() - Eigen::VectorXd::Ones(nu.size());
  return (pr.mu().array() * gq1 * g.array()).sum() / q - nu.sum();
}

/// Euclidean projection onto the probability simplex.
inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  std::vector<double> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end(), std::greater<>());
  double cum = 0, theta = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    cum += s[i];
    const double t = (cum - 1) / static_cast<double>(i + 1);
    if (s[i] - t > 0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0);
}

}  // namespace detail

/// min ||f||_p^p over f >= 0 with G f >= 1 on K, through the minimizer of
/// Phi(nu) over nu >= 0 on K: f = (C nu)^{q-1} satisfies the KKT system of the
/// primal. p = 2 uses ADMM on the quadratic program, other p accelerated
/// projected gradient with backtracking.
inline CapacityReport cap_primal(const CapacityProblem& pr, double p, const CapacityOptions& options = {}) {
  const double q = conjugate_exponent(p);
  const auto k = static_cast<Index>(pr.set().size());
  if (k == 0) return detail::empty_report(pr.kind(), p, pr.lambda(), pr.full_size());
  const Eigen::MatrixXd& Q = pr.gram();
  Index it = 0;
  Eigen::VectorXd best;
  double best_gap = kInf;
  auto consider = [&](const Eigen::VectorXd& nu) {
    const auto c = pr.certify(nu, p, false);
    if (c.gap < best_gap) {
      best_gap = c.gap;
      best = nu;
    }
    return c.gap;
  };
  if (p == 2.0) {
    const double rho = std::max(Q.diagonal().mean(), 1e-300);
    const Eigen::LDLT<Eigen::MatrixXd> factor(Q + rho * Eigen::MatrixXd::Identity(k, k));
    Eigen::VectorXd x = Eigen::VectorXd::Zero(k), z = Eigen::VectorXd::Constant(k, 1.0 / (k * rho)),
                    u = Eigen::VectorXd::Zero(k);
    while (it < options.max_iterations) {
      x = factor.solve(Eigen::VectorXd::Ones(k) + rho * (z - u));
      z = (x + u).cwiseMax(0.0);
      u += x - z;
      ++it;
      if (it % options.check_every == 0 || it == 1) {
        if (consider(z) <= options.gap_tolerance) break;
        if (auto polished = pr.polish(z)) {
          if (consider(*polished) <= options.gap_tolerance) break;
        }
      }
    }
  } else {
    Eigen::VectorXd x = Eigen::VectorXd::Ones(k);
    // optimal radial scaling t of Phi(t x) = t^q A/q - t B
    {
      const Eigen::VectorXd g = pr.columns() * x;
      const double a = (pr.mu().array() * g.array().pow(q)).sum();
      x *= std::pow(x.sum() / a, 1 / (q - 1));
    }
    Eigen::VectorXd y = x, grad;
    double t = 1.0, L = 1.0;
    {
      Eigen::VectorXd g0;
      detail::phi(pr, q, x, &g0);
      L = std::max(1e-12, g0.norm() / std::max(x.norm(), 1e-300));
    }
    double fx = detail::phi(pr, q, x, nullptr);
    while (it < options.max_iterations) {
      const double fy = detail::phi(pr, q, y, &grad);
      Eigen::VectorXd xn;
      double fxn = 0;
      for (int bt = 0; bt < 60; ++bt) {
        xn = (y - grad / L).cwiseMax(0.0);
        fxn = detail::phi(pr, q, xn, nullptr);
        const Eigen::VectorXd d = xn - y;
        if (fxn <= fy + grad.dot(d) + 0.5 * L * d.squaredNorm() + 1e-15 * std::abs(fy)) break;
        L *= 2;
      }
      ++it;
      if (fxn > fx) {  // adaptive restart
        y = x;
        t = 1.0;
        continue;
      }
      const double tn = 0.5 * (1 + std::sqrt(1 + 4 * t * t));
      y = xn + ((t - 1) / tn) * (xn - x);
      x = xn;
      fx = fxn;
      t = tn;
      L *= 0.9;
      if (it % options.check_every == 0 && consider(x) <= options.gap_tolerance) break;
    }
    consider(x);
  }
  if (best.size() == 0) throw SolverError("capacity solver produced no feasible point");
  return detail::finish_report(pr, p, best, it, options);
}

/// max nu(K) over nu >= 0 on K with ||G nu||_q <= 1: accelerated projected
/// gradient for min ||C nu||_q^q on the simplex, then radial rescaling.
inline CapacityReport cap_dual(const CapacityProblem& pr, double p, const CapacityOptions& options = {}) {
  const double q = conjugate_exponent(p);
  const auto k = static_cast<Index>(pr.set().size());
  if (k == 0) return detail::empty_report(pr.kind(), p, pr.lambda(), pr.full_size());
  auto objective = [&](const Eigen::VectorXd& nu, Eigen::VectorXd* grad) {
    const Eigen::VectorXd g = (pr.columns() * nu).cwiseMax(0.0);
    const Eigen::ArrayXd gq1 = g.array().pow(q - 1);
    if (grad) *grad = q * (pr.columns().transpose() * (pr.mu().array() * gq1).matrix());
    return (pr.mu().array() * gq1 * g.array()).sum();
  };
  Eigen::VectorXd best;
  double best_gap = kInf;
  auto consider = [&](const Eigen::VectorXd& nu) {
    const auto c = pr.certify(nu, p, false);
    if (c.gap < best_gap) {
      best_gap = c.gap;
      best = nu;
    }
    return c.gap;
  };
  Eigen::VectorXd x = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k)), y = x, grad;
  double fx = objective(x, &grad);
  double L = std::max(1e-300, grad.norm() / std::max(x.norm(), 1e-300)), t = 1.0;
  Index it = 0;
  if (consider(x) > options.gap_tolerance) {
    while (it < options.max_iterations) {
      const double fy = objective(y, &grad);
      Eigen::VectorXd xn;
      double fxn = 0;
      for (int bt = 0; bt < 60; ++bt) {
        xn = detail::project_simplex(y - grad / L);
        fxn = objective(xn, nullptr);
        const Eigen::VectorXd d = xn - y;
        if (fxn <= fy + grad.dot(d) + 0.5 * L * d.squaredNorm() + 1e-15 * std::abs(fy)) break;
        L *= 2;
      }
      ++it;
      if (fxn > fx) {
        y = x;
        t = 1.0;
        continue;
      }
      const double tn = 0.5 * (1 + std::sqrt(1 + 4 * t * t));
      y = xn + ((t - 1) / tn) * (xn - x);
      x = xn;
      fx = fxn;
      t = tn;
      L *= 0.9;
      if (it % options.check_every == 0) {
        if (consider(x) <= options.gap_tolerance) break;
        if (p == 2.0) {
          if (auto polished = pr.polish(x)) {
            if (consider(*polished) <= options.gap_tolerance) break;
          }
        }
      }
    }
  }
  return detail::finish_report(pr, p, best, it, options);
}

inline CapacityReport cap_primal(const Space& space, std::vector<Index> set, double p, double lambda,
                                 const CapacityOptions& options = {}) {
  conjugate_exponent(p);
  if (set.empty()) return detail::empty_report(CapacityKind::Cap, p, lambda, space.size());
  return cap_primal(CapacityProblem::global(space, std::move(set), lambda, options), p, options);
}

inline CapacityReport cap_dual(const Space& space, std::vector<Index> set, double p, double lambda,
                               const CapacityOptions& options = {}) {
  conjugate_exponent(p);
  if (set.empty()) return detail::empty_report(CapacityKind::Cap, p, lambda, space.size());
  return cap_dual(CapacityProblem::global(space, std::move(set), lambda, options), p, options);
}

inline CapacityReport cap_local(const Space& space, const DomainSpec& domain, std::vector<Index> set, double p,
                                double lambda, const CapacityOptions& options = {}) {
  conjugate_exponent(p);
  if (set.empty()) {
    auto r = detail::empty_report(CapacityKind::CapLocal, p, lambda, space.size());
    r.domain = domain;
    return r;
  }
  auto r = cap_primal(CapacityProblem::local(space, domain, std::move(set), lambda, options), p, options);
  r.domain = domain;
  return r;
}

// ccap ---------------------------------------------------------------------

namespace detail {

/// S = lambda M + D - W, so that (lambda - L) u = M^{-1} S u.
inline SparseMatrix operator_system(const Space& space, double lambda) {
  return ResolventSolver(space, lambda).system();
}

/// Dual certificate for the pinned problem: nu = (S w)|_P with
/// w = |v|^{p-1} sgn v gives ccap >= (|nu(P)| / ||G nu||_q)^p.
inline double ccap_dual_bound(const Space& space, const SparseMatrix& S, const NodeFunction& v,
                              const std::vector<char>& pinned, double p, double lambda, SolverOptions solver) {
  const double q = conjugate_exponent(p);
  const NodeFunction w = v.array().abs().pow(p - 1) * v.array().sign();
  NodeFunction nu = S * w;
  for (Index x = 0; x < space.size(); ++x)
    if (!pinned[static_cast<std::size_t>(x)]) nu[x] = 0;
  const NodeFunction gnu = ResolventSolver(space, lambda, solver).solve_system(nu);
  const double norm = lp_norm(gnu, space.mu(), q);
  if (!(norm > 0)) return 0.0;
  return std::pow(std::abs(nu.sum()) / norm, p);
}

}  // namespace detail

/// min ||(lambda - L) u||_p^p over u = 1 on the nbhd_radius-hop neighbourhood
/// of K. p = 2: one SPD solve with (S M^{-1} S) on the free nodes; other p:
/// accelerated gradient from the p = 2 solution.
inline CapacityReport ccap(const Space& space, std::vector<Index> set, double p, double lambda,
                           Index nbhd_radius = 1, const CapacityOptions& options = {}) {
  conjugate_exponent(p);
  require(lambda > 0, "lambda must be positive");
  set = normalized_set(space, std::move(set));
  require(!set.empty(), "ccap needs a nonempty set");
  const auto pinned_nodes = hop_neighborhood(space, set, nbhd_radius);
  std::vector<char> pinned(static_cast<std::size_t>(space.size()), 0);
  for (Index x : pinned_nodes) pinned[static_cast<std::size_t>(x)] = 1;
  std::vector<Index> free_nodes, free_index(static_cast<std::size_t>(space.size()), -1);
  for (Index x = 0; x < space.size(); ++x)
    if (!pinned[static_cast<std::size_t>(x)]) {
      free_index[static_cast<std::size_t>(x)] = static_cast<Index>(free_nodes.size());
      free_nodes.push_back(x);
    }
  const SparseMatrix S = detail::operator_system(space, lambda);
  const Eigen::VectorXd inv_mu = space.mu().cwiseInverse();
  const SparseMatrix A = SparseMatrix(S * inv_mu.asDiagonal() * S);
  const auto nf = static_cast<Index>(free_nodes.size());

  CapacityReport r;
  r.kind = CapacityKind::CCap;
  r.p = p;
  r.lambda = lambda;
  r.nbhd_radius = nbhd_radius;
  r.set = set;
  r.tolerance = options.gap_tolerance;
  NodeFunction u = NodeFunction::Ones(space.size());
  if (nf > 0) {
    // A_FF u_F = -A_FP 1
    Eigen::SparseMatrix<double> aff(nf, nf);
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nf);
    for (Index x : free_nodes) {
      const Index i = free_index[static_cast<std::size_t>(x)];
      for (SparseMatrix::InnerIterator it(A, x); it; ++it) {
        const Index j = free_index[static_cast<std::size_t>(it.col())];
        if (j >= 0) trip.emplace_back(i, j, it.value());
        else rhs[i] -= it.value();
      }
    }
    aff.setFromTriplets(trip.begin(), trip.end());
    Eigen::VectorXd uf;
    if (nf <= 4000) {
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(aff);
      if (ldlt.info() != Eigen::Success) throw SolverError("ccap factorization failed");
      uf = ldlt.solve(rhs);
    } else {
      Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg(aff);
      cg.setTolerance(options.solver.tolerance);
      cg.setMaxIterations(std::max<Index>(20000, 10 * nf));
      uf = cg.solve(rhs);
      if (cg.info() != Eigen::Success) throw SolverError("ccap conjugate gradient did not converge");
    }
    for (Index i = 0; i < nf; ++i) u[free_nodes[static_cast<std::size_t>(i)]] = uf[i];
  }
  auto objective = [&](const NodeFunction& uu, NodeFunction* grad) {
    const NodeFunction v = inv_mu.cwiseProduct(S * uu);
    if (grad) {
      const NodeFunction w = p * (v.array().abs().pow(p - 1) * v.array().sign()).matrix();
      NodeFunction g = S * w;
      for (Index x : pinned_nodes) g[x] = 0;
      *grad = std::move(g);
    }
    return lp_power(v, space.mu(), p);
  };
  Index iterations = 1;
  if (p != 2.0 && nf > 0) {
    NodeFunction x = u, y = u, grad;
    double fx = objective(x, nullptr);
    double t = 1.0;
    objective(x, &grad);
    double L = 1.0;
    {
      // Lipschitz guess from a power-iteration-free Gershgorin bound of A
      double row = 0;
      for (Index i = 0; i < A.outerSize(); ++i) {
        double s = 0;
        for (SparseMatrix::InnerIterator it(A, i); it; ++it) s += std::abs(it.value());
        row = std::max(row, s);
      }
      L = p * (p - 1) * row * std::max(1.0, std::pow(inv_mu.cwiseProduct(S * x).cwiseAbs().maxCoeff(), p - 2));
      L = std::max(L, 1e-12);
    }
    double last_check = kInf;
    for (iterations = 0; iterations < options.max_iterations;) {
      const double fy = objective(y, &grad);
      NodeFunction xn;
      double fxn = 0;
      for (int bt = 0; bt < 60; ++bt) {
        xn = y - grad / L;
        fxn = objective(xn, nullptr);
        const NodeFunction d = xn - y;
        if (fxn <= fy + grad.dot(d) + 0.5 * L * d.squaredNorm() + 1e-15 * std::abs(fy)) break;
        L *= 2;
      }
      ++iterations;
      if (fxn > fx) {
        y = x;
        t = 1.0;
        continue;
      }
      const double tn = 0.5 * (1 + std::sqrt(1 + 4 * t * t));
      y = xn + ((t - 1) / tn) * (xn - x);
      x = xn;
      fx = fxn;
      t = tn;
      L *= 0.95;
      if (iterations % (options.check_every * 8) == 0) {
        const NodeFunction v = inv_mu.cwiseProduct(S * x);
        const double dual = detail::ccap_dual_bound(space, S, v, pinned, p, lambda, options.solver);
        last_check = relative_gap(fx, dual);
        if (last_check <= options.gap_tolerance) break;
      }
    }
    u = x;
  }
  const NodeFunction v = inv_mu.cwiseProduct(S * u);
  r.primal = lp_power(v, space.mu(), p);
  r.dual = nf > 0 ? detail::ccap_dual_bound(space, S, v, pinned, p, lambda, options.solver) : r.primal;
  r.gap = relative_gap(r.primal, r.dual);
  r.converged = r.gap <= std::max(options.gap_tolerance, 1e-9);
  r.iterations = iterations;
  r.f_star = u;
  return r;
}

/// sup over signed nu on K of (|nu(K)| / ||G nu||_q)^p, on the dense resolvent.
/// Equals ccap with nbhd_radius = 0.
inline double ccap_distributional(const Space& space, std::vector<Index> set, double p, double lambda) {
  const double q = conjugate_exponent(p);
  require(lambda > 0, "lambda must be positive");
  require(space.size() <= kDenseOracleLimit, "ccap_distributional needs a space of at most 512 nodes");
  set = normalized_set(space, std::move(set));
  if (set.empty()) return 0.0;
  const Eigen::MatrixXd S = Eigen::MatrixXd(detail::operator_system(space, lambda));
  const auto k = static_cast<Index>(set.size());
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(space.size(), k);
  for (Index i = 0; i < k; ++i) rhs(set[static_cast<std::size_t>(i)], i) = 1.0;
  const Eigen::MatrixXd B = S.ldlt().solve(rhs);  // columns g(x_k, .)
  const Eigen::MatrixXd Q = B.transpose() * space.mu().asDiagonal() * B;
  const Eigen::VectorXd a = Q.ldlt().solve(Eigen::VectorXd::Ones(k));
  const double value2 = a.sum();
  if (p == 2.0) return value2;
  // minimize ||B nu||_q^q on the hyperplane nu(K) = 1
  auto objective = [&](const Eigen::VectorXd& nu, Eigen::VectorXd* grad) {
    const Eigen::VectorXd g = B * nu;
    const Eigen::ArrayXd ag = g.array().abs();
    if (grad) {
      *grad = q * (B.transpose() * (space.mu().array() * ag.pow(q - 1) * g.array().sign()).matrix());
      grad->array() -= grad->mean();
    }
    return (space.mu().array() * ag.pow(q)).sum();
  };
  Eigen::VectorXd x = a / value2, y = x, grad;
  double fx = objective(x, nullptr), t = 1.0, L = 1.0;
  objective(x, &grad);
  L = std::max(1e-300, grad.norm() / std::max(x.norm(), 1e-300));
  for (int it = 0; it < 200000; ++it) {
    const double fy = objective(y, &grad);
    if (grad.norm() <= 1e-13 * std::max(1.0, std::abs(fy))) break;
    Eigen::VectorXd xn;
    double fxn = 0;
    for (int bt = 0; bt < 60; ++bt) {
      xn = y - grad / L;
      fxn = objective(xn, nullptr);
      const Eigen::VectorXd d = xn - y;
      if (fxn <= fy + grad.dot(d) + 0.5 * L * d.squaredNorm() + 1e-15 * std::abs(fy)) break;
      L *= 2;
    }
    if (fxn > fx) {
      y = x;
      t = 1.0;
      continue;
    }
    const bool stalled = fx - fxn <= 1e-15 * std::abs(fx);
    const double tn = 0.5 * (1 + std::sqrt(1 + 4 * t * t));
    y = xn + ((t - 1) / tn) * (xn - x);
    x = xn;
    fx = fxn;
    t = tn;
    L *= 0.95;
    if (stalled && it > 100) break;
  }
  return std::pow(fx, -p / q);
}

// Localization --------------------------------------------------------------

/// 1 within distance r_inner of K, 0 beyond r_outer, linear in the distance between.
inline NodeFunction pinned_cutoff(const Space& space, std::span<const Index> set, double r_inner, double r_outer) {
  require(!set.empty(), "cutoff needs a nonempty set");
  require(0 <= r_inner && r_inner < r_outer, "cutoff radii must satisfy 0 <= r_inner < r_outer");
  Eigen::VectorXd dist = Eigen::VectorXd::Constant(space.size(), kInf);
  for (Index x : set) dist = dist.cwiseMin(space.distances_from(x));
  NodeFunction phi(space.size());
  for (Index y = 0; y < space.size(); ++y) phi[y] = std::clamp((r_outer - dist[y]) / (r_outer - r_inner), 0.0, 1.0);
  return phi;
}

struct LocalizationCheck {
  double lhs = 0.0;  // ||(lambda - L)(phi v)||_2
  double rhs = 0.0;  // c_phi (||v||_2 + ||L v||_2)
  double c_phi = 0.0;
};

/// c_phi = 2 (||phi||_inf + ||sqrt Gamma(phi)||_inf + ||L phi||_inf).
inline LocalizationCheck localization_check(const Space& space, const NodeFunction& phi, const NodeFunction& v,
                                            double lambda) {
  LocalizationCheck c;
  c.c_phi = 2 * (phi.cwiseAbs().maxCoeff() + carre_du_champ(space, phi).cwiseSqrt().maxCoeff() +
                 apply_generator(space, phi).cwiseAbs().maxCoeff());
  c.lhs = domain_norm(space, phi.cwiseProduct(v), lambda, 2.0);
  c.rhs = c.c_phi * (lp_norm(v, space.mu(), 2.0) + lp_norm(apply_generator(space, v), space.mu(), 2.0));
  return c;
}

// Decay studies --------------------------------------------------------------

enum class DecayClass { RemovableTrend, Plateau, Indeterminate };

inline std::string to_string(DecayClass c) {
  switch (c) {
    case DecayClass::RemovableTrend: return "removable trend";
    case DecayClass::Plateau: return "plateau";
    case DecayClass::Indeterminate: return "indeterminate";
  }
  return "indeterminate";
}

inline DecayClass classify_slope(double slope) {
  if (slope < -0.5) return DecayClass::RemovableTrend;
  if (std::abs(slope) < 0.25) return DecayClass::Plateau;
  return DecayClass::Indeterminate;
}

struct DecayRow {
  int level = 0;
  Index n = 0;
  Index set_size = 0;
  double primal = std::numeric_limits<double>::quiet_NaN();
  double dual = std::numeric_limits<double>::quiet_NaN();
  double gap = std::numeric_limits<double>::quiet_NaN();
  /// slope of log primal vs log n over the successful levels up to this one
  double slope = std::numeric_limits<double>::quiet_NaN();
  bool ok = true;
  std::string reason;
};

struct DecayStudy {
  std::vector<DecayRow> rows;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double residual = 0.0;
  DecayClass classification = DecayClass::Indeterminate;
};

inline double slope_of(const std::vector<DecayRow>& rows, std::size_t upto) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i <= upto && i < rows.size(); ++i)
    if (rows[i].ok && rows[i].primal > 0) {
      lx.push_back(std::log(static_cast<double>(rows[i].n)));
      ly.push_back(std::log(rows[i].primal));
    }
  if (lx.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  return fit_line(lx, ly).slope;
}

/// cap_primal and cap_dual of the realized set on d-torus grids of the given
/// sizes; the slope of log cap vs log n classifies the trend.
inline DecayStudy decay_study(const SetSpec& spec, std::vector<Index> levels, double p, double lambda,
                              const CapacityOptions& options = {}, const SpaceLimits& limits = {}) {
  require(levels.size() >= 3, "decay study needs at least 3 refinement levels");
  for (std::size_t i = 1; i < levels.size(); ++i) require(levels[i] > levels[i - 1], "levels must increase");
  conjugate_exponent(p);
  validate_set(spec);
  DecayStudy out;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    DecayRow row;
    row.level = static_cast<int>(i);
    row.n = levels[i];
    try {
      const auto space = build_torus_grid(spec.d, levels[i], limits);
      auto set = realize_set(spec, space);
      if (set.empty()) throw InvalidArgument("set realizes to no nodes");
      row.set_size = static_cast<Index>(set.size());
      const auto pr = CapacityProblem::global(space, std::move(set), lambda, options);
      const auto primal = cap_primal(pr, p, options);
      const auto dual = cap_dual(pr, p, options);
      row.primal = primal.primal;
      row.dual = std::max(primal.dual, dual.dual);
      row.gap = relative_gap(row.primal, row.dual);
    } catch (const SolverError& e) {
      row.ok = false;
      row.reason = e.what();
    }
    out.rows.push_back(row);
    out.rows.back().slope = slope_of(out.rows, i);
  }
  std::vector<double> lx, ly;
  for (const auto& row : out.rows)
    if (row.ok && row.primal > 0) {
      lx.push_back(std::log(static_cast<double>(row.n)));
      ly.push_back(std::log(row.primal));
    }
  if (lx.size() >= 2) {
    const auto fit = fit_line(lx, ly);
    out.slope = fit.slope;
    out.residual = fit.residual;
    out.classification = classify_slope(fit.slope);
  }
  return out;
}

}  // namespace caplab
