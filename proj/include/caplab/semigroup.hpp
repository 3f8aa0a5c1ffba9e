#pragma once

// Heat semigroup by uniformization, resolvent by conjugate gradients, the
// truncated Laplace transform of the semigroup, and constant fitters.

#include "caplab/space.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <boost/math/quadrature/gauss.hpp>

#include <map>
#include <optional>

namespace caplab {

inline constexpr double kDefaultLambda = 2.0;
inline constexpr double kSkipThreshold = 1e-14;

// Heat semigroup -----------------------------------------------------------

/// Poisson(m) probabilities, truncated once the remaining tail mass drops
/// below `tail` and renormalized to sum to one.
inline std::vector<double> poisson_weights(double m, double tail = 1e-12) {
  if (m <= 0) return {1.0};
  const auto kmax = static_cast<std::size_t>(std::ceil(m + 12.0 * std::sqrt(m) + 40.0));
  std::vector<double> w(kmax + 1);
  const double lm = std::log(m);
  for (std::size_t k = 0; k <= kmax; ++k)
    w[k] = std::exp(-m + static_cast<double>(k) * lm - std::lgamma(static_cast<double>(k) + 1.0));
  double cut = 0;
  while (w.size() > 1 && cut + w.back() < tail) {
    cut += w.back();
    w.pop_back();
  }
  double s = 0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
  return w;
}

/// P_t = e^{tL} by uniformization: P_t = sum_k Poisson(theta t)_k S^k with
/// S = I + L/theta, theta = max deg/mu. S is stochastic and
/// nonnegative, so positivity and P_t 1 = 1 hold by construction.
class HeatPropagator {
public:
  explicit HeatPropagator(const Space& space)
      : space_(&space), theta_(space.max_rate()),
        scale_(theta_ > 0 ? (space.mu() * theta_).cwiseInverse() : Eigen::VectorXd(space.mu())) {}

  double rate() const { return theta_; }

  NodeFunction step(const NodeFunction& f) const {
    NodeFunction wf = space_->weights() * f;
    return f + (wf - space_->degree().cwiseProduct(f)).cwiseProduct(scale_);
  }

  NodeFunction apply(const NodeFunction& f, double t) const {
    require(t >= 0, "time must be nonnegative");
    require(f.size() == space_->size(), "function size does not match space");
    if (t == 0 || theta_ == 0) return f;
    const auto w = poisson_weights(theta_ * t);
    NodeFunction term = f;
    NodeFunction acc = w[0] * f;
    for (std::size_t k = 1; k < w.size(); ++k) {
      term = step(term);
      acc += w[k] * term;
    }
    return acc;
  }

  /// P_t f for each t in an ascending list, stepping from one time to the next.
  std::vector<NodeFunction> apply_times(const NodeFunction& f, std::span<const double> times) const {
    std::vector<NodeFunction> out;
    out.reserve(times.size());
    NodeFunction cur = f;
    double now = 0;
    for (double t : times) {
      require(t >= now, "times must be ascending and nonnegative");
      cur = apply(cur, t - now);
      now = t;
      out.push_back(cur);
    }
    return out;
  }

private:
  const Space* space_;
  double theta_;
  Eigen::VectorXd scale_;
};

inline NodeFunction heat_apply(const Space& space, const NodeFunction& f, double t) {
  return HeatPropagator(space).apply(f, t);
}

enum class KernelKind : std::uint32_t { Heat = 1, Resolvent = 2, TruncatedResolvent = 3 };

inline std::string to_string(KernelKind k) {
  switch (k) {
    case KernelKind::Heat: return "heat";
    case KernelKind::Resolvent: return "resolvent";
    case KernelKind::TruncatedResolvent: return "truncated";
  }
  return "unknown";
}

/// One column p_t(x, .) or g_lambda(x, .) as densities with respect to mu.
struct KernelColumn {
  Index base = 0;
  KernelKind kind = KernelKind::Heat;
  double param = 0.0;   // t or lambda
  double param2 = 0.0;  // T for truncated columns
  NodeFunction values;
};

inline NodeFunction delta_density(const Space& space, Index x) {
  require(x >= 0 && x < space.size(), "node out of range");
  NodeFunction d = NodeFunction::Zero(space.size());
  d[x] = 1.0 / space.mu()[x];
  return d;
}

inline KernelColumn heat_kernel(const Space& space, Index x, double t) {
  require(t > 0, "heat kernel needs t > 0");
  return {x, KernelKind::Heat, t, 0.0, heat_apply(space, delta_density(space, x), t)};
}

// Resolvent ----------------------------------------------------------------

struct SolverOptions {
  double tolerance = 1e-12;
  Index max_iterations = 0;  // 0: max(2000, 4N)
};

/// Solves (lambda - L) u = f through the SPD system
/// (lambda M + D - W) u = M f with Jacobi-preconditioned CG.
class ResolventSolver {
public:
  ResolventSolver(const Space& space, double lambda, SolverOptions options = {})
      : space_(&space), lambda_(lambda), options_(options) {
    require(lambda > 0, "lambda must be positive");
    std::vector<Eigen::Triplet<double, Index>> diag;
    diag.reserve(static_cast<std::size_t>(space.size()));
    for (Index x = 0; x < space.size(); ++x) diag.emplace_back(x, x, lambda * space.mu()[x] + space.degree()[x]);
    SparseMatrix d(space.size(), space.size());
    d.setFromTriplets(diag.begin(), diag.end());
    system_ = d - space.weights();
    system_.makeCompressed();
  }

  double lambda() const { return lambda_; }
  const SparseMatrix& system() const { return system_; }
  const Space& space() const { return *space_; }

  /// Solves system() u = b.
  NodeFunction solve_system(const NodeFunction& b) const {
    if (b.isZero(0.0)) return NodeFunction::Zero(b.size());
    Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
    cg.setTolerance(options_.tolerance);
    cg.setMaxIterations(options_.max_iterations > 0 ? options_.max_iterations
                                                    : std::max<Index>(2000, 4 * system_.rows()));
    cg.compute(system_);
    NodeFunction u = cg.solve(b);
    if (cg.info() != Eigen::Success)
      throw SolverError("conjugate gradient did not converge (error " + std::to_string(cg.error()) + ")");
    return u;
  }

  NodeFunction solve(const NodeFunction& f) const {
    require(f.size() == space_->size(), "function size does not match space");
    return solve_system(space_->mu().cwiseProduct(f));
  }

private:
  const Space* space_;
  double lambda_;
  SolverOptions options_;
  SparseMatrix system_;
};

inline NodeFunction resolvent_apply(const Space& space, const NodeFunction& f, double lambda,
                                    SolverOptions options = {}) {
  return ResolventSolver(space, lambda, options).solve(f);
}

inline KernelColumn resolvent_kernel(const Space& space, Index x, double lambda, SolverOptions options = {}) {
  return {x, KernelKind::Resolvent, lambda, 0.0, resolvent_apply(space, delta_density(space, x), lambda, options)};
}

// Truncated resolvent ------------------------------------------------------

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// 8-point Gauss-Legendre on [a, b] appended to `rule`.
inline void add_gauss_panel(QuadratureRule& rule, double a, double b) {
  using gauss = boost::math::quadrature::gauss<double, 8>;
  const auto& x = gauss::abscissa();
  const auto& w = gauss::weights();
  const double c = 0.5 * (a + b), r = 0.5 * (b - a);
  for (std::size_t i = 0; i < x.size(); ++i) {
    rule.nodes.push_back(c - r * x[i]);
    rule.weights.push_back(r * w[i]);
    rule.nodes.push_back(c + r * x[i]);
    rule.weights.push_back(r * w[i]);
  }
}

/// Panels [T/2^{k+1}, T/2^k] for k < levels plus [0, T/2^levels]; nodes ascending.
inline QuadratureRule graded_rule(double T, int levels) {
  require(T > 0 && std::isfinite(T), "quadrature horizon must be finite and positive");
  QuadratureRule rule;
  add_gauss_panel(rule, 0.0, std::ldexp(T, -levels));
  for (int k = levels - 1; k >= 0; --k) add_gauss_panel(rule, std::ldexp(T, -(k + 1)), std::ldexp(T, -k));
  std::vector<std::size_t> order(rule.nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return rule.nodes[i] < rule.nodes[j]; });
  QuadratureRule sorted;
  for (auto i : order) {
    sorted.nodes.push_back(rule.nodes[i]);
    sorted.weights.push_back(rule.weights[i]);
  }
  return sorted;
}

/// At least 12 levels, more when theta T is large so the innermost panel
/// satisfies theta * T / 2^levels <= 1.
inline int quadrature_levels(double rate, double T) {
  int levels = 12;
  if (rate * T > 1) levels = std::max(levels, static_cast<int>(std::ceil(std::log2(rate * T))));
  return levels;
}

struct TruncatedResolventResult {
  NodeFunction value;
  /// sup-norm of (lambda - L) value - (f - e^{-lambda T} P_T f), relative to ||f||_inf.
  double identity_residual = 0.0;
};

/// int_0^T e^{-lambda t} P_t f dt by graded Gauss-Legendre quadrature.
/// Throws SolverError when the exact identity
/// (lambda - L) G^T f = f - e^{-lambda T} P_T f fails by more than `check`.
inline TruncatedResolventResult truncated_resolvent(const Space& space, const NodeFunction& f, double lambda,
                                                    double T, double check = 1e-8) {
  require(lambda > 0, "lambda must be positive");
  require(T > 0, "horizon T must be positive");
  if (std::isinf(T)) return {resolvent_apply(space, f, lambda), 0.0};
  const HeatPropagator heat(space);
  const auto rule = graded_rule(T, quadrature_levels(heat.rate(), T));
  NodeFunction acc = NodeFunction::Zero(space.size());
  NodeFunction cur = f;
  double now = 0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    cur = heat.apply(cur, rule.nodes[i] - now);
    now = rule.nodes[i];
    acc += rule.weights[i] * std::exp(-lambda * now) * cur;
  }
  const NodeFunction pT = heat.apply(cur, T - now);
  const NodeFunction lhs = lambda * acc - apply_generator(space, acc);
  const NodeFunction rhs = f - std::exp(-lambda * T) * pT;
  const double scale = std::max(f.cwiseAbs().maxCoeff(), 1e-300);
  TruncatedResolventResult out{std::move(acc), (lhs - rhs).cwiseAbs().maxCoeff() / scale};
  if (out.identity_residual > check)
    throw SolverError("truncated resolvent quadrature failed: identity residual " +
                      std::to_string(out.identity_residual));
  return out;
}

inline NodeFunction truncated_resolvent_apply(const Space& space, const NodeFunction& f, double lambda, double T) {
  return truncated_resolvent(space, f, lambda, T).value;
}

// Estimate reports ---------------------------------------------------------

/// A fitted or sup-type constant with the window it was measured on.
struct EstimateReport {
  double constant = 0.0;
  double residual = 0.0;
  std::pair<double, double> window{0.0, 0.0};
  Index skipped = 0;
  /// Secondary constants, e.g. "c8", "c9", "semigroup".
  std::map<std::string, double> extra;
};

/// Log-spaced grid of `count` points from a to b.
inline std::vector<double> log_grid(double a, double b, int count) {
  require(a > 0 && b >= a && count >= 1, "invalid log grid");
  std::vector<double> g;
  if (count == 1) return {a};
  for (int i = 0; i < count; ++i) g.push_back(a * std::pow(b / a, static_cast<double>(i) / (count - 1)));
  return g;
}

struct MaximalReport {
  NodeFunction maximal;
  /// (p, ||max_t P_t f||_p / ||f||_p)
  std::vector<std::pair<double, double>> ratios;
};

/// x -> max over t_grid of P_t f(x), with norm ratios for each p in `ps`.
inline MaximalReport semigroup_maximal(const Space& space, const NodeFunction& f, std::vector<double> t_grid,
                                       std::span<const double> ps) {
  require(!t_grid.empty(), "time grid must be nonempty");
  require((f.array() >= 0).all(), "maximal function needs f >= 0");
  std::sort(t_grid.begin(), t_grid.end());
  const auto values = HeatPropagator(space).apply_times(f, t_grid);
  MaximalReport out{values.front(), {}};
  for (const auto& v : values) out.maximal = out.maximal.cwiseMax(v);
  for (double p : ps) {
    const double denom = lp_norm(f, space.mu(), p);
    out.ratios.emplace_back(p, denom > 0 ? lp_norm(out.maximal, space.mu(), p) / denom : 0.0);
  }
  return out;
}

/// sup over f, t, x of sqrt(t) e^{-c2 t} sqrt(Gamma(P_t f))(x) / P_{alpha t} f(x).
inline EstimateReport log_gradient_constant(const Space& space, const std::vector<NodeFunction>& family,
                                            std::vector<double> t_grid, double alpha, double c2 = 0.0) {
  require(!family.empty(), "function family is empty");
  require(!t_grid.empty(), "time grid must be nonempty");
  require(alpha >= 1.0 && alpha < 2.0, "alpha must lie in [1, 2)");
  std::sort(t_grid.begin(), t_grid.end());
  std::vector<double> times(t_grid);
  for (double t : t_grid) times.push_back(alpha * t);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  const HeatPropagator heat(space);
  EstimateReport rep;
  rep.window = {t_grid.front(), t_grid.back()};
  for (const auto& f : family) {
    require((f.array() >= 0).all(), "family functions must be nonnegative");
    const auto values = heat.apply_times(f, times);
    auto at = [&](double t) -> const NodeFunction& {
      const auto it = std::lower_bound(times.begin(), times.end(), t);
      return values[static_cast<std::size_t>(it - times.begin())];
    };
    for (double t : t_grid) {
      const NodeFunction g = carre_du_champ(space, at(t)).cwiseSqrt();
      const NodeFunction& den = at(alpha * t);
      const double pre = std::sqrt(t) * std::exp(-c2 * t);
      for (Index x = 0; x < space.size(); ++x) {
        if (den[x] < kSkipThreshold) {
          ++rep.skipped;
          continue;
        }
        rep.constant = std::max(rep.constant, pre * g[x] / den[x]);
      }
    }
  }
  return rep;
}

/// Radially averaged log kernel against log distance over [r_min, r_max].
/// Default window [4h, diam/4]; throws when fewer than 5 distinct radii fall inside.
inline EstimateReport kernel_exponent_fit(const Space& space, double lambda, Index x,
                                          std::optional<std::pair<double, double>> window = std::nullopt) {
  require(lambda > 0, "lambda must be positive");
  const double lo = window ? window->first : 4 * space.spacing();
  const double hi = window ? window->second : space.diameter() / 4;
  const Eigen::VectorXd dist = space.distances_from(x);
  std::map<double, std::pair<double, int>> bins;
  for (Index y = 0; y < space.size(); ++y) {
    const double r = dist[y];
    if (r >= lo * (1 - 1e-9) && r <= hi * (1 + 1e-9) && r > 0)
      bins[std::round(r * 1e9) / 1e9];
  }
  if (bins.size() < 5) throw InvalidArgument("kernel fit window too small: fewer than 5 distinct radii");
  const auto col = resolvent_kernel(space, x, lambda);
  for (Index y = 0; y < space.size(); ++y) {
    const auto it = bins.find(std::round(dist[y] * 1e9) / 1e9);
    if (it != bins.end()) {
      it->second.first += std::log(col.values[y]);
      it->second.second += 1;
    }
  }
  std::vector<double> lx, ly;
  for (const auto& [r, acc] : bins) {
    lx.push_back(std::log(r));
    ly.push_back(acc.first / acc.second);
  }
  const auto fit = fit_line(lx, ly);
  EstimateReport rep;
  rep.constant = fit.slope;
  rep.residual = fit.residual;
  rep.window = {lo, hi};
  rep.extra["intercept"] = fit.intercept;
  rep.extra["radii"] = static_cast<double>(bins.size());
  return rep;
}

/// Fits log p_t(x,y) + log mu(B(y, sqrt t)) against rho(x,y)^2 / t over
/// nodes with rho <= 4 sqrt(t). constant = Gaussian slope (negated fit slope);
/// extra c8, c9: smallest c8 over a c9 scan in [1, 100] for which
/// e^{-c9 s}/c8 <= p V <= c8 e^{-s/c9} on every sample (s = rho^2/t).
inline EstimateReport gaussian_heat_fit(const Space& space, Index x, std::vector<double> t_list) {
  require(!t_list.empty(), "time list must be nonempty");
  std::sort(t_list.begin(), t_list.end());
  for (double t : t_list)
    require(t > 0 && std::sqrt(t) < space.diameter() / 4, "times must satisfy sqrt(t) < diam/4");
  const Eigen::VectorXd dist = space.distances_from(x);
  const auto values = HeatPropagator(space).apply_times(delta_density(space, x), t_list);
  std::vector<double> sx, sy;
  EstimateReport rep;
  rep.window = {t_list.front(), t_list.back()};
  for (std::size_t k = 0; k < t_list.size(); ++k) {
    const double t = t_list[k];
    const double rt = std::sqrt(t);
    for (Index y = 0; y < space.size(); ++y) {
      if (dist[y] > 4 * rt) continue;
      const double p = values[k][y];
      if (p < kSkipThreshold) {
        ++rep.skipped;
        continue;
      }
      const double r = rt;
      const double vol = ball_measures(space, y, std::span<const double>(&r, 1))[0];
      sx.push_back(dist[y] * dist[y] / t);
      sy.push_back(std::log(p) + std::log(vol));
    }
  }
  require(sx.size() >= 2, "degenerate Gaussian fit");
  const auto fit = fit_line(sx, sy);
  rep.constant = -fit.slope;
  rep.residual = fit.residual;
  double best_c8 = kInf, best_c9 = 1;
  for (double c9 : log_grid(1.0, 100.0, 200)) {
    double c8 = 1.0;
    for (std::size_t i = 0; i < sx.size(); ++i) {
      const double lp = sy[i];
      c8 = std::max(c8, std::exp(lp + sx[i] / c9));
      c8 = std::max(c8, std::exp(-c9 * sx[i] - lp));
    }
    if (c8 < best_c8) {
      best_c8 = c8;
      best_c9 = c9;
    }
  }
  rep.extra["c8"] = best_c8;
  rep.extra["c9"] = best_c9;
  rep.extra["intercept"] = fit.intercept;
  return rep;
}

/// constant: max over f of ||sqrt Gamma(f)||_p / ||(lambda - L) f||_p.
/// extra["semigroup"]: max over f, t of sqrt(t) ||sqrt Gamma(P_t f)||_p / ||f||_p.
inline EstimateReport gradient_p_constant(const Space& space, const std::vector<NodeFunction>& family, double p,
                                          double lambda, std::vector<double> t_grid = {}) {
  require(!family.empty(), "function family is empty");
  require(p > 1 && std::isfinite(p), "p must lie in (1, inf)");
  require(lambda > 0, "lambda must be positive");
  std::sort(t_grid.begin(), t_grid.end());
  EstimateReport rep;
  double semi = 0;
  const HeatPropagator heat(space);
  for (const auto& f : family) {
    const double den = domain_norm(space, f, lambda, p);
    if (den < kSkipThreshold) {
      ++rep.skipped;
    } else {
      rep.constant = std::max(rep.constant, lp_norm(carre_du_champ(space, f).cwiseSqrt(), space.mu(), p) / den);
    }
    const double fn = lp_norm(f, space.mu(), p);
    if (t_grid.empty() || fn < kSkipThreshold) continue;
    const auto values = heat.apply_times(f, t_grid);
    for (std::size_t k = 0; k < t_grid.size(); ++k)
      semi = std::max(semi, std::sqrt(t_grid[k]) *
                                lp_norm(carre_du_champ(space, values[k]).cwiseSqrt(), space.mu(), p) / fn);
  }
  if (!t_grid.empty()) rep.window = {t_grid.front(), t_grid.back()};
  rep.extra["semigroup"] = semi;
  return rep;
}

}  // namespace caplab
