#pragma once

// Measure potentials, Riesz and Wolff potentials, fractional maximal
// functions, Maz'ya-Khavin potentials and the inequality ratio suite.

#include "caplab/semigroup.hpp"

namespace caplab {

/// Nonnegative atomic measure; atoms sorted by node id, duplicates merged.
class DiscreteMeasure {
public:
  DiscreteMeasure() = default;
  DiscreteMeasure(std::vector<Index> nodes, std::vector<double> masses) {
    require(nodes.size() == masses.size(), "support and masses differ in length");
    std::map<Index, double> merged;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      require(masses[i] >= 0 && std::isfinite(masses[i]), "measure masses must be nonnegative");
      merged[nodes[i]] += masses[i];
    }
    for (const auto& [x, m] : merged) {
      support_.push_back(x);
      mass_.push_back(m);
    }
  }

  static DiscreteMeasure uniform(std::vector<Index> nodes, double total = 1.0) {
    const double m = nodes.empty() ? 0.0 : total / static_cast<double>(nodes.size());
    std::vector<double> masses(nodes.size(), m);
    return {std::move(nodes), std::move(masses)};
  }

  const std::vector<Index>& support() const { return support_; }
  const std::vector<double>& mass() const { return mass_; }
  std::size_t atoms() const { return support_.size(); }
  double total() const {
    double t = 0;
    for (double m : mass_) t += m;
    return t;
  }
  bool empty() const { return total() == 0.0; }

  DiscreteMeasure scaled(double c) const {
    auto out = *this;
    for (double& m : out.mass_) m *= c;
    return out;
  }

  void validate(const Space& space) const {
    for (Index x : support_) require(x >= 0 && x < space.size(), "measure support outside the space");
  }

  /// Density nu({x}) / mu(x) as a node function.
  NodeFunction density(const Space& space) const {
    validate(space);
    NodeFunction d = NodeFunction::Zero(space.size());
    for (std::size_t i = 0; i < support_.size(); ++i) d[support_[i]] += mass_[i] / space.mu()[support_[i]];
    return d;
  }

  /// sum_x f(x) nu({x}).
  double integrate(const NodeFunction& f) const {
    double s = 0;
    for (std::size_t i = 0; i < support_.size(); ++i) s += f[support_[i]] * mass_[i];
    return s;
  }

private:
  std::vector<Index> support_;
  std::vector<double> mass_;
};

/// Dyadic radii 2^{-j} for j_min <= j <= j_max.
struct ScaleWindow {
  int j_min = 0;
  int j_max = 0;

  std::vector<double> radii() const {
    std::vector<double> r;
    for (int j = j_min; j <= j_max; ++j) r.push_back(std::ldexp(1.0, -j));
    return r;
  }
};

/// Radii between half the grid spacing and the diameter.
inline ScaleWindow default_window(const Space& space) {
  require(space.diameter() > 0, "window needs a space with positive diameter");
  ScaleWindow w;
  w.j_min = static_cast<int>(std::ceil(-std::log2(space.diameter()) - 1e-12));
  w.j_max = static_cast<int>(std::floor(std::log2(2.0 / space.spacing()) + 1e-12));
  require(w.j_min <= w.j_max, "space too coarse for a dyadic window");
  return w;
}

inline void validate_window(const ScaleWindow& w) { require(w.j_min <= w.j_max, "invalid scale window"); }

/// rho with the on-diagonal floor h/2.
inline double floored_distance(const Space& space, double rho) { return std::max(rho, 0.5 * space.spacing()); }

/// G_lambda nu(x) = sum_y g_lambda(x,y) nu({y}), as one solve against the density of nu.
inline NodeFunction measure_potential(const Space& space, const DiscreteMeasure& nu, double lambda,
                                      SolverOptions options = {}) {
  require(lambda > 0, "lambda must be positive");
  return resolvent_apply(space, nu.density(space), lambda, options);
}

/// U^s nu(x) = sum_y max(rho(x,y), h/2)^{-s} nu({y}).
inline NodeFunction riesz_potential(const Space& space, const DiscreteMeasure& nu, double s) {
  require(s > 0, "Riesz order must be positive");
  nu.validate(space);
  NodeFunction u = NodeFunction::Zero(space.size());
  parallel_for(space.size(), [&](Index x) {
    double v = 0;
    for (std::size_t i = 0; i < nu.atoms(); ++i)
      v += std::pow(floored_distance(space, space.distance(x, nu.support()[i])), -s) * nu.mass()[i];
    u[x] = v;
  });
  return u;
}

namespace detail {

/// Distances from every atom of nu to every node (atoms x nodes).
inline Eigen::MatrixXd atom_distances(const Space& space, const DiscreteMeasure& nu) {
  Eigen::MatrixXd d(static_cast<Index>(nu.atoms()), space.size());
  for (std::size_t i = 0; i < nu.atoms(); ++i) d.row(static_cast<Index>(i)) = space.distances_from(nu.support()[i]).transpose();
  return d;
}

/// nu(B(y, r)) for every node y (closed balls).
inline NodeFunction ball_masses(const Eigen::MatrixXd& atom_dist, const DiscreteMeasure& nu, double r) {
  NodeFunction m = NodeFunction::Zero(atom_dist.cols());
  for (Index i = 0; i < atom_dist.rows(); ++i)
    for (Index y = 0; y < atom_dist.cols(); ++y)
      if (atom_dist(i, y) <= r * (1 + 1e-12)) m[y] += nu.mass()[static_cast<std::size_t>(i)];
  return m;
}

}  // namespace detail

/// M_s nu(x) = max over window radii r of r^{-s} nu(B(x, r)).
inline NodeFunction fractional_maximal(const Space& space, const DiscreteMeasure& nu, double s,
                                       const ScaleWindow& window) {
  require(s >= 0, "maximal order must be nonnegative");
  validate_window(window);
  nu.validate(space);
  const auto d = detail::atom_distances(space, nu);
  NodeFunction out = NodeFunction::Zero(space.size());
  for (double r : window.radii()) out = out.cwiseMax(std::pow(r, -s) * detail::ball_masses(d, nu, r));
  return out;
}

/// Wolff potential sum_j 2^{jsq} sum_{y in B(x, 2^-j)} nu(B(y, 2^-j))^{q-1} mu(y),
/// evaluated at `nodes` (all nodes when empty). Entries off `nodes` are zero.
inline NodeFunction wolff_potential(const Space& space, const DiscreteMeasure& nu, double s, double p,
                                    const ScaleWindow& window, std::vector<Index> nodes = {}) {
  require(s > 0, "Wolff order must be positive");
  const double q = conjugate_exponent(p);
  validate_window(window);
  nu.validate(space);
  if (nodes.empty()) {
    nodes.resize(static_cast<std::size_t>(space.size()));
    std::iota(nodes.begin(), nodes.end(), Index{0});
  }
  const auto d = detail::atom_distances(space, nu);
  std::vector<NodeFunction> weighted;
  std::vector<double> radii = window.radii();
  for (std::size_t k = 0; k < radii.size(); ++k) {
    const NodeFunction m = detail::ball_masses(d, nu, radii[k]);
    weighted.push_back(m.array().pow(q - 1).matrix().cwiseProduct(space.mu()));
  }
  NodeFunction out = NodeFunction::Zero(space.size());
  parallel_for(static_cast<Index>(nodes.size()), [&](Index i) {
    const Index x = nodes[static_cast<std::size_t>(i)];
    const Eigen::VectorXd dx = space.distances_from(x);
    double total = 0;
    for (std::size_t k = 0; k < radii.size(); ++k) {
      const int j = window.j_min + static_cast<int>(k);
      double inner_sum = 0;
      for (Index y = 0; y < space.size(); ++y)
        if (dx[y] <= radii[k] * (1 + 1e-12)) inner_sum += weighted[k][y];
      total += std::exp2(j * s * q) * inner_sum;
    }
    out[x] = total;
  });
  return out;
}

/// V(x) = sum_y g_lambda(x,y) (G_lambda nu(y))^{q-1} mu(y) = G_lambda((G_lambda nu)^{q-1}).
inline NodeFunction mazya_khavin_potential(const Space& space, const DiscreteMeasure& nu, double lambda, double p,
                                           SolverOptions options = {}) {
  const double q = conjugate_exponent(p);
  const NodeFunction u = measure_potential(space, nu, lambda, options);
  const NodeFunction w = q == 2.0 ? u : NodeFunction(u.array().pow(q - 1));
  return resolvent_apply(space, w, lambda, options);
}

struct InequalityRatios {
  /// ||U^s nu||_q^q / int W dnu; NaN when skipped (0/0).
  double wolff = std::numeric_limits<double>::quiet_NaN();
  /// ||U^s nu||_q^q / ||M_s nu||_q^q.
  double muckenhoupt_wheeden = std::numeric_limits<double>::quiet_NaN();
  /// max over atom pairs of the iterated-kernel ratio; NaN below dimension 4.
  double giraud = std::numeric_limits<double>::quiet_NaN();
  Index skipped = 0;
};

inline InequalityRatios inequality_ratios(const Space& space, const DiscreteMeasure& nu, double s, double p,
                                          const ScaleWindow& window) {
  const double d = space.ambient_dim();
  require(s > 0 && s < d, "Riesz order must lie in (0, d)");
  const double q = conjugate_exponent(p);
  InequalityRatios out;
  if (nu.empty()) {
    out.skipped = 3;
    return out;
  }
  const NodeFunction u = riesz_potential(space, nu, s);
  const double uq = lp_power(u, space.mu(), q);
  const double wolff_int = nu.integrate(wolff_potential(space, nu, s, p, window, nu.support()));
  const double mq = lp_power(fractional_maximal(space, nu, s, window), space.mu(), q);
  if (wolff_int > 0) out.wolff = uq / wolff_int; else ++out.skipped;
  if (mq > 0) out.muckenhoupt_wheeden = uq / mq; else ++out.skipped;
  if (d >= 4 && nu.atoms() >= 2) {
    const auto dist = detail::atom_distances(space, nu);
    double best = 0;
    for (std::size_t a = 0; a < nu.atoms(); ++a) {
      for (std::size_t b = a + 1; b < nu.atoms(); ++b) {
        double num = 0;
        for (Index y = 0; y < space.size(); ++y)
          num += std::pow(floored_distance(space, dist(static_cast<Index>(a), y)), 2 - d) *
                 std::pow(floored_distance(space, dist(static_cast<Index>(b), y)), 2 - d) * space.mu()[y];
        const double rho = floored_distance(space, dist(static_cast<Index>(a), nu.support()[b]));
        const double den = d > 4 ? std::pow(rho, 4 - d) : 1 + std::max(0.0, std::log(1 / rho));
        best = std::max(best, num / den);
      }
    }
    out.giraud = best;
  } else {
    ++out.skipped;
  }
  return out;
}

}  // namespace caplab
