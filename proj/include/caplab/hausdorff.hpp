#pragma once

// Target sets, Hausdorff gauges, natural measures, covering sums and
// box-counting dimension.

#include "caplab/space.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <set>
#include <variant>

namespace caplab {

// Gauges -------------------------------------------------------------------

struct PowerGauge {
  double s = 1.0;
};
/// h_p(r) = (1 + log+(1/r))^{1-p}
struct LogPowerGauge {
  double p = 2.0;
};
/// (1 + log+(1/r))^{-1-eps}
struct LogExponentGauge {
  double eps = 0.0;
};

using HausdorffFn = std::variant<PowerGauge, LogPowerGauge, LogExponentGauge>;

inline void validate_gauge(const HausdorffFn& h) {
  std::visit(
      [](const auto& g) {
        using G = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<G, PowerGauge>) require(g.s >= 0, "power gauge needs s >= 0");
        if constexpr (std::is_same_v<G, LogPowerGauge>) require(g.p > 1, "log power gauge needs p > 1");
        if constexpr (std::is_same_v<G, LogExponentGauge>) require(g.eps >= 0, "log exponent gauge needs eps >= 0");
      },
      h);
}

inline double eval_gauge(const HausdorffFn& h, double r) {
  require(r >= 0, "gauge argument must be nonnegative");
  return std::visit(
      [r](const auto& g) -> double {
        using G = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<G, PowerGauge>) {
          return g.s == 0 ? 1.0 : std::pow(r, g.s);
        } else {
          if (r == 0) return 0.0;
          const double l = 1 + std::max(0.0, std::log(1 / r));
          if constexpr (std::is_same_v<G, LogPowerGauge>) return std::pow(l, 1 - g.p);
          else return std::pow(l, -1 - g.eps);
        }
      },
      h);
}

struct GaugeCheck {
  bool monotone = true;
  /// max h(2r)/h(r) over the grid
  double doubling = 0.0;
};

inline GaugeCheck check_gauge(const HausdorffFn& h, double r_min = 1e-12, double r_max = 1e3, int points = 400) {
  GaugeCheck out;
  double prev = -kInf;
  for (int i = 0; i < points; ++i) {
    const double r = r_min * std::pow(r_max / r_min, static_cast<double>(i) / (points - 1));
    const double v = eval_gauge(h, r);
    if (v < prev) out.monotone = false;
    prev = v;
    if (v > 0) out.doubling = std::max(out.doubling, eval_gauge(h, 2 * r) / v);
  }
  return out;
}

struct CondhResult {
  /// partial Stieltjes sum of int (-log r) dh(r) down to r = 2^-depth
  double value = 0.0;
  bool divergent = false;
  /// fitted decay exponent of the per-panel increments over the second half of the levels
  double tail_exponent = 0.0;
  /// the partial-sum comparison S_depth > 10 S_{depth/2}
  bool ratio_rule = false;
  std::vector<double> partial_sums;
};

/// Per dyadic panel [2^-(k+1), 2^-k], integration by parts gives
/// int (-log r) dh = k ln2 h(2^-k) - (k+1) ln2 h(2^-(k+1)) + int h(e^-u) du,
/// the last term by 8-point Gauss-Legendre in u. Divergence is flagged when
/// the increments decay no faster than k^-1.
inline CondhResult condh_integral(const HausdorffFn& h, int depth) {
  require(depth >= 8, "condh needs at least 8 dyadic levels");
  validate_gauge(h);
  using gauss = boost::math::quadrature::gauss<double, 8>;
  const double ln2 = std::log(2.0);
  CondhResult out;
  std::vector<double> inc;
  double sum = 0;
  for (int k = 0; k < depth; ++k) {
    const double a = k * ln2, b = (k + 1) * ln2;
    const double integral = gauss::integrate([&](double u) { return eval_gauge(h, std::exp(-u)); }, a, b);
    const double piece = a * eval_gauge(h, std::exp(-a)) - b * eval_gauge(h, std::exp(-b)) + integral;
    inc.push_back(piece);
    sum += piece;
    out.partial_sums.push_back(sum);
  }
  out.value = sum;
  out.ratio_rule = std::abs(out.partial_sums.back()) > 10 * std::abs(out.partial_sums[static_cast<std::size_t>(depth / 2 - 1)]);
  std::vector<double> lx, ly;
  for (int k = depth / 2; k < depth; ++k) {
    if (inc[static_cast<std::size_t>(k)] <= 0) continue;
    lx.push_back(std::log(k + 0.5));
    ly.push_back(std::log(inc[static_cast<std::size_t>(k)]));
  }
  if (lx.size() >= 2) {
    out.tail_exponent = -fit_line(lx, ly).slope;
    out.divergent = out.tail_exponent <= 1.0;
  } else {
    out.tail_exponent = kInf;
  }
  out.divergent = out.divergent || out.ratio_rule;
  return out;
}

// Set specifications -------------------------------------------------------

struct PointSet {
  std::vector<double> location;
};
/// Coordinates 0..k-1 vary; coordinates k..d-1 fixed at `offset` (missing entries 0).
struct KPlaneSet {
  int k = 1;
  std::vector<double> offset;
};
/// Product of `factors` one-dimensional Cantor sets with contraction `ratio`,
/// remaining coordinates at 0.
struct CantorDustSet {
  double ratio = 1.0 / 3.0;
  int depth = 6;
  int factors = 1;
};
/// Cantor set with level-k length l_k solving h^(eps)(l_k) = 2^-k.
struct LogCantorSet {
  double eps = 1.0;
  int depth = 5;
};

struct SetSpec {
  std::variant<PointSet, KPlaneSet, CantorDustSet, LogCantorSet> shape;
  int d = 1;
};

inline void validate_set(const SetSpec& spec) {
  require(spec.d >= 1 && spec.d <= 5, "set ambient dimension must be in 1..5");
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, PointSet>) {
          require(static_cast<int>(s.location.size()) <= spec.d, "point has too many coordinates");
        } else if constexpr (std::is_same_v<S, KPlaneSet>) {
          require(s.k >= 0 && s.k <= spec.d, "plane dimension must lie in 0..d");
        } else if constexpr (std::is_same_v<S, CantorDustSet>) {
          require(s.ratio > 0 && s.ratio < 0.5, "dust ratio must lie in (0, 1/2)");
          require(s.depth >= 1, "dust depth must be at least 1");
          require(s.factors >= 1 && s.factors <= spec.d, "dust factors must lie in 1..d");
        } else {
          require(s.eps >= 0, "log-Cantor eps must be nonnegative");
          require(s.depth >= 1, "log-Cantor depth must be at least 1");
        }
      },
      spec.shape);
}

/// Level lengths l_0..l_depth; log(1/l_k) = 2^{k/(1+eps)} - 1, clamped to
/// l_k <= l_{k-1}/2 so that children fit inside their parent.
inline std::vector<double> log_cantor_scales(double eps, int depth) {
  std::vector<double> l{1.0};
  for (int k = 1; k <= depth; ++k) {
    const double target = std::exp(-(std::exp2(k / (1 + eps)) - 1));
    l.push_back(std::min(target, 0.5 * l.back()));
  }
  return l;
}

/// Left endpoints of the level-`depth` intervals of a two-child construction
/// with level lengths l.
inline std::vector<double> cantor_endpoints(const std::vector<double>& l) {
  std::vector<double> pts{0.0};
  for (std::size_t k = 1; k < l.size(); ++k) {
    std::vector<double> next;
    for (double a : pts) {
      next.push_back(a);
      next.push_back(a + l[k - 1] - l[k]);
    }
    pts = std::move(next);
  }
  return pts;
}

inline std::vector<double> dust_scales(double ratio, int depth) {
  std::vector<double> l{1.0};
  for (int k = 1; k <= depth; ++k) l.push_back(l.back() * ratio);
  return l;
}

using PointList = std::vector<std::vector<double>>;

/// Continuum point sample of the set. Planes are sampled on a lattice of
/// spacing 2^-resolution; Cantor sets by their level-depth left endpoints.
inline PointList set_points(const SetSpec& spec, int resolution = 10) {
  validate_set(spec);
  const auto d = static_cast<std::size_t>(spec.d);
  PointList out;
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, PointSet>) {
          std::vector<double> p(d, 0.0);
          for (std::size_t i = 0; i < s.location.size(); ++i) p[i] = s.location[i];
          out.push_back(p);
        } else if constexpr (std::is_same_v<S, KPlaneSet>) {
          const Index m = Index{1} << resolution;
          Index total = 1;
          for (int i = 0; i < s.k; ++i) total *= m;
          require(total <= 4'000'000, "plane sample too fine");
          for (Index c = 0; c < total; ++c) {
            std::vector<double> p(d, 0.0);
            Index rem = c;
            for (int i = 0; i < s.k; ++i) {
              p[static_cast<std::size_t>(i)] = static_cast<double>(rem % m) / static_cast<double>(m);
              rem /= m;
            }
            for (std::size_t i = static_cast<std::size_t>(s.k); i < d; ++i) {
              const std::size_t j = i - static_cast<std::size_t>(s.k);
              p[i] = j < s.offset.size() ? s.offset[j] : 0.0;
            }
            out.push_back(p);
          }
        } else {
          std::vector<double> pts;
          int factors = 1;
          if constexpr (std::is_same_v<S, CantorDustSet>) {
            pts = cantor_endpoints(dust_scales(s.ratio, s.depth));
            factors = s.factors;
          } else {
            pts = cantor_endpoints(log_cantor_scales(s.eps, s.depth));
          }
          Index total = 1;
          for (int i = 0; i < factors; ++i) total *= static_cast<Index>(pts.size());
          require(total <= 4'000'000, "Cantor sample too large");
          for (Index c = 0; c < total; ++c) {
            std::vector<double> p(d, 0.0);
            Index rem = c;
            for (int i = 0; i < factors; ++i) {
              p[static_cast<std::size_t>(i)] = pts[static_cast<std::size_t>(rem % static_cast<Index>(pts.size()))];
              rem /= static_cast<Index>(pts.size());
            }
            out.push_back(p);
          }
        }
      },
      spec.shape);
  return out;
}

namespace detail {

inline Index snap_coordinate(const Space& space, double x) {
  const Index n = space.side();
  const double h = space.spacing();
  if (space.kind() == SpaceKind::Torus) {
    Index c = static_cast<Index>(std::llround(x / h)) % n;
    return c < 0 ? c + n : c;
  }
  return std::clamp<Index>(static_cast<Index>(std::floor(x / h)), 0, n - 1);
}

inline Index snap_point(const Space& space, std::span<const double> p) {
  Index id = 0;
  for (int k = 0; k < space.coord_dim(); ++k) id = id * space.side() + snap_coordinate(space, p[static_cast<std::size_t>(k)]);
  return id;
}

}  // namespace detail

/// Nearest-node snap onto a torus or box grid of matching dimension. Cantor
/// depths are capped at floor(log2 n).
inline std::vector<Index> realize_set(const SetSpec& spec, const Space& space) {
  validate_set(spec);
  require(space.kind() == SpaceKind::Torus || space.kind() == SpaceKind::Box, "sets realize on grid spaces only");
  require(space.coord_dim() == spec.d, "set and space dimensions differ");
  SetSpec capped = spec;
  const int cap = static_cast<int>(std::floor(std::log2(static_cast<double>(space.side())) + 1e-12));
  int resolution = std::max(1, cap);
  std::visit(
      [&](auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, CantorDustSet> || std::is_same_v<S, LogCantorSet>) s.depth = std::min(s.depth, cap);
        if constexpr (std::is_same_v<S, KPlaneSet>) resolution = static_cast<int>(std::ceil(std::log2(static_cast<double>(space.side())))) + 1;
      },
      capped.shape);
  std::set<Index> nodes;
  for (const auto& p : set_points(capped, resolution)) nodes.insert(detail::snap_point(space, p));
  return {nodes.begin(), nodes.end()};
}

// Covering sums and dimension ------------------------------------------------

/// Number of occupied grid-aligned cubes of side delta.
inline Index occupied_cubes(const PointList& pts, double delta) {
  require(!pts.empty(), "point set is empty");
  require(delta > 0, "cube side must be positive");
  std::set<std::vector<std::int64_t>> cubes;
  for (const auto& p : pts) {
    std::vector<std::int64_t> key(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) key[i] = static_cast<std::int64_t>(std::floor(p[i] / delta + 1e-9));
    cubes.insert(std::move(key));
  }
  return static_cast<Index>(cubes.size());
}

/// sum over occupied cubes of side delta of h(delta sqrt(d)).
inline double hausdorff_sum(const PointList& pts, const HausdorffFn& h, double delta) {
  require(!pts.empty(), "point set is empty");
  const double diam = delta * std::sqrt(static_cast<double>(pts.front().size()));
  return static_cast<double>(occupied_cubes(pts, delta)) * eval_gauge(h, diam);
}

struct DimensionFit {
  double dimension = 0.0;
  double residual = 0.0;
  double delta_min = 0.0;
  double delta_max = 0.0;
  int octaves = 0;
};

/// Slope of log N(delta) against log(1/delta) for dyadic delta between the
/// minimal pairwise spacing and half the extent of the set.
inline DimensionFit dimension_fit(const PointList& pts) {
  require(pts.size() >= 2, "dimension fit needs at least two points");
  const std::size_t d = pts.front().size();
  double extent = 0;
  for (std::size_t k = 0; k < d; ++k) {
    double lo = kInf, hi = -kInf;
    for (const auto& p : pts) {
      lo = std::min(lo, p[k]);
      hi = std::max(hi, p[k]);
    }
    extent = std::max(extent, hi - lo);
  }
  // minimal spacing along sorted coordinates is a lower bound proxy for the
  // pairwise minimum on product sets; use the exact minimum for small sets
  double spacing = kInf;
  if (pts.size() <= 4096) {
    for (std::size_t a = 0; a < pts.size(); ++a)
      for (std::size_t b = a + 1; b < pts.size(); ++b) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s = std::max(s, std::abs(pts[a][k] - pts[b][k]));
        if (s > 0) spacing = std::min(spacing, s);
      }
  } else {
    for (std::size_t k = 0; k < d; ++k) {
      std::vector<double> c;
      for (const auto& p : pts) c.push_back(p[k]);
      std::sort(c.begin(), c.end());
      for (std::size_t i = 1; i < c.size(); ++i)
        if (c[i] - c[i - 1] > 1e-15) spacing = std::min(spacing, c[i] - c[i - 1]);
    }
  }
  require(std::isfinite(spacing) && extent > 0, "insufficient scale range");
  const int j_lo = static_cast<int>(std::ceil(-std::log2(extent / 2) - 1e-12));
  const int j_hi = static_cast<int>(std::floor(-std::log2(spacing) + 1e-12));
  if (j_hi - j_lo < 3) throw InvalidArgument("insufficient scale range for a dimension fit");
  std::vector<double> lx, ly;
  for (int j = j_lo; j <= j_hi; ++j) {
    const double delta = std::ldexp(1.0, -j);
    lx.push_back(j * std::log(2.0));
    ly.push_back(std::log(static_cast<double>(occupied_cubes(pts, delta))));
  }
  const auto fit = fit_line(lx, ly);
  return {fit.slope, fit.residual, std::ldexp(1.0, -j_hi), std::ldexp(1.0, -j_lo), j_hi - j_lo};
}

// Natural measures -----------------------------------------------------------

struct NaturalMeasure {
  PointList points;  // left corners of the depth-level cells
  std::vector<double> mass;
  double cell = 0.0;  // side length of a depth-level cell
  int factors = 1;
  HausdorffFn gauge;
  /// max over atoms and dyadic r >= cell of nu(B(x,r)) / h(r)
  double frostman_ratio = 0.0;
};

/// Equal mass on the depth-level cells, spread uniformly inside each cell.
/// nu(B(x,r)) is bounded by the mass of the sup-norm ball, which contains the
/// Euclidean one.
inline NaturalMeasure natural_measure(const SetSpec& spec) {
  validate_set(spec);
  NaturalMeasure out;
  std::vector<double> scales;
  if (const auto* dust = std::get_if<CantorDustSet>(&spec.shape)) {
    scales = dust_scales(dust->ratio, dust->depth);
    out.factors = dust->factors;
    out.gauge = PowerGauge{dust->factors * std::log(2.0) / std::log(1 / dust->ratio)};
  } else if (const auto* lc = std::get_if<LogCantorSet>(&spec.shape)) {
    scales = log_cantor_scales(lc->eps, lc->depth);
    out.gauge = LogExponentGauge{lc->eps};
  } else {
    throw InvalidArgument("natural measure needs a Cantor-type set");
  }
  out.cell = scales.back();
  const auto ends = cantor_endpoints(scales);
  out.points = set_points(spec);
  out.mass.assign(out.points.size(), 1.0 / static_cast<double>(out.points.size()));
  const double cell = out.cell;
  auto overlap = [cell](double a, double lo, double hi) {
    return std::max(0.0, std::min(a + cell, hi) - std::max(a, lo)) / cell;
  };
  // the product structure makes the sup-norm ball mass a product of 1-d masses
  const double per_atom = 1.0 / static_cast<double>(ends.size());
  auto mass_1d = [&](double centre, double r) {
    double m = 0;
    for (double a : ends) m += per_atom * overlap(a, centre - r, centre + r);
    return m;
  };
  for (int j = 0;; ++j) {
    const double r = std::ldexp(1.0, -j);
    if (r < cell) break;
    const double hr = eval_gauge(out.gauge, r);
    for (double a : ends) {
      for (double c : {a, a + cell}) {
        double m = std::pow(mass_1d(c, r), out.factors);
        out.frostman_ratio = std::max(out.frostman_ratio, m / hr);
      }
    }
  }
  return out;
}

}  // namespace caplab
