#pragma once

// Finite metric measure spaces with symmetric edge weights and the
// generator Lf(x) = (1/mu(x)) sum_y w(x,y) (f(y) - f(x)).

#include "caplab/core.hpp"

#include <Eigen/SparseCore>

#include <array>
#include <cstring>
#include <deque>
#include <fstream>
#include <istream>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <unordered_map>

namespace caplab {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, std::int64_t>;

enum class SpaceKind : std::uint32_t { Torus = 1, Box = 2, Heisenberg = 3, Graph = 4 };

/// Element (a, b, c) of the discrete Heisenberg group with product
/// (a,b,c)(a',b',c') = (a+a', b+b', c+c'+ab').
struct HeisenbergElement {
  std::int64_t a = 0, b = 0, c = 0;
  bool operator==(const HeisenbergElement&) const = default;
  HeisenbergElement operator*(const HeisenbergElement& o) const {
    return {a + o.a, b + o.b, c + o.c + a * o.b};
  }
  HeisenbergElement inverse() const { return {-a, -b, -c + a * b}; }
};

struct HeisenbergHash {
  std::size_t operator()(const HeisenbergElement& g) const {
    ContentHash h;
    h.update_value(g.a);
    h.update_value(g.b);
    h.update_value(g.c);
    return static_cast<std::size_t>(h.digest());
  }
};

/// Word lengths of all group elements within `radius` of the identity, for
/// the generating set {X, X^-1, Y, Y^-1}. Returned in breadth-first order.
inline std::vector<std::pair<HeisenbergElement, int>> heisenberg_ball(int radius) {
  static constexpr std::array<HeisenbergElement, 4> gens{
      HeisenbergElement{1, 0, 0}, HeisenbergElement{-1, 0, 0}, HeisenbergElement{0, 1, 0},
      HeisenbergElement{0, -1, 0}};
  std::vector<std::pair<HeisenbergElement, int>> order;
  std::unordered_map<HeisenbergElement, int, HeisenbergHash> seen;
  order.push_back({HeisenbergElement{}, 0});
  seen.emplace(HeisenbergElement{}, 0);
  for (std::size_t head = 0; head < order.size(); ++head) {
    const auto [g, d] = order[head];
    if (d == radius) continue;
    for (const auto& s : gens) {
      const auto h = g * s;
      if (seen.emplace(h, d + 1).second) order.push_back({h, d + 1});
    }
  }
  return order;
}

/// Slope of log |B(e,r)| against log r over r in [R/2, R]; ball sizes are
/// exact word-length counts.
inline double heisenberg_growth_exponent(int radius) {
  require(radius >= 4, "growth fit needs radius >= 4");
  std::vector<double> count(static_cast<std::size_t>(radius) + 1, 0.0);
  for (const auto& [g, len] : heisenberg_ball(radius)) count[static_cast<std::size_t>(len)] += 1;
  for (std::size_t k = 1; k < count.size(); ++k) count[k] += count[k - 1];
  std::vector<double> lx, ly;
  for (int r = radius / 2; r <= radius; ++r) {
    lx.push_back(std::log(static_cast<double>(r)));
    ly.push_back(std::log(count[static_cast<std::size_t>(r)]));
  }
  return fit_line(lx, ly).slope;
}

struct SpaceLimits {
  Index max_nodes = 2'000'000;
};

/// Immutable finite metric measure space. Node ids are 0..size()-1; grids use
/// row-major order over integer coordinates (first axis slowest).
class Space {
public:
  struct Edge {
    Index i, j;
    double w;
  };

  Space() = default;

  Index size() const { return static_cast<Index>(mu_.size()); }
  SpaceKind kind() const { return kind_; }
  int coord_dim() const { return coord_dim_; }
  /// Ambient dimension for grids, homogeneous dimension for the Heisenberg lattice.
  double ambient_dim() const { return ambient_dim_; }
  /// Grid spacing h (the dilation scale for lattices, 1 for graphs).
  double spacing() const { return spacing_; }
  /// Nodes per side for grids, radius for lattices, 0 otherwise.
  Index side() const { return side_; }
  const Eigen::VectorXd& mu() const { return mu_; }
  const SparseMatrix& weights() const { return weights_; }
  /// deg(x) = sum_y w(x,y).
  const Eigen::VectorXd& degree() const { return degree_; }
  double total_mass() const { return mu_.sum(); }
  std::uint64_t hash() const { return hash_; }

  std::span<const double> coords(Index i) const {
    return {coords_.data() + i * coord_dim_, static_cast<std::size_t>(coord_dim_)};
  }
  const std::vector<double>& coord_block() const { return coords_; }
  const std::vector<HeisenbergElement>& group_elements() const { return group_; }

  /// Uniformization rate max_x deg(x)/mu(x).
  double max_rate() const { return (degree_.array() / mu_.array()).maxCoeff(); }

  double distance(Index i, Index j) const {
    switch (kind_) {
      case SpaceKind::Torus: {
        double s = 0;
        for (int k = 0; k < coord_dim_; ++k) {
          double d = std::abs(coords_[i * coord_dim_ + k] - coords_[j * coord_dim_ + k]);
          d = std::min(d, 1.0 - d);
          s += d * d;
        }
        return std::sqrt(s);
      }
      case SpaceKind::Box: {
        double s = 0;
        for (int k = 0; k < coord_dim_; ++k) {
          const double d = coords_[i * coord_dim_ + k] - coords_[j * coord_dim_ + k];
          s += d * d;
        }
        return std::sqrt(s);
      }
      case SpaceKind::Heisenberg: {
        if (i == j) return 0.0;
        if (i == 0) return spacing_ * word_length_[static_cast<std::size_t>(j)];
        if (j == 0) return spacing_ * word_length_[static_cast<std::size_t>(i)];
        const auto g = group_[static_cast<std::size_t>(i)].inverse() * group_[static_cast<std::size_t>(j)];
        return spacing_ * lattice_table().at(g);
      }
      case SpaceKind::Graph:
        return table_[static_cast<std::size_t>(i * size() + j)];
    }
    return kInf;
  }

  /// Distances from node x to every node.
  Eigen::VectorXd distances_from(Index x) const {
    Eigen::VectorXd d(size());
    for (Index y = 0; y < size(); ++y) d[y] = distance(x, y);
    return d;
  }

  double diameter() const { return diameter_; }

  // Construction ---------------------------------------------------------

  /// Builds and validates a space. `table` is a dense distance matrix for
  /// Graph spaces and ignored otherwise.
  static Space assemble(SpaceKind kind, int coord_dim, std::vector<double> coords,
                        Eigen::VectorXd mu, const std::vector<Edge>& edges, double ambient_dim,
                        double spacing, Index side, std::vector<double> table = {},
                        std::vector<HeisenbergElement> group = {},
                        std::vector<int> word_length = {}, double diameter = -1.0) {
    Space s;
    s.kind_ = kind;
    s.coord_dim_ = coord_dim;
    s.coords_ = std::move(coords);
    s.mu_ = std::move(mu);
    s.ambient_dim_ = ambient_dim;
    s.spacing_ = spacing;
    s.side_ = side;
    s.table_ = std::move(table);
    s.group_ = std::move(group);
    s.word_length_ = std::move(word_length);
    const Index n = s.size();
    require(n >= 1, "space needs at least one node");
    require((s.mu_.array() > 0).all(), "node measure must be positive");
    std::vector<Eigen::Triplet<double, std::int64_t>> trip;
    trip.reserve(edges.size() * 2);
    for (const auto& e : edges) {
      require(e.i >= 0 && e.i < n && e.j >= 0 && e.j < n, "edge endpoint out of range");
      require(e.i != e.j, "self loops are not allowed");
      require(e.w >= 0, "edge weights must be nonnegative");
      trip.emplace_back(e.i, e.j, e.w);
      trip.emplace_back(e.j, e.i, e.w);
    }
    s.weights_.resize(n, n);
    s.weights_.setFromTriplets(trip.begin(), trip.end());
    s.weights_.makeCompressed();
    s.degree_ = Eigen::VectorXd::Zero(n);
    for (Index x = 0; x < n; ++x)
      for (SparseMatrix::InnerIterator it(s.weights_, x); it; ++it) s.degree_[x] += it.value();
    require(s.connected(), "space graph must be connected");
    if (kind == SpaceKind::Graph) {
      if (s.table_.empty()) s.table_ = s.hop_distances();
      require(static_cast<Index>(s.table_.size()) == n * n, "distance table has wrong size");
    }
    s.diameter_ = diameter >= 0 ? diameter : s.compute_diameter();
    s.hash_ = s.content_hash();
    return s;
  }

  /// Small custom spaces: explicit measure and edge list, hop-count metric
  /// unless a dense distance table is given.
  static Space from_edges(Eigen::VectorXd mu, const std::vector<Edge>& edges,
                          std::vector<double> table = {}) {
    return assemble(SpaceKind::Graph, 0, {}, std::move(mu), edges, 0.0, 1.0, 0, std::move(table));
  }

  void serialize(std::ostream& out) const;
  static Space deserialize(std::istream& in);

private:
  bool connected() const {
    std::vector<char> seen(static_cast<std::size_t>(size()), 0);
    std::vector<Index> stack{0};
    seen[0] = 1;
    Index count = 1;
    while (!stack.empty()) {
      const Index x = stack.back();
      stack.pop_back();
      for (SparseMatrix::InnerIterator it(weights_, x); it; ++it) {
        if (it.value() > 0 && !seen[static_cast<std::size_t>(it.col())]) {
          seen[static_cast<std::size_t>(it.col())] = 1;
          ++count;
          stack.push_back(it.col());
        }
      }
    }
    return count == size();
  }

  std::vector<double> hop_distances() const {
    const Index n = size();
    std::vector<double> t(static_cast<std::size_t>(n * n), kInf);
    for (Index s = 0; s < n; ++s) {
      std::deque<Index> q{s};
      t[static_cast<std::size_t>(s * n + s)] = 0;
      while (!q.empty()) {
        const Index x = q.front();
        q.pop_front();
        for (SparseMatrix::InnerIterator it(weights_, x); it; ++it) {
          auto& d = t[static_cast<std::size_t>(s * n + it.col())];
          if (it.value() > 0 && std::isinf(d)) {
            d = t[static_cast<std::size_t>(s * n + x)] + 1;
            q.push_back(it.col());
          }
        }
      }
    }
    return t;
  }

  double compute_diameter() const {
    switch (kind_) {
      case SpaceKind::Torus:
        return std::sqrt(static_cast<double>(coord_dim_)) * 0.5 * (side_ % 2 == 0 ? 1.0 : (1.0 - 1.0 / static_cast<double>(side_)));
      case SpaceKind::Box:
        return std::sqrt(static_cast<double>(coord_dim_)) * (1.0 - spacing_);
      case SpaceKind::Heisenberg:
        return 2.0 * spacing_ * static_cast<double>(side_);
      case SpaceKind::Graph:
        return table_.empty() ? 0.0 : *std::max_element(table_.begin(), table_.end());
    }
    return 0.0;
  }

  const std::unordered_map<HeisenbergElement, int, HeisenbergHash>& lattice_table() const {
    std::call_once(*table_once_, [this] {
      for (const auto& [g, d] : heisenberg_ball(static_cast<int>(2 * side_))) lattice_table_->emplace(g, d);
    });
    return *lattice_table_;
  }

  std::uint64_t content_hash() const;

  SpaceKind kind_ = SpaceKind::Graph;
  int coord_dim_ = 0;
  std::vector<double> coords_;
  Eigen::VectorXd mu_;
  SparseMatrix weights_;
  Eigen::VectorXd degree_;
  double ambient_dim_ = 0.0;
  double spacing_ = 1.0;
  Index side_ = 0;
  double diameter_ = 0.0;
  std::vector<double> table_;
  std::vector<HeisenbergElement> group_;
  std::vector<int> word_length_;
  std::uint64_t hash_ = 0;
  std::shared_ptr<std::once_flag> table_once_ = std::make_shared<std::once_flag>();
  std::shared_ptr<std::unordered_map<HeisenbergElement, int, HeisenbergHash>> lattice_table_ =
      std::make_shared<std::unordered_map<HeisenbergElement, int, HeisenbergHash>>();
};

// Builders ----------------------------------------------------------------

namespace detail {

inline Index grid_nodes(int d, Index n, const SpaceLimits& limits) {
  require(d >= 1 && d <= 5, "grid dimension must be in 1..5");
  require(n >= 2, "grid needs at least 2 nodes per side");
  double total = std::pow(static_cast<double>(n), d);
  if (total > static_cast<double>(limits.max_nodes))
    throw BudgetError("grid with " + std::to_string(static_cast<long long>(total)) +
                          " nodes exceeds the node budget",
                      total);
  return static_cast<Index>(total);
}

inline Space build_grid(int d, Index n, bool periodic, const SpaceLimits& limits) {
  const Index total = grid_nodes(d, n, limits);
  const double h = 1.0 / static_cast<double>(n);
  const double offset = periodic ? 0.0 : 0.5;
  std::vector<double> coords(static_cast<std::size_t>(total * d));
  std::vector<Space::Edge> edges;
  edges.reserve(static_cast<std::size_t>(total * d));
  const double w = std::pow(h, d - 2);
  std::vector<Index> stride(static_cast<std::size_t>(d));
  stride[static_cast<std::size_t>(d - 1)] = 1;
  for (int k = d - 2; k >= 0; --k) stride[static_cast<std::size_t>(k)] = stride[static_cast<std::size_t>(k + 1)] * n;
  for (Index x = 0; x < total; ++x) {
    Index rem = x;
    for (int k = 0; k < d; ++k) {
      const Index c = rem / stride[static_cast<std::size_t>(k)];
      rem %= stride[static_cast<std::size_t>(k)];
      coords[static_cast<std::size_t>(x * d + k)] = (static_cast<double>(c) + offset) * h;
      if (c + 1 < n) {
        edges.push_back({x, x + stride[static_cast<std::size_t>(k)], w});
      } else if (periodic) {
        edges.push_back({x, x - c * stride[static_cast<std::size_t>(k)], w});
      }
    }
  }
  Eigen::VectorXd mu = Eigen::VectorXd::Constant(total, std::pow(h, d));
  return Space::assemble(periodic ? SpaceKind::Torus : SpaceKind::Box, d, std::move(coords),
                         std::move(mu), edges, static_cast<double>(d), h, n);
}

}  // namespace detail

/// Flat unit torus [0,1)^d with spacing h = 1/n, mu = h^d, w = h^(d-2)
/// between nearest neighbours: L is the standard finite-difference Laplacian.
inline Space build_torus_grid(int d, Index n, const SpaceLimits& limits = {}) {
  return detail::build_grid(d, n, true, limits);
}

/// Cell-centred grid on [0,1]^d with Neumann boundary: edges leaving the box
/// are dropped, mu unchanged.
inline Space build_box_grid(int d, Index n, const SpaceLimits& limits = {}) {
  return detail::build_grid(d, n, false, limits);
}

/// Ball of word radius R in the Cayley graph of the discrete Heisenberg group
/// on generators X, Y. With scale = 1: counting measure and unit weights.
/// A scale h < 1 applies the homogeneous dilation (mu = h^4, w = h^2, metric
/// times h) so that refining R resolves a fixed region.
inline Space build_heisenberg_lattice(int radius, double scale = 1.0, const SpaceLimits& limits = {}) {
  require(radius >= 1, "lattice radius must be at least 1");
  require(scale > 0, "lattice scale must be positive");
  // |B(e,R)| grows like 0.14 R^4.
  const double estimate = 0.15 * std::pow(static_cast<double>(radius) + 1.0, 4);
  if (radius > 80 || estimate > static_cast<double>(limits.max_nodes))
    throw BudgetError("lattice radius too large", estimate);
  auto ball = heisenberg_ball(radius);
  const Index n = static_cast<Index>(ball.size());
  std::unordered_map<HeisenbergElement, Index, HeisenbergHash> index;
  index.reserve(ball.size());
  std::vector<HeisenbergElement> group;
  std::vector<int> length;
  std::vector<double> coords;
  for (Index i = 0; i < n; ++i) {
    const auto& [g, d] = ball[static_cast<std::size_t>(i)];
    index.emplace(g, i);
    group.push_back(g);
    length.push_back(d);
    coords.push_back(static_cast<double>(g.a));
    coords.push_back(static_cast<double>(g.b));
    coords.push_back(static_cast<double>(g.c));
  }
  std::vector<Space::Edge> edges;
  const double w = scale * scale;
  for (Index i = 0; i < n; ++i) {
    for (const auto& s : {HeisenbergElement{1, 0, 0}, HeisenbergElement{0, 1, 0}}) {
      const auto it = index.find(group[static_cast<std::size_t>(i)] * s);
      if (it != index.end()) edges.push_back({i, it->second, w});
    }
  }
  Eigen::VectorXd mu = Eigen::VectorXd::Constant(n, std::pow(scale, 4));
  return Space::assemble(SpaceKind::Heisenberg, 3, std::move(coords), std::move(mu), edges, 4.0,
                         scale, radius, {}, std::move(group), std::move(length));
}

/// Restriction of a space to a node subset with the induced edges (the
/// Neumann restriction). Returns the subspace and the map new -> old ids.
inline std::pair<Space, std::vector<Index>> restrict_space(const Space& space, std::span<const Index> nodes) {
  require(!nodes.empty(), "restriction needs nodes");
  std::vector<Index> old_to_new(static_cast<std::size_t>(space.size()), -1);
  std::vector<Index> new_to_old(nodes.begin(), nodes.end());
  std::sort(new_to_old.begin(), new_to_old.end());
  new_to_old.erase(std::unique(new_to_old.begin(), new_to_old.end()), new_to_old.end());
  for (std::size_t k = 0; k < new_to_old.size(); ++k) old_to_new[static_cast<std::size_t>(new_to_old[k])] = static_cast<Index>(k);
  const Index m = static_cast<Index>(new_to_old.size());
  Eigen::VectorXd mu(m);
  std::vector<Space::Edge> edges;
  for (Index k = 0; k < m; ++k) {
    const Index x = new_to_old[static_cast<std::size_t>(k)];
    mu[k] = space.mu()[x];
    for (SparseMatrix::InnerIterator it(space.weights(), x); it; ++it) {
      const Index y = old_to_new[static_cast<std::size_t>(it.col())];
      if (y > k) edges.push_back({k, y, it.value()});
    }
  }
  std::vector<double> table(static_cast<std::size_t>(m * m));
  for (Index a = 0; a < m; ++a)
    for (Index b = 0; b < m; ++b)
      table[static_cast<std::size_t>(a * m + b)] = space.distance(new_to_old[static_cast<std::size_t>(a)], new_to_old[static_cast<std::size_t>(b)]);
  auto sub = Space::assemble(SpaceKind::Graph, 0, {}, std::move(mu), edges, space.ambient_dim(),
                             space.spacing(), 0, std::move(table));
  return {std::move(sub), std::move(new_to_old)};
}

// Generator and carre du champ ---------------------------------------------

/// Lf(x) = (1/mu(x)) sum_y w(x,y) (f(y) - f(x)).
inline NodeFunction apply_generator(const Space& space, const NodeFunction& f) {
  require(f.size() == space.size(), "function size does not match space");
  NodeFunction wf = space.weights() * f;
  return (wf.array() - space.degree().array() * f.array()) / space.mu().array();
}

/// Gamma(f,g)(x) = (1/(2 mu(x))) sum_y w(x,y) (f(y)-f(x)) (g(y)-g(x)).
inline NodeFunction carre_du_champ(const Space& space, const NodeFunction& f, const NodeFunction& g) {
  require(f.size() == space.size() && g.size() == space.size(), "function size does not match space");
  NodeFunction out(space.size());
  for (Index x = 0; x < space.size(); ++x) {
    double s = 0;
    for (SparseMatrix::InnerIterator it(space.weights(), x); it; ++it)
      s += it.value() * (f[it.col()] - f[x]) * (g[it.col()] - g[x]);
    out[x] = 0.5 * s / space.mu()[x];
  }
  return out;
}

inline NodeFunction carre_du_champ(const Space& space, const NodeFunction& f) {
  return carre_du_champ(space, f, f);
}

/// Gamma(f,g) through the generator: (L(fg) - f Lg - g Lf) / 2.
inline NodeFunction carre_du_champ_from_generator(const Space& space, const NodeFunction& f,
                                                  const NodeFunction& g) {
  const NodeFunction fg = f.cwiseProduct(g);
  return 0.5 * (apply_generator(space, fg) - f.cwiseProduct(apply_generator(space, g)) -
                g.cwiseProduct(apply_generator(space, f)));
}

/// <f, g>_mu.
inline double inner(const Space& space, const NodeFunction& f, const NodeFunction& g) {
  return (f.array() * g.array() * space.mu().array()).sum();
}

/// Dirichlet form E(f,g) = -<Lf, g>_mu.
inline double dirichlet_form(const Space& space, const NodeFunction& f, const NodeFunction& g) {
  return -inner(space, apply_generator(space, f), g);
}

/// ||(lambda - L) f||_p, the graph norm on the domain of the generator.
inline double domain_norm(const Space& space, const NodeFunction& f, double lambda, double p) {
  const NodeFunction r = lambda * f - apply_generator(space, f);
  return lp_norm(r, space.mu(), p);
}

// Volume growth -----------------------------------------------------------

/// mu(B(x, r)) for closed balls, one value per radius.
inline std::vector<double> ball_measures(const Space& space, Index x, std::span<const double> radii) {
  const Eigen::VectorXd d = space.distances_from(x);
  std::vector<double> out(radii.size(), 0.0);
  for (Index y = 0; y < space.size(); ++y)
    for (std::size_t k = 0; k < radii.size(); ++k)
      if (d[y] <= radii[k] * (1 + 1e-12)) out[k] += space.mu()[y];
  return out;
}

struct DoublingProfile {
  std::vector<double> radii;
  /// max over centres of mu(B(x,2r)) / mu(B(x,r)), per radius.
  std::vector<double> ratio;
  /// slope of log mu(B(x0,r)) against log r (x0 = node 0).
  double growth_exponent = 0.0;
  double fit_residual = 0.0;
};

/// Doubling ratios over `centers` (all nodes when empty) and the growth
/// exponent at node 0.
inline DoublingProfile doubling_profile(const Space& space, std::vector<double> radii,
                                        std::vector<Index> centers = {}) {
  require(!radii.empty(), "doubling profile needs at least one radius");
  for (double r : radii) require(r > 0, "radii must be positive");
  if (centers.empty()) {
    centers.resize(static_cast<std::size_t>(space.size()));
    std::iota(centers.begin(), centers.end(), Index{0});
  }
  DoublingProfile out;
  out.radii = radii;
  out.ratio.assign(radii.size(), 0.0);
  std::vector<double> both(radii);
  for (double r : radii) both.push_back(2 * r);
  for (Index x : centers) {
    const auto m = ball_measures(space, x, both);
    for (std::size_t k = 0; k < radii.size(); ++k)
      out.ratio[k] = std::max(out.ratio[k], m[k + radii.size()] / m[k]);
  }
  const auto m0 = ball_measures(space, 0, radii);
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < radii.size(); ++k) {
    lx.push_back(std::log(radii[k]));
    ly.push_back(std::log(m0[k]));
  }
  if (radii.size() >= 2 && lx.front() != lx.back()) {
    const auto fit = fit_line(lx, ly);
    out.growth_exponent = fit.slope;
    out.fit_residual = fit.residual;
  }
  return out;
}

// Serialization -----------------------------------------------------------
//
// Layout (little-endian, all counts u64 unless noted):
//   "CAPLABSP" | u32 version=1 | u32 kind | u64 N | u32 coord_dim |
//   f64 ambient_dim | f64 spacing | i64 side | f64 diameter |
//   f64[N*coord_dim] coords | f64[N] mu | u64 nnz | (u64 row, u64 col, f64 w)[nnz]
//   in row-major CSR order | kind-specific tail:
//     Heisenberg: (i64 a, i64 b, i64 c, i32 word_length)[N]
//     Graph:      f64[N*N] distance table
// The content hash is FNV-1a over every byte after the magic.

namespace detail {

template <class T>
void put(std::ostream& out, const T& v, ContentHash* h) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  if (h) h->update_value(v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InvalidArgument("truncated space file");
  return v;
}

class NullBuffer : public std::streambuf {
protected:
  int overflow(int c) override { return c; }
};

}  // namespace detail

inline void Space::serialize(std::ostream& out) const {
  ContentHash* h = nullptr;
  out.write("CAPLABSP", 8);
  detail::put<std::uint32_t>(out, 1, h);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(kind_), h);
  detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(size()), h);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(coord_dim_), h);
  detail::put<double>(out, ambient_dim_, h);
  detail::put<double>(out, spacing_, h);
  detail::put<std::int64_t>(out, side_, h);
  detail::put<double>(out, diameter_, h);
  for (double c : coords_) detail::put<double>(out, c, h);
  for (Index x = 0; x < size(); ++x) detail::put<double>(out, mu_[x], h);
  detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(weights_.nonZeros()), h);
  for (Index x = 0; x < size(); ++x)
    for (SparseMatrix::InnerIterator it(weights_, x); it; ++it) {
      detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(x), h);
      detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(it.col()), h);
      detail::put<double>(out, it.value(), h);
    }
  if (kind_ == SpaceKind::Heisenberg) {
    for (std::size_t i = 0; i < group_.size(); ++i) {
      detail::put(out, group_[i].a, h);
      detail::put(out, group_[i].b, h);
      detail::put(out, group_[i].c, h);
      detail::put<std::int32_t>(out, word_length_[i], h);
    }
  } else if (kind_ == SpaceKind::Graph) {
    for (double t : table_) detail::put<double>(out, t, h);
  }
}

inline std::uint64_t Space::content_hash() const {
  struct HashBuf : std::streambuf {
    ContentHash h;
    std::streamsize xsputn(const char* s, std::streamsize n) override {
      h.update(s, static_cast<std::size_t>(n));
      return n;
    }
    int overflow(int c) override {
      const char ch = static_cast<char>(c);
      h.update(&ch, 1);
      return c;
    }
  } buf;
  std::ostream os(&buf);
  serialize(os);
  return buf.h.digest();
}

inline Space Space::deserialize(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "CAPLABSP", 8) != 0) throw InvalidArgument("not a space file");
  if (detail::get<std::uint32_t>(in) != 1) throw InvalidArgument("unsupported space file version");
  const auto kind = static_cast<SpaceKind>(detail::get<std::uint32_t>(in));
  const auto n = static_cast<Index>(detail::get<std::uint64_t>(in));
  const auto cdim = static_cast<int>(detail::get<std::uint32_t>(in));
  const double ambient = detail::get<double>(in);
  const double spacing = detail::get<double>(in);
  const auto side = detail::get<std::int64_t>(in);
  const double diameter = detail::get<double>(in);
  std::vector<double> coords(static_cast<std::size_t>(n * cdim));
  for (auto& c : coords) c = detail::get<double>(in);
  Eigen::VectorXd mu(n);
  for (Index x = 0; x < n; ++x) mu[x] = detail::get<double>(in);
  const auto nnz = detail::get<std::uint64_t>(in);
  std::vector<Edge> edges;
  for (std::uint64_t k = 0; k < nnz; ++k) {
    const auto i = static_cast<Index>(detail::get<std::uint64_t>(in));
    const auto j = static_cast<Index>(detail::get<std::uint64_t>(in));
    const double w = detail::get<double>(in);
    if (i < j) edges.push_back({i, j, w});
  }
  std::vector<double> table;
  std::vector<HeisenbergElement> group;
  std::vector<int> length;
  if (kind == SpaceKind::Heisenberg) {
    for (Index x = 0; x < n; ++x) {
      HeisenbergElement g;
      g.a = detail::get<std::int64_t>(in);
      g.b = detail::get<std::int64_t>(in);
      g.c = detail::get<std::int64_t>(in);
      group.push_back(g);
      length.push_back(detail::get<std::int32_t>(in));
    }
  } else if (kind == SpaceKind::Graph) {
    table.resize(static_cast<std::size_t>(n * n));
    for (auto& t : table) t = detail::get<double>(in);
  }
  return assemble(kind, cdim, std::move(coords), std::move(mu), edges, ambient, spacing, side,
                  std::move(table), std::move(group), std::move(length), diameter);
}

/// Writes `space_<hash>.bin` into `dir` and returns the path.
inline std::string save_space(const Space& space, const std::string& dir) {
  const std::string path = dir + "/space_" + hex64(space.hash()) + ".bin";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  space.serialize(out);
  return path;
}

inline Space load_space(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return Space::deserialize(in);
}

}  // namespace caplab
