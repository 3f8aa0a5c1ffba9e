#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

using namespace caplab;
using std::numbers::pi;

namespace {

void expect_generator_invariants(const Space& s, unsigned seed) {
  const Eigen::VectorXd f = oracle::random_function(s.size(), seed);
  const Eigen::VectorXd g = oracle::random_function(s.size(), seed + 1);
  const double lf_g = inner(s, apply_generator(s, f), g);
  const double f_lg = inner(s, f, apply_generator(s, g));
  const double scale = std::abs(lf_g) + std::abs(f_lg) + 1e-300;
  EXPECT_LE(std::abs(lf_g - f_lg) / scale, 1e-12);
  const NodeFunction l1 = apply_generator(s, Eigen::VectorXd::Ones(s.size()));
  EXPECT_EQ(l1.cwiseAbs().maxCoeff(), 0.0);
  const double lff = inner(s, apply_generator(s, f), f);
  EXPECT_LE(lff, 1e-12 * std::abs(lff));
  for (Index x = 0; x < s.size(); ++x) EXPECT_GT(s.mu()[x], 0.0);
  const Eigen::MatrixXd w = Eigen::MatrixXd(s.weights());
  EXPECT_EQ((w - w.transpose()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(w.diagonal().cwiseAbs().maxCoeff(), 0.0);
}

}  // namespace

TEST(TorusGrid, SmallestTorus) {
  const auto s = build_torus_grid(1, 2);
  ASSERT_EQ(s.size(), 2);
  EXPECT_DOUBLE_EQ(s.mu()[0], 0.5);
  EXPECT_DOUBLE_EQ(s.mu()[1], 0.5);
  EXPECT_EQ(s.weights().nonZeros(), 2);
  EXPECT_DOUBLE_EQ(s.distance(0, 1), 0.5);
}

TEST(TorusGrid, TotalMassAndDegree) {
  const auto s = build_torus_grid(2, 3);
  ASSERT_EQ(s.size(), 9);
  EXPECT_NEAR(s.total_mass(), 1.0, 1e-15);
  for (Index x = 0; x < 9; ++x) {
    Index neighbours = 0;
    for (SparseMatrix::InnerIterator it(s.weights(), x); it; ++it) ++neighbours;
    EXPECT_EQ(neighbours, 4);
  }
}

TEST(TorusGrid, RowMajorIndexing) {
  const auto s = build_torus_grid(3, 4);
  const auto c = s.coords(1 * 16 + 2 * 4 + 3);
  EXPECT_DOUBLE_EQ(c[0], 0.25);
  EXPECT_DOUBLE_EQ(c[1], 0.5);
  EXPECT_DOUBLE_EQ(c[2], 0.75);
}

TEST(TorusGrid, SineIsApproximateEigenfunction) {
  const auto s = build_torus_grid(3, 8);
  const auto f = oracle::sample(s, [](auto c) { return std::sin(2 * pi * c[0]); });
  const NodeFunction lf = apply_generator(s, f);
  const double rel = (lf + 4 * pi * pi * f).norm() / (4 * pi * pi * f.norm());
  EXPECT_LE(rel, 0.1);
  // discrete eigenvalue 2 n^2 (1 - cos(2 pi / n)) at n = 8
  EXPECT_NEAR((lf + 37.490332 * f).cwiseAbs().maxCoeff(), 0.0, 1e-5);
}

TEST(TorusGrid, FlatTorusMetricWraps) {
  const auto s = build_torus_grid(2, 10);
  EXPECT_NEAR(s.distance(0, 9), 0.1, 1e-15);
  EXPECT_NEAR(s.distance(0, 5 * 10 + 5), std::sqrt(0.5), 1e-15);
}

TEST(TorusGrid, RejectsBadArguments) {
  EXPECT_THROW(build_torus_grid(0, 4), InvalidArgument);
  EXPECT_THROW(build_torus_grid(6, 4), InvalidArgument);
  EXPECT_THROW(build_torus_grid(2, 1), InvalidArgument);
  EXPECT_THROW(build_torus_grid(5, 40), BudgetError);
}

TEST(BoxGrid, NeumannDegrees) {
  const auto s = build_box_grid(1, 3);
  EXPECT_DOUBLE_EQ(s.degree()[0] / std::pow(1.0 / 3, -1), 1.0);
  EXPECT_DOUBLE_EQ(s.degree()[1] / std::pow(1.0 / 3, -1), 2.0);
  EXPECT_DOUBLE_EQ(s.degree()[2] / std::pow(1.0 / 3, -1), 1.0);
  EXPECT_EQ(apply_generator(s, Eigen::VectorXd::Constant(3, 2.5)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(BoxGrid, NeumannRayleighQuotient) {
  const auto s = build_box_grid(2, 16);
  const auto f = oracle::sample(s, [](auto c) { return std::cos(pi * c[0]); });
  const double q = dirichlet_form(s, f, f) / inner(s, f, f);
  EXPECT_NEAR(q / (pi * pi), 1.0, 0.05);
  // cell-centred cosines are exact discrete eigenvectors: 2 n^2 (1 - cos(pi/n))
  EXPECT_NEAR(q, 9.8379364, 1e-6);
}

TEST(Heisenberg, BallSizes) {
  const std::vector<Index> sizes{1, 5, 17, 53, 135, 299};
  for (int r = 1; r <= 5; ++r) EXPECT_EQ(build_heisenberg_lattice(r).size(), sizes[static_cast<std::size_t>(r)]);
}

TEST(Heisenberg, WordMetric) {
  const auto s = build_heisenberg_lattice(4);
  EXPECT_EQ(s.distance(0, 0), 0.0);
  EXPECT_EQ(s.distance(7, 7), 0.0);
  // group product: [X, Y] = (0, 0, 1) has word length 4
  const auto& g = s.group_elements();
  for (Index i = 0; i < s.size(); ++i) {
    if (g[static_cast<std::size_t>(i)] == HeisenbergElement{0, 0, 1}) {
      EXPECT_EQ(s.distance(0, i), 4.0);
    }
  }
  // independent BFS from a non-identity node over the group
  const Index x = 9;
  const auto ball = heisenberg_ball(8);
  for (Index y = 0; y < s.size(); ++y) {
    const auto target = g[static_cast<std::size_t>(x)].inverse() * g[static_cast<std::size_t>(y)];
    const auto it = std::find_if(ball.begin(), ball.end(), [&](auto& e) { return e.first == target; });
    ASSERT_NE(it, ball.end());
    EXPECT_EQ(s.distance(x, y), it->second);
    EXPECT_EQ(s.distance(x, y), s.distance(y, x));
  }
}

TEST(Heisenberg, ScaledVariant) {
  const auto s = build_heisenberg_lattice(3, 0.5);
  EXPECT_DOUBLE_EQ(s.mu()[0], 0.0625);
  EXPECT_DOUBLE_EQ(s.distance(0, 1), 0.5);
  EXPECT_THROW(build_heisenberg_lattice(0), InvalidArgument);
  EXPECT_THROW(build_heisenberg_lattice(200), BudgetError);
}

TEST(Generator, TwoNodeAndPath) {
  const auto two = oracle::two_node();
  const NodeFunction l = apply_generator(two, Eigen::Vector2d(1, 0));
  EXPECT_DOUBLE_EQ(l[0], -1.0);
  EXPECT_DOUBLE_EQ(l[1], 1.0);
  const auto p = oracle::path(3);
  EXPECT_DOUBLE_EQ(apply_generator(p, Eigen::Vector3d(0, 1, 0))[1], -2.0);
}

TEST(Generator, MatchesDenseMatrix) {
  const auto s = build_torus_grid(2, 5);
  const Eigen::VectorXd f = oracle::random_function(s.size(), 3);
  EXPECT_LE((apply_generator(s, f) - oracle::dense_generator(s) * f).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Generator, InvariantsOnEveryBuiltSpace) {
  expect_generator_invariants(build_torus_grid(1, 16), 1);
  expect_generator_invariants(build_torus_grid(3, 6), 2);
  expect_generator_invariants(build_torus_grid(5, 4), 3);
  expect_generator_invariants(build_box_grid(2, 9), 4);
  expect_generator_invariants(build_heisenberg_lattice(5), 5);
  expect_generator_invariants(build_heisenberg_lattice(4, 0.25), 6);
  expect_generator_invariants(oracle::path(7), 7);
}

TEST(CarreDuChamp, Examples) {
  const auto two = oracle::two_node();
  const Eigen::Vector2d f(0, 1);
  const NodeFunction g = carre_du_champ(two, f);
  EXPECT_DOUBLE_EQ(g[0], 0.5);
  EXPECT_DOUBLE_EQ(g[1], 0.5);
  const auto s = build_torus_grid(2, 6);
  EXPECT_EQ(carre_du_champ(s, Eigen::VectorXd::Constant(36, 3.0), oracle::random_function(36, 1)).cwiseAbs().maxCoeff(),
            0.0);
}

TEST(CarreDuChamp, DirectFormulaMatchesOperatorCombination) {
  for (const auto& s : {build_torus_grid(2, 8), build_box_grid(3, 5), build_heisenberg_lattice(4)}) {
    const Eigen::VectorXd f = oracle::random_function(s.size(), 11);
    const Eigen::VectorXd g = oracle::random_function(s.size(), 12);
    const NodeFunction direct = carre_du_champ(s, f, g);
    const NodeFunction op = carre_du_champ_from_generator(s, f, g);
    EXPECT_LE((direct - op).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, direct.cwiseAbs().maxCoeff()));
    EXPECT_NEAR(inner(s, carre_du_champ(s, f, g), Eigen::VectorXd::Ones(s.size())),
                -inner(s, apply_generator(s, f), g), 1e-10 * std::abs(inner(s, apply_generator(s, f), g)));
  }
}

TEST(CarreDuChamp, DirichletIntegralConvergesAtSecondOrder) {
  // continuum integral of |d/dx exp(sin 2 pi x)|^2 by the periodic trapezoid rule
  double exact = 0;
  const int m = 200000;
  for (int i = 0; i < m; ++i) {
    const double x = static_cast<double>(i) / m;
    const double d = 2 * pi * std::cos(2 * pi * x) * std::exp(std::sin(2 * pi * x));
    exact += d * d / m;
  }
  std::vector<double> lh, le;
  for (Index n : {8, 16, 32, 64}) {
    const auto s = build_torus_grid(2, n);
    const auto f = oracle::sample(s, [](auto c) { return std::exp(std::sin(2 * pi * c[0])); });
    lh.push_back(std::log(1.0 / static_cast<double>(n)));
    le.push_back(std::log(std::abs(dirichlet_form(s, f, f) - exact)));
  }
  EXPECT_GE(fit_line(lh, le).slope, 1.7);
}

TEST(DoublingProfile, TorusIsTwoDimensional) {
  const auto s = build_torus_grid(2, 64);
  const double h = s.spacing();
  const auto prof = doubling_profile(s, {4 * h, 6 * h, 8 * h}, {0, 100, 2000});
  for (double r : prof.ratio) EXPECT_NEAR(r, 4.0, 0.35);
  const auto growth = doubling_profile(s, {4 * h, 8 * h, 12 * h, 16 * h}, {0});
  EXPECT_NEAR(growth.growth_exponent, 2.0, 0.1);
}

TEST(DoublingProfile, SingleNodeAndErrors) {
  const auto s = oracle::single(2.0);
  const auto prof = doubling_profile(s, {0.5, 1.0, 2.0});
  for (double r : prof.ratio) EXPECT_DOUBLE_EQ(r, 1.0);
  EXPECT_THROW(doubling_profile(s, {}), InvalidArgument);
}

TEST(DoublingProfile, HeisenbergHomogeneousDimension) {
  const int r = 16;
  const auto s = build_heisenberg_lattice(r);
  std::vector<double> radii;
  for (int k = r / 4; k <= r / 2; ++k) radii.push_back(k);
  const auto prof = doubling_profile(s, radii, {0});
  EXPECT_NEAR(prof.growth_exponent, 4.0, 0.3);
}

TEST(Serialization, RoundTripPreservesContentAndHash) {
  for (const auto& s : {build_torus_grid(2, 5), build_box_grid(1, 7), build_heisenberg_lattice(3), oracle::path(4)}) {
    std::stringstream buf;
    s.serialize(buf);
    const auto back = Space::deserialize(buf);
    EXPECT_EQ(back.hash(), s.hash());
    EXPECT_EQ(back.size(), s.size());
    EXPECT_EQ((Eigen::MatrixXd(back.weights()) - Eigen::MatrixXd(s.weights())).cwiseAbs().maxCoeff(), 0.0);
    for (Index x = 0; x < s.size(); ++x) EXPECT_EQ(back.distance(0, x), s.distance(0, x));
  }
  EXPECT_NE(build_torus_grid(2, 5).hash(), build_box_grid(2, 5).hash());
  EXPECT_EQ(build_torus_grid(2, 5).hash(), build_torus_grid(2, 5).hash());
}

TEST(Restriction, InducedNeumannSubgraph) {
  const auto s = build_torus_grid(1, 8);
  const std::vector<Index> nodes{2, 3, 4};
  const auto [sub, map] = restrict_space(s, nodes);
  EXPECT_EQ(sub.size(), 3);
  EXPECT_EQ(apply_generator(sub, Eigen::VectorXd::Ones(3)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_DOUBLE_EQ(sub.distance(0, 2), 0.25);
  EXPECT_EQ(map[1], 3);
}
