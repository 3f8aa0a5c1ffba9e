#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace caplab;

namespace {

std::vector<Index> random_set(Index n, int count, unsigned seed) { return oracle::random_nodes(n, count, seed); }

Index nearest(const Space& s, std::vector<double> p) { return detail::snap_point(s, p); }

}  // namespace

TEST(Cap, SingleNodeClosedForm) {
  for (double m : {0.5, 1.0, 3.0}) {
    const auto s = oracle::single(m);
    const auto primal = cap_primal(s, {0}, 2.0, 2.0);
    EXPECT_NEAR(primal.primal, 4 * m, 1e-12 * m);
    EXPECT_NEAR(primal.f_star[0], 2.0, 1e-12);
    const auto dual = cap_dual(s, {0}, 2.0, 2.0);
    EXPECT_NEAR(dual.dual, 4 * m, 1e-12 * m);
    EXPECT_NEAR(dual.nu_star.mass()[0], 2 * std::sqrt(m), 1e-12);
    EXPECT_NEAR(ccap(s, {0}, 2.0, 2.0).primal, 4 * m, 1e-12 * m);
    EXPECT_NEAR(ccap_distributional(s, {0}, 2.0, 2.0), 4 * m, 1e-12 * m);
  }
}

TEST(Cap, TwoNodeClosedForm) {
  const auto s = oracle::two_node();
  const auto r = cap_primal(s, {0}, 2.0, 2.0);
  EXPECT_NEAR(r.primal, 6.4, 1e-10);
  EXPECT_NEAR(r.f_star[0], 2.4, 1e-10);
  EXPECT_NEAR(r.f_star[1], 0.8, 1e-10);
  EXPECT_LE(r.gap, 1e-6);
  EXPECT_TRUE(r.converged);
  const auto d = cap_dual(s, {0}, 2.0, 2.0);
  EXPECT_NEAR(d.dual, 6.4, 1e-10);
  ASSERT_EQ(d.nu_star.atoms(), 1u);
  EXPECT_EQ(d.nu_star.support()[0], 0);
  EXPECT_NEAR(d.nu_star.mass()[0], 8 / std::sqrt(10.0), 1e-10);
}

TEST(Cap, EmptySet) {
  const auto s = oracle::two_node();
  const auto r = cap_primal(s, {}, 2.0, 2.0);
  EXPECT_EQ(r.primal, 0.0);
  EXPECT_TRUE(r.f_star.isZero(0.0));
  EXPECT_EQ(cap_dual(s, {}, 2.0, 2.0).dual, 0.0);
  EXPECT_EQ(ccap_distributional(s, {}, 2.0, 2.0), 0.0);
  EXPECT_THROW(ccap(s, {}, 2.0, 2.0), InvalidArgument);
  EXPECT_THROW(cap_primal(s, {0}, 1.0, 2.0), InvalidArgument);
}

TEST(Cap, DualityGapTorus) {
  const auto s = build_torus_grid(2, 16);
  for (unsigned seed : {1u, 2u, 3u}) {
    const auto set = random_set(s.size(), 5, seed);
    const auto pr = CapacityProblem::global(s, set, 2.0);
    const auto primal = cap_primal(pr, 2.0);
    const auto dual = cap_dual(pr, 2.0);
    EXPECT_LE(primal.gap, 1e-6);
    EXPECT_LE(relative_gap(primal.primal, dual.dual), 0.01);
    EXPECT_GE(primal.primal, dual.dual * (1 - 1e-9));
    EXPECT_TRUE((primal.f_star.array() >= 0).all());
    for (Index x : primal.nu_star.support()) EXPECT_TRUE(std::binary_search(pr.set().begin(), pr.set().end(), x));
    // f* is admissible: G f* >= 1 on K
    const auto u = resolvent_apply(s, primal.f_star, 2.0);
    for (Index x : pr.set()) EXPECT_GE(u[x], 1 - 1e-9);
    const auto p15 = cap_primal(pr, 1.5);
    const auto d15 = cap_dual(pr, 1.5);
    EXPECT_LE(p15.gap, 0.03);
    EXPECT_LE(relative_gap(std::min(p15.primal, d15.primal), std::max(p15.dual, d15.dual)), 0.03);
  }
}

TEST(Cap, PrimalMatchesDenseQuadraticProgram) {
  const auto s = build_torus_grid(1, 12);
  const std::vector<Index> set{2, 5};
  std::vector<Eigen::VectorXd> cols;
  for (Index x : set) {
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(s.size());
    delta[x] = 1 / s.mu()[x];
    cols.push_back(oracle::dense_resolvent(s, delta, 2.0));
  }
  Eigen::Matrix2d gram;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) gram(a, b) = (cols[a].array() * cols[b].array() * s.mu().array()).sum();
  const Eigen::Vector2d nu = gram.ldlt().solve(Eigen::Vector2d::Ones());
  ASSERT_TRUE(nu.minCoeff() > 0);
  EXPECT_NEAR(cap_primal(s, set, 2.0, 2.0).primal, nu.sum(), 1e-9 * nu.sum());
}

TEST(CCap, ClosedFormsAndPinning) {
  const auto s = build_torus_grid(2, 8);
  std::vector<Index> all(static_cast<std::size_t>(s.size()));
  std::iota(all.begin(), all.end(), Index{0});
  EXPECT_NEAR(ccap(s, all, 2.0, 2.0).primal, 4 * s.total_mass(), 1e-10);
  EXPECT_NEAR(ccap(s, all, 3.0, 2.0).primal, 8 * s.total_mass(), 1e-10);
  const auto r = ccap(s, {9}, 2.0, 2.0, 1);
  EXPECT_LE(r.gap, 1e-9);
  EXPECT_EQ(r.nbhd_radius, 1);
  for (Index x : hop_neighborhood(s, std::vector<Index>{9}, 1)) EXPECT_DOUBLE_EQ(r.f_star[x], 1.0);
  EXPECT_EQ(hop_neighborhood(s, std::vector<Index>{9}, 1).size(), 5u);
  // a larger pinned set costs more
  EXPECT_LT(ccap(s, {9}, 2.0, 2.0, 0).primal, r.primal);
}

TEST(CCap, GeneralPMatchesDistributional) {
  const auto s = build_torus_grid(2, 8);
  const std::vector<Index> set{9, 27};
  for (double p : {1.5, 3.0}) {
    const auto r = ccap(s, set, p, 2.0, 0);
    const double d = ccap_distributional(s, set, p, 2.0);
    EXPECT_LE(r.gap, 1e-4) << p;
    EXPECT_NEAR(r.primal, d, 1e-3 * d) << p;
  }
}

TEST(CCap, DistributionalEqualsPinnedAtRadiusZero) {
  const auto two = oracle::two_node();
  EXPECT_NEAR(ccap_distributional(two, {0}, 2.0, 2.0), ccap(two, {0}, 2.0, 2.0, 0).primal, 1e-8);
  const auto s = build_box_grid(2, 12);
  for (unsigned seed : {4u, 5u}) {
    const auto set = random_set(s.size(), 4, seed);
    const double d = ccap_distributional(s, set, 2.0, 2.0);
    EXPECT_NEAR(d, ccap(s, set, 2.0, 2.0, 0).primal, 1e-8 * d);
  }
  EXPECT_THROW(ccap_distributional(build_torus_grid(2, 32), {0}, 2.0, 2.0), InvalidArgument);
}

TEST(Capacity, MonotoneSubadditiveAndFirstComparison) {
  const auto s = build_torus_grid(2, 12);
  const std::vector<Index> k1{3, 40}, k2{3, 40, 77}, k3{100, 121};
  std::vector<Index> k13 = k1;
  k13.insert(k13.end(), k3.begin(), k3.end());
  const double c1 = cap_primal(s, k1, 2.0, 2.0).primal;
  const double c2 = cap_primal(s, k2, 2.0, 2.0).primal;
  const double c3 = cap_primal(s, k3, 2.0, 2.0).primal;
  const double c13 = cap_primal(s, k13, 2.0, 2.0).primal;
  EXPECT_LE(c1, c2 * (1 + 1e-6));
  EXPECT_LE(c13, (c1 + c3) * (1 + 1e-6));
  EXPECT_LE(ccap(s, k1, 2.0, 2.0).primal, ccap(s, k2, 2.0, 2.0).primal * (1 + 1e-9));
  for (const auto& k : {k1, k2, k3, k13}) {
    for (Index r : {0, 1}) {
      EXPECT_LE(cap_primal(s, k, 2.0, 2.0).primal, ccap(s, k, 2.0, 2.0, r).primal * (1 + 1e-6));
      EXPECT_LE(cap_primal(s, k, 1.5, 2.0).primal, ccap(s, k, 1.5, 2.0, r).primal * (1 + 1e-3));
    }
  }
}

TEST(Capacity, SecondComparisonBounded) {
  std::vector<double> ratios;
  for (Index n : {8, 16, 32}) {
    const auto s = build_torus_grid(2, n);
    const std::vector<Index> set{nearest(s, {0.5, 0.5}), nearest(s, {0.25, 0.75})};
    ratios.push_back(ccap(s, set, 2.0, 2.0).primal / cap_primal(s, set, 2.0, 2.0).primal);
  }
  for (double r : ratios) {
    EXPECT_GE(r, 1.0 - 1e-9);
    EXPECT_LE(r, 20.0);
  }
  EXPECT_LE(*std::max_element(ratios.begin(), ratios.end()) / *std::min_element(ratios.begin(), ratios.end()), 2.0);
}

TEST(CapLocal, DomainAndPreconditions) {
  const auto s = build_box_grid(2, 16);
  std::vector<Index> all(static_cast<std::size_t>(s.size())), quarter;
  std::iota(all.begin(), all.end(), Index{0});
  for (Index x = 0; x < s.size(); ++x) {
    const auto c = s.coords(x);
    if (c[0] >= 0.25 && c[0] <= 0.75 && c[1] >= 0.25 && c[1] <= 0.75) quarter.push_back(x);
  }
  const auto dom = make_domain(s, all, quarter);
  EXPECT_NEAR(dom.T, std::pow(4.5 / 16, 2), 1e-12);
  EXPECT_EQ(cap_local(s, dom, {}, 2.0, 20.0).primal, 0.0);
  EXPECT_THROW(cap_local(s, dom, {nearest(s, {0.5, 0.5})}, 2.0, 2.0), InvalidArgument);
  EXPECT_THROW(cap_local(s, dom, {0}, 2.0, 20.0), InvalidArgument);
  EXPECT_THROW(make_domain(s, quarter, all), InvalidArgument);
}

TEST(CapLocal, OrderingAndRefinement) {
  std::vector<double> values;
  for (Index n : {16, 32, 64}) {
    const auto s = build_box_grid(2, n);
    std::vector<Index> all(static_cast<std::size_t>(s.size())), quarter;
    std::iota(all.begin(), all.end(), Index{0});
    for (Index x = 0; x < s.size(); ++x) {
      const auto c = s.coords(x);
      if (c[0] >= 0.25 && c[0] <= 0.75 && c[1] >= 0.25 && c[1] <= 0.75) quarter.push_back(x);
    }
    const auto dom = make_domain(s, all, quarter);
    const std::vector<Index> k{nearest(s, {0.5, 0.5})};
    const auto local = cap_local(s, dom, k, 2.0, 20.0);
    EXPECT_TRUE(std::isfinite(local.primal));
    EXPECT_LE(local.gap, 1e-6);
    EXPECT_GE(local.primal, cap_primal(s, k, 2.0, 20.0).primal * (1 - 1e-9));
    for (Index x = 0; x < s.size(); ++x)
      if (!std::binary_search(quarter.begin(), quarter.end(), x)) EXPECT_EQ(local.f_star[x], 0.0);
    values.push_back(local.primal);
  }
  // a point has positive capacity in d = 2: values settle with shrinking increments
  EXPECT_LT(std::abs(values[2] - values[1]), std::abs(values[1] - values[0]));
  EXPECT_LT(std::abs(values[2] - values[1]), 0.05 * values[2]);
}

TEST(CapLocal, TorusSubdomain) {
  const auto s = build_torus_grid(2, 16);
  const Index centre = nearest(s, {0.5, 0.5});
  std::vector<Index> ball, inner;
  const auto d = s.distances_from(centre);
  for (Index x = 0; x < s.size(); ++x) {
    if (d[x] <= 0.3) ball.push_back(x);
    if (d[x] <= 0.1) inner.push_back(x);
  }
  const auto dom = make_domain(s, ball, inner);
  EXPECT_GT(dom.T, 0.0);
  EXPECT_TRUE(std::isfinite(dom.T));
  const auto r = cap_local(s, dom, {centre}, 2.0, 2.0 / dom.T);
  EXPECT_GT(r.primal, 0.0);
  EXPECT_LE(r.gap, 1e-6);
}

TEST(Localization, CutoffBound) {
  const auto s = build_torus_grid(2, 16);
  const auto phi = pinned_cutoff(s, std::vector<Index>{nearest(s, {0.5, 0.5})}, 0.1, 0.3);
  EXPECT_DOUBLE_EQ(phi.maxCoeff(), 1.0);
  EXPECT_DOUBLE_EQ(phi.minCoeff(), 0.0);
  for (unsigned seed = 0; seed < 10; ++seed) {
    const auto v = oracle::random_function(s.size(), seed, -1, 1);
    const auto c = localization_check(s, phi, v, 2.0);
    EXPECT_LE(c.lhs, c.rhs) << seed;
  }
}

TEST(DecayStudy, PointInFiveDimensions) {
  const auto study = decay_study({PointSet{{0.5, 0.5, 0.5, 0.5, 0.5}}, 5}, {4, 5, 6}, 2.0, 2.0);
  ASSERT_EQ(study.rows.size(), 3u);
  for (const auto& row : study.rows) {
    EXPECT_TRUE(row.ok);
    EXPECT_EQ(row.set_size, 1);
    EXPECT_LE(row.gap, 1e-6);
  }
  EXPECT_TRUE(std::isnan(study.rows[0].slope));
  EXPECT_LT(study.slope, 0.0);
  EXPECT_LT(study.rows[2].primal, study.rows[0].primal);
  EXPECT_THROW(decay_study({PointSet{}, 5}, {4, 5}, 2.0, 2.0), InvalidArgument);
  EXPECT_THROW(decay_study({PointSet{}, 5}, {4, 6, 5}, 2.0, 2.0), InvalidArgument);
}

TEST(DecayStudy, Classification) {
  EXPECT_EQ(classify_slope(-0.8), DecayClass::RemovableTrend);
  EXPECT_EQ(classify_slope(0.1), DecayClass::Plateau);
  EXPECT_EQ(classify_slope(-0.3), DecayClass::Indeterminate);
}
