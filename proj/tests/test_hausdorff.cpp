#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace caplab;

TEST(Gauge, Examples) {
  const HausdorffFn h2 = LogPowerGauge{2.0};
  EXPECT_DOUBLE_EQ(eval_gauge(h2, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(eval_gauge(h2, std::exp(-1.0)), 0.5);
  EXPECT_DOUBLE_EQ(eval_gauge(h2, 5.0), 1.0);
  EXPECT_DOUBLE_EQ(eval_gauge(h2, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(eval_gauge(PowerGauge{1.5}, 4.0), 8.0);
  EXPECT_DOUBLE_EQ(eval_gauge(PowerGauge{0.0}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(eval_gauge(PowerGauge{0.0}, 7.0), 1.0);
  EXPECT_DOUBLE_EQ(eval_gauge(LogExponentGauge{1.0}, std::exp(-3.0)), 1.0 / 16.0);
  EXPECT_THROW(eval_gauge(h2, -1.0), InvalidArgument);
}

TEST(Gauge, MonotoneAndDoubling) {
  for (const HausdorffFn& h : std::vector<HausdorffFn>{PowerGauge{0.0}, PowerGauge{0.63}, PowerGauge{2.0},
                                                       LogPowerGauge{2.0}, LogPowerGauge{4.0},
                                                       LogExponentGauge{0.0}, LogExponentGauge{1.0}}) {
    const auto c = check_gauge(h);
    EXPECT_TRUE(c.monotone);
    EXPECT_GE(c.doubling, 1.0);
    EXPECT_LT(c.doubling, 8.0);
  }
}

TEST(Condh, PowerConvergesToOne) {
  const auto a = condh_integral(PowerGauge{1.0}, 20);
  const auto b = condh_integral(PowerGauge{1.0}, 40);
  EXPECT_FALSE(b.divergent);
  EXPECT_NEAR(b.value, 1.0, 1e-9);
  EXPECT_LT(std::abs(b.value - 1.0), std::abs(a.value - 1.0) + 1e-15);
  // closed form of the truncated integral: 1 - 2^-D - D ln2 2^-D
  const double tail = std::ldexp(1.0, -20);
  EXPECT_NEAR(a.value, 1 - tail - 20 * std::log(2.0) * tail, 1e-12);
}

TEST(Condh, LogGaugeDivergesLogExponentConverges) {
  const auto h2 = condh_integral(LogPowerGauge{2.0}, 64);
  EXPECT_TRUE(h2.divergent);
  EXPECT_LE(h2.tail_exponent, 1.0);
  EXPECT_FALSE(h2.ratio_rule);
  const auto he = condh_integral(LogExponentGauge{1.0}, 64);
  EXPECT_FALSE(he.divergent);
  EXPECT_GT(he.tail_exponent, 1.5);
  // int_0^inf u d(-(1+u)^-2) = int_0^inf (1+u)^-2 du = 1
  EXPECT_NEAR(he.value, 1.0, 0.05);
  EXPECT_THROW(condh_integral(PowerGauge{1.0}, 4), InvalidArgument);
}

TEST(RealizeSet, Examples) {
  const auto t3 = build_torus_grid(3, 8);
  EXPECT_EQ(realize_set({PointSet{{0, 0, 0}}, 3}, t3), std::vector<Index>{0});
  const auto line = realize_set({KPlaneSet{1, {0.5, 0.25}}, 3}, t3);
  ASSERT_EQ(line.size(), 8u);
  for (Index x : line) {
    EXPECT_DOUBLE_EQ(t3.coords(x)[1], 0.5);
    EXPECT_DOUBLE_EQ(t3.coords(x)[2], 0.25);
  }
  EXPECT_EQ(realize_set({KPlaneSet{2, {}}, 3}, t3).size(), 64u);

  const auto t1 = build_torus_grid(1, 9);
  const auto dust = realize_set({CantorDustSet{1.0 / 3.0, 2, 1}, 1}, t1);
  EXPECT_EQ(dust, (std::vector<Index>{0, 2, 6, 8}));

  EXPECT_THROW(realize_set({PointSet{{0, 0}}, 2}, t3), InvalidArgument);
  EXPECT_THROW(realize_set({KPlaneSet{4, {}}, 3}, t3), InvalidArgument);
}

TEST(RealizeSet, DepthCapped) {
  const auto t = build_torus_grid(1, 16);
  const auto deep = realize_set({CantorDustSet{0.25, 10, 1}, 1}, t);
  EXPECT_LE(deep.size(), 16u);  // depth capped at log2(16) = 4
  const auto box = build_box_grid(2, 9);
  EXPECT_EQ(realize_set({CantorDustSet{1.0 / 3.0, 2, 2}, 2}, box).size(), 16u);
}

TEST(LogCantor, Scales) {
  const auto l = log_cantor_scales(1.0, 6);
  ASSERT_EQ(l.size(), 7u);
  for (std::size_t k = 1; k < l.size(); ++k) EXPECT_LE(l[k], 0.5 * l[k - 1] * (1 + 1e-15));
  // from level 4 on the schedule is unclamped and matches the gauge exactly
  for (std::size_t k = 4; k < l.size(); ++k)
    EXPECT_NEAR(eval_gauge(LogExponentGauge{1.0}, l[k]), std::ldexp(1.0, -static_cast<int>(k)), 1e-12);
}

TEST(LogCantor, FittedDimensionFallsWithDepth) {
  const double thirds = std::log(2.0) / std::log(3.0);
  for (auto [eps, first] : {std::pair{0.0, 4}, std::pair{1.0, 5}}) {
    double previous = 1.0;
    for (int depth = first; depth < first + 3; ++depth) {
      const double dim = dimension_fit(set_points({LogCantorSet{eps, depth}, 1})).dimension;
      EXPECT_LT(dim, previous) << eps << " " << depth;
      previous = dim;
    }
    EXPECT_LT(previous, thirds) << eps;
  }
}

TEST(NaturalMeasure, FrostmanBounded) {
  for (int depth : {4, 6, 8}) {
    const auto m = natural_measure({CantorDustSet{1.0 / 3.0, depth, 1}, 1});
    double total = 0;
    for (double v : m.mass) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_LE(m.frostman_ratio, 4.0) << depth;
    EXPECT_GT(m.frostman_ratio, 0.5);
  }
  const auto two = natural_measure({CantorDustSet{0.25, 4, 2}, 2});
  EXPECT_LE(two.frostman_ratio, 4.0);
  const auto lc = natural_measure({LogCantorSet{1.0, 6}, 1});
  EXPECT_TRUE(std::isfinite(lc.frostman_ratio));
  EXPECT_LT(lc.frostman_ratio, 16.0);
  EXPECT_THROW(natural_measure({PointSet{{0.0}}, 1}), InvalidArgument);
}

TEST(HausdorffSum, Examples) {
  const PointList point{{0.3, 0.3}};
  for (double delta : {0.5, 0.1, 0.01})
    EXPECT_NEAR(hausdorff_sum(point, PowerGauge{1.0}, delta), delta * std::sqrt(2.0), 1e-15);

  const auto segment = set_points({KPlaneSet{1, {0.5}}, 2}, 10);
  for (int n : {8, 16, 64}) {
    EXPECT_NEAR(hausdorff_sum(segment, PowerGauge{1.0}, 1.0 / n), std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(hausdorff_sum(segment, PowerGauge{2.0}, 1.0 / n), 2.0 / n, 1e-12);
  }
  EXPECT_THROW(hausdorff_sum({}, PowerGauge{1.0}, 0.1), InvalidArgument);
}

TEST(HausdorffSum, NonincreasingOnLastOctaves) {
  const auto pts = set_points({CantorDustSet{1.0 / 3.0, 8, 1}, 1});
  const HausdorffFn h = PowerGauge{0.7};
  double prev = kInf;
  for (int j = 8; j <= 10; ++j) {
    const double v = hausdorff_sum(pts, h, std::ldexp(1.0, -j));
    EXPECT_LE(v, prev * (1 + 1e-12));
    prev = v;
  }
}

TEST(DimensionFit, Examples) {
  for (int k : {1, 2}) {
    const auto fit = dimension_fit(set_points({KPlaneSet{k, {}}, 3}, k == 1 ? 10 : 7));
    EXPECT_NEAR(fit.dimension, k, 0.05);
    EXPECT_GE(fit.octaves, 3);
  }
  const auto cantor = dimension_fit(set_points({CantorDustSet{1.0 / 3.0, 8, 1}, 1}));
  EXPECT_NEAR(cantor.dimension, std::log(2.0) / std::log(3.0), 0.05);
  EXPECT_THROW(dimension_fit({{0.0}}), InvalidArgument);
  EXPECT_THROW(dimension_fit({{0.0}, {0.5}}), InvalidArgument);
}
