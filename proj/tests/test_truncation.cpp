#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace caplab;
using std::numbers::pi;

namespace {

/// Smooth positive functions fixed in continuum coordinates, scaled so that
/// G_lambda f crosses the truncation bridge.
std::vector<NodeFunction> smooth_family(const Space& s, int count, unsigned seed, double lambda) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1), phase(0, 2 * pi), level(0.5, 1.0);
  std::vector<NodeFunction> out;
  for (int i = 0; i < count; ++i) {
    std::array<double, 3> c{}, ph{};
    for (auto& v : c) v = u(rng);
    for (auto& v : ph) v = phase(rng);
    const double base = level(rng);
    out.push_back(oracle::sample(s, [&](auto x) {
      double v = 0;
      for (int k = 0; k < 3; ++k) v += c[static_cast<std::size_t>(k)] * std::cos(2 * pi * (k + 1) * x[0] + ph[static_cast<std::size_t>(k)]);
      return lambda * std::max(0.0, base + 0.3 * v);
    }));
  }
  return out;
}

double spread(const std::vector<double>& v) {
  return *std::max_element(v.begin(), v.end()) / *std::min_element(v.begin(), v.end());
}

}  // namespace

TEST(TruncationFn, ShapeAndBounds) {
  const auto F = make_truncation(0.5);
  EXPECT_EQ(F(0.25), 0.0);
  EXPECT_EQ(F(2.0), 1.0);
  EXPECT_NEAR(F(0.75), 0.5, 1e-15);
  EXPECT_TRUE(std::isfinite(F.bound()));
  EXPECT_LE(F.bound(), 30 / 0.25);
  EXPECT_NEAR(F.bounds()[1], 15.0 / 8.0 / 0.5, 1e-6);
  for (double t0 : {0.1, 0.5, 0.9}) {
    const auto G = make_truncation(t0);
    double prev = -1;
    for (int k = 0; k <= 1000; ++k) {
      const double t = 1.2 * k / 1000;
      EXPECT_GE(G(t), prev);
      prev = G(t);
    }
    for (double e : {1e-6, 1e-8}) {
      EXPECT_NEAR(G(t0 + e), 0.0, 1e-12);
      const double w = 1 - t0;
      EXPECT_LE(std::abs(G.d1(t0 + e)), 30 * e * e / (w * w * w));
      EXPECT_LE(std::abs(G.d2(t0 + e)), 60 * e / (w * w * w));
      EXPECT_LE(std::abs(G.d1(1 - e)), 30 * e * e / (w * w * w));
      EXPECT_LE(std::abs(G.d2(1 - e)), 60 * e / (w * w * w));
    }
  }
  EXPECT_THROW(make_truncation(0.0), InvalidArgument);
  EXPECT_THROW(make_truncation(1.0), InvalidArgument);
}

TEST(TruncatePotential, Examples) {
  const auto s = build_torus_grid(2, 8);
  const auto F = make_truncation(0.5);
  const auto zero = truncate_potential(s, NodeFunction::Zero(s.size()), 2.0, F, 2.0);
  EXPECT_TRUE(zero.skipped);
  EXPECT_TRUE(std::isnan(zero.ratio));
  for (double p : {1.5, 2.0, 3.0, kInf}) {
    const auto r = truncate_potential(s, NodeFunction::Constant(s.size(), 2.0), 2.0, F, p);
    EXPECT_NEAR(r.ratio, 1.0, 1e-10) << p;
    EXPECT_TRUE(r.value.isApproxToConstant(1.0, 1e-12));
  }
  EXPECT_NEAR(truncate_potential(s, NodeFunction::Constant(s.size(), 2.0), 2.0, F, kInf).sup_ratio, 0.0, 1e-10);
  EXPECT_THROW(truncate_potential(s, NodeFunction::Constant(s.size(), -1.0), 2.0, F, 2.0), InvalidArgument);
}

TEST(TruncatePotential, RangeAndRefinementStability) {
  const auto F = make_truncation(0.5);
  std::vector<double> worst;
  for (Index n : {64, 128, 256}) {
    const auto s = build_torus_grid(1, n);
    double w = 0;
    for (const auto& f : smooth_family(s, 20, 17, 2.0)) {
      const auto r = truncate_potential(s, f, 2.0, F, 2.0);
      EXPECT_GE(r.value.minCoeff(), 0.0);
      EXPECT_LE(r.value.maxCoeff(), 1.0);
      w = std::max(w, r.ratio);
    }
    EXPECT_TRUE(std::isfinite(w));
    worst.push_back(w);
  }
  EXPECT_LT(spread(worst), 2.0);
}

TEST(GammaQuotient, TwoNodeClosedForm) {
  const auto s = oracle::two_node();
  NodeFunction f(2);
  f << 1, 0;
  const auto g = gamma_quotient_norm(s, f, 2.0, 2.0);
  EXPECT_NEAR(g.value, std::sqrt(10.0) / 12, 1e-12);
  EXPECT_NEAR(g.ratio, std::sqrt(10.0) / 12, 1e-12);
  EXPECT_NEAR(gamma_quotient_norm(build_torus_grid(2, 8), NodeFunction::Constant(64, 3.0), 2.0, 2.0).value, 0.0, 1e-12);
  EXPECT_THROW(gamma_quotient_norm(s, NodeFunction::Zero(2), 2.0, 2.0), InvalidArgument);
}

TEST(GammaQuotient, RefinementStability) {
  std::vector<double> worst;
  for (Index n : {64, 128, 256}) {
    const auto s = build_torus_grid(1, n);
    double w = 0;
    for (const auto& f : smooth_family(s, 20, 23, 2.0)) w = std::max(w, gamma_quotient_norm(s, f, 2.0, 2.0).ratio);
    worst.push_back(w);
  }
  EXPECT_LT(spread(worst), 2.0);
}

TEST(Hedberg, Examples) {
  const auto s = oracle::two_node();
  NodeFunction f(2);
  f << 1, 0;
  const auto r = hedberg_split_ratio(s, f, 2.0, {0.1});
  EXPECT_TRUE(std::isfinite(r.ratio));
  EXPECT_GT(r.ratio, 0.0);
  const auto t = build_torus_grid(2, 8);
  EXPECT_NEAR(hedberg_split_ratio(t, NodeFunction::Constant(64, 1.0), 2.0, {0.1, 1.0}).ratio, 0.0, 1e-10);
  EXPECT_THROW(hedberg_split_ratio(s, f, 2.0, {-1.0}), InvalidArgument);
}

TEST(Hedberg, RefinementStability) {
  std::vector<double> worst;
  for (Index n : {32, 64, 128}) {
    const auto s = build_torus_grid(1, n);
    double w = 0;
    for (const auto& f : smooth_family(s, 5, 29, 2.0)) w = std::max(w, hedberg_split_ratio(s, f, 2.0, {0.01, 0.1}).ratio);
    worst.push_back(w);
  }
  EXPECT_LT(spread(worst), 2.0);
}

TEST(ChainRule, ExactCases) {
  const auto s = build_torus_grid(2, 8);
  const auto F = make_truncation(0.5);
  EXPECT_EQ(chain_rule_residual(s, NodeFunction::Constant(64, 1.0), 2.0, F), 0.0);
  // u below t0 everywhere: F vanishes identically on the range of u
  const auto f = oracle::random_function(64, 3, 0.0, 0.5);
  EXPECT_EQ(chain_rule_residual(s, f, 2.0, F), 0.0);
}

TEST(ChainRule, ConvergesUnderRefinement) {
  const auto F = make_truncation(0.5);
  std::vector<double> res, h;
  for (Index n : {64, 128, 256}) {
    const auto s = build_torus_grid(1, n);
    res.push_back(chain_rule_residual(s, smooth_family(s, 1, 31, 2.0).front(), 2.0, F));
    h.push_back(s.spacing());
  }
  EXPECT_GT(res[0], res[1]);
  EXPECT_GT(res[1], res[2]);
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < 3; ++i) {
    lx.push_back(std::log(h[i]));
    ly.push_back(std::log(res[i]));
  }
  EXPECT_GE(fit_line(lx, ly).slope, 0.8);
}

TEST(ApproxIdentity, WholeSpaceAndBounds) {
  const auto s = build_torus_grid(2, 16);
  const auto F = make_truncation(0.5);
  const auto whole = approx_identity_sequence(s, 0, {10.0}, F, 0.5);
  EXPECT_TRUE(whole.h[0].isApproxToConstant(1.0, 1e-12));
  EXPECT_TRUE(whole.plateau[0]);
  const auto seq = approx_identity_sequence(s, 0, {0.1, 0.2, 0.3, 0.5}, F, 0.5);
  for (const auto& hn : seq.h) {
    EXPECT_GE(hn.minCoeff(), 0.0);
    EXPECT_LE(hn.maxCoeff(), 1.0);
  }
  EXPECT_TRUE(seq.nested_monotone);
  for (std::size_t i = 0; i < seq.h.size(); ++i) {
    EXPECT_TRUE(std::isfinite(seq.grad_sup[i]));
    EXPECT_LE(seq.generator_sup[i], 4.0 * s.max_rate());
  }
  EXPECT_TRUE(seq.plateau.back());
}
