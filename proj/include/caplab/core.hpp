#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace caplab {

using Index = std::int64_t;

/// A real function on the nodes of a space, indexed by node id.
using NodeFunction = Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Bad arguments or violated preconditions.
class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// An iterative method failed to reach its tolerance.
class SolverError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A construction would exceed the configured memory budget.
class BudgetError : public std::runtime_error {
public:
  BudgetError(const std::string& what, double estimate)
      : std::runtime_error(what), estimate_(estimate) {}
  double estimate() const { return estimate_; }

private:
  double estimate_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

/// Conjugate exponent q with 1/p + 1/q = 1.
inline double conjugate_exponent(double p) {
  require(p > 1.0 && std::isfinite(p), "exponent p must lie in (1, inf)");
  return p / (p - 1.0);
}

/// Weighted L^p norm (sum_x |f(x)|^p w(x))^(1/p); p = inf gives the sup norm.
inline double lp_norm(const NodeFunction& f, const Eigen::VectorXd& weight, double p) {
  if (std::isinf(p)) return f.size() == 0 ? 0.0 : f.cwiseAbs().maxCoeff();
  if (p == 2.0) return std::sqrt((f.array().square() * weight.array()).sum());
  return std::pow((f.array().abs().pow(p) * weight.array()).sum(), 1.0 / p);
}

/// Weighted sum_x |f(x)|^p w(x).
inline double lp_power(const NodeFunction& f, const Eigen::VectorXd& weight, double p) {
  if (p == 2.0) return (f.array().square() * weight.array()).sum();
  return (f.array().abs().pow(p) * weight.array()).sum();
}

/// Ordinary least squares slope and intercept; residual is the RMS of the fit.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "line fit needs at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  require(sxx > 0, "line fit needs distinct abscissae");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (fit.intercept + fit.slope * x[i]);
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / n);
  return fit;
}

/// 64-bit FNV-1a, used for content keys of cached artifacts.
class ContentHash {
public:
  void update(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  template <class T>
  void update_value(const T& v) {
    update(&v, sizeof(T));
  }
  std::uint64_t digest() const { return state_; }

private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

/// Runs body(i) for i in [0, count) on up to hardware_concurrency threads.
template <class Body>
void parallel_for(Index count, Body&& body) {
  const auto hw = std::max(1u, std::thread::hardware_concurrency());
  const Index workers = std::min<Index>(count, static_cast<Index>(hw));
  if (workers <= 1) {
    for (Index i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::jthread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (Index w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (Index i = w; i < count; i += workers) body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  pool.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace caplab
