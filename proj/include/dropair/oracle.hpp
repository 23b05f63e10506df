#pragma once

// Slow reference maximizers and numerical derivatives. Used only to check the
// closed-form solvers and the analytic backward pass.

#include "dropair/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace dropair::oracle {

/// Euclidean projection onto the probability simplex (sort and threshold).
inline std::vector<double> project_simplex(std::span<const double> y) {
  const std::size_t n = y.size();
  std::vector<double> u(y.begin(), y.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double css = 0.0, tau = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    css += u[k];
    const double t = (css - 1.0) / static_cast<double>(k + 1);
    if (u[k] - t > 0.0) tau = t;
  }
  std::vector<double> p(n);
  for (std::size_t k = 0; k < n; ++k) p[k] = std::max(0.0, y[k] - tau);
  return p;
}

/// Squared distance to the uniform distribution.
inline double dist2_uniform(std::span<const double> p) {
  const double u = 1.0 / static_cast<double>(p.size());
  double d = 0.0;
  for (double v : p) d += (v - u) * (v - u);
  return d;
}

/// Euclidean projection onto {p in simplex : ||p - 1/n||^2 <= radius2}, via
/// bisection on the ball multiplier mu: p(mu) = P_simplex((y + mu u) / (1 + mu)).
inline std::vector<double> project_simplex_ball(std::span<const double> y, double radius2) {
  const std::size_t n = y.size();
  const double u = 1.0 / static_cast<double>(n);
  auto at = [&](double mu) {
    std::vector<double> z(n);
    for (std::size_t k = 0; k < n; ++k) z[k] = (y[k] + mu * u) / (1.0 + mu);
    return project_simplex(z);
  };
  auto p = at(0.0);
  if (dist2_uniform(p) <= radius2) return p;
  double lo = 0.0, hi = 1.0;
  while (dist2_uniform(at(hi)) > radius2 && hi < 1e300) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (dist2_uniform(at(mid)) > radius2) lo = mid;
    else hi = mid;
  }
  return at(hi);
}

struct Regularizer {
  enum class Kind { none, kl } kind = Kind::none;
  double gamma = 0.0;

  static Regularizer none() { return {}; }
  static Regularizer kl(double gamma) { return {Kind::kl, gamma}; }
};

struct AscentResult {
  std::vector<double> weights;
  double value = 0.0;
};

/// sum p l - gamma * KL(p || uniform), with 0 log 0 = 0.
inline double regularized_value(std::span<const double> p, std::span<const double> losses, const Regularizer& reg) {
  double v = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) v += p[k] * losses[k];
  if (reg.kind == Regularizer::Kind::kl) {
    const double n = static_cast<double>(p.size());
    for (double q : p)
      if (q > 0.0) v -= reg.gamma * q * std::log(n * q);
  }
  return v;
}

/// Maximizes sum p l (optionally minus gamma KL(p || uniform)) over the
/// simplex, returning the best iterate.
///
/// Without a regularizer this is projected gradient ascent with Euclidean
/// projection and step / sqrt(t). With the KL term the iteration is the
/// entropic (multiplicative) variant p <- p exp(step * grad) / Z at a
/// constant step, since the KL gradient is unbounded at the simplex boundary.
/// `step <= 0` selects 0.5 / (max l - min l + gamma).
///
/// Throws oracle_failure if the value drops by more than 1e-6 over any
/// window of 100 iterations.
inline AscentResult simplex_ascent(std::span<const double> losses, const Regularizer& reg, int iters = 5000,
                                   double step = 0.0) {
  const std::size_t n = losses.size();
  if (n == 0) throw Error(ErrorKind::empty_input, "no losses");
  const auto [lo, hi] = std::minmax_element(losses.begin(), losses.end());
  const bool kl = reg.kind == Regularizer::Kind::kl;
  if (kl && !(reg.gamma > 0.0)) throw Error(ErrorKind::configuration, "gamma must be positive");
  if (step <= 0.0) step = 0.5 / (*hi - *lo + (kl ? reg.gamma : 1.0));

  std::vector<double> p(n, 1.0 / static_cast<double>(n));
  AscentResult best{p, regularized_value(p, losses, reg)};
  double checkpoint = best.value;
  std::vector<double> y(n);
  for (int t = 1; t <= iters; ++t) {
    if (kl) {
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) {
        const double logp = std::log(std::max(p[k], std::numeric_limits<double>::min()));
        const double grad = losses[k] - reg.gamma * (std::log(static_cast<double>(n)) + logp + 1.0);
        y[k] = logp + step * grad;
        top = std::max(top, y[k]);
      }
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) z += y[k] = std::exp(y[k] - top);
      for (std::size_t k = 0; k < n; ++k) p[k] = y[k] / z;
    } else {
      const double s = step / std::sqrt(static_cast<double>(t));
      for (std::size_t k = 0; k < n; ++k) y[k] = p[k] + s * losses[k];
      p = project_simplex(y);
    }
    const double v = regularized_value(p, losses, reg);
    if (v > best.value) best = {p, v};
    if (t % 100 == 0) {
      if (v < checkpoint - 1e-6) throw Error(ErrorKind::oracle_failure, "simplex ascent diverged");
      checkpoint = v;
    }
  }
  return best;
}

/// Mean of the K largest losses by full sort.
inline double topk_oracle(std::span<const double> losses, int k) {
  std::vector<double> sorted(losses.begin(), losses.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const auto kk = static_cast<std::size_t>(std::clamp<int>(k, 1, static_cast<int>(sorted.size())));
  return std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(kk), 0.0) /
         static_cast<double>(kk);
}

/// Maximum of sum p l over the simplex intersected with
/// sum (n p_i - 1)^2 <= 2 rho. Exhaustive grid with `grid` cells per axis for
/// n <= 3, projected ascent with the exact simplex-ball projection otherwise.
inline double chi2_oracle(std::span<const double> losses, double rho, int grid = 100000, int iters = 5000) {
  const std::size_t n = losses.size();
  if (n == 0) throw Error(ErrorKind::empty_input, "no losses");
  const double nd = static_cast<double>(n);
  auto feasible = [&](std::span<const double> p) {
    double s = 0.0;
    for (double v : p) s += (nd * v - 1.0) * (nd * v - 1.0);
    return s <= 2.0 * rho * (1.0 + 1e-12);
  };
  if (n == 1) return losses[0];
  if (n == 2) {
    double best = -std::numeric_limits<double>::infinity();
    for (int g = 0; g <= grid; ++g) {
      const double a = static_cast<double>(g) / grid;
      const double p[2] = {a, 1.0 - a};
      if (feasible(p)) best = std::max(best, a * losses[0] + (1.0 - a) * losses[1]);
    }
    return best;
  }
  if (n == 3) {
    const int cells = std::min(grid, 3000);
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a <= cells; ++a) {
      for (int b = 0; a + b <= cells; ++b) {
        const double p[3] = {static_cast<double>(a) / cells, static_cast<double>(b) / cells,
                             static_cast<double>(cells - a - b) / cells};
        if (feasible(p)) best = std::max(best, p[0] * losses[0] + p[1] * losses[1] + p[2] * losses[2]);
      }
    }
    return best;
  }
  const auto [lo, hi] = std::minmax_element(losses.begin(), losses.end());
  const double step = 1.0 / std::max(*hi - *lo, 1e-12);
  const double radius2 = 2.0 * rho / (nd * nd);
  std::vector<double> p(n, 1.0 / nd), y(n);
  double best = std::accumulate(losses.begin(), losses.end(), 0.0) / nd;
  for (int t = 0; t < iters; ++t) {
    for (std::size_t k = 0; k < n; ++k) y[k] = p[k] + step * losses[k];
    auto next = project_simplex_ball(y, radius2);
    double change = 0.0;
    for (std::size_t k = 0; k < n; ++k) change = std::max(change, std::abs(next[k] - p[k]));
    p = std::move(next);
    double v = 0.0;
    for (std::size_t k = 0; k < n; ++k) v += p[k] * losses[k];
    best = std::max(best, v);
    if (change < 1e-15) break;
  }
  return best;
}

/// Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h.
inline Vector finite_diff_grad(const std::function<double(const Vector&)>& fun, const Vector& theta, double step) {
  Vector grad(theta.size());
  Vector probe = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    probe(i) = theta(i) + step;
    const double up = fun(probe);
    probe(i) = theta(i) - step;
    const double down = fun(probe);
    probe(i) = theta(i);
    grad(i) = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace dropair::oracle
