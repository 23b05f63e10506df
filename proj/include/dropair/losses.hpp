#pragma once

#include "dropair/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

namespace dropair {

enum class LossKind { margin, binomial };

inline std::string_view to_string(LossKind k) { return k == LossKind::margin ? "margin" : "binomial"; }

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "margin") return LossKind::margin;
  if (s == "binomial") return LossKind::binomial;
  throw Error(ErrorKind::configuration, "unknown loss kind '" + std::string(s) + "'");
}

struct LossValue {
  double loss = 0.0;
  double dloss_dS = 0.0;
};

/// log(1 + e^x) without overflow.
inline double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

/// Logistic function 1 / (1 + e^-x), the derivative of softplus.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// [m + y(lambda - S)]_+ with subgradient 0 at the kink.
inline LossValue margin_loss(double s, int y, double m, double lambda) {
  const double z = m + y * (lambda - s);
  if (z > 0.0) return {z, -static_cast<double>(y)};
  return {0.0, 0.0};
}

/// Binomial deviance: softplus(-alpha (S - lambda)) / alpha for positives and
/// cost_neg * softplus(beta (S - lambda)) / beta for negatives.
inline LossValue binomial_loss(double s, int y, double alpha, double beta, double lambda, double cost_neg = 1.0) {
  if (y > 0) {
    const double x = -alpha * (s - lambda);
    return {softplus(x) / alpha, -sigmoid(x)};
  }
  const double x = beta * (s - lambda);
  return {cost_neg * softplus(x) / beta, cost_neg * sigmoid(x)};
}

inline LossValue pair_loss(LossKind kind, double s, int y, const DroConfig& cfg) {
  switch (kind) {
    case LossKind::margin: return margin_loss(s, y, cfg.margin, cfg.lambda);
    case LossKind::binomial: return binomial_loss(s, y, cfg.alpha, cfg.beta, cfg.lambda, cfg.cost_neg);
  }
  throw Error(ErrorKind::configuration, "unknown loss kind");
}

/// Evaluates the base loss on every pair. Zero-loss pairs are marked inactive
/// unless `keep_zero_loss` is set.
inline PairLossMatrix loss_matrix(const SimilarityMatrix& sim, const PairSystem& pairs, const DroConfig& cfg,
                                  LossKind kind, bool keep_zero_loss = false) {
  if (sim.values.rows() != pairs.batch_size || sim.values.cols() != pairs.batch_size)
    throw Error(ErrorKind::shape, "similarity matrix does not match the pair system");
  if (kind != LossKind::margin && kind != LossKind::binomial)
    throw Error(ErrorKind::configuration, "unknown loss kind");
  PairLossMatrix out;
  const std::size_t n = pairs.size();
  out.loss.resize(n);
  out.dloss_dS.resize(n);
  out.active.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Pair& p = pairs.pairs[k];
    const LossValue v = pair_loss(kind, sim(p.i, p.j), p.y, cfg);
    out.loss[k] = v.loss;
    out.dloss_dS[k] = v.dloss_dS;
    out.active[k] = keep_zero_loss || v.loss > 0.0;
  }
  return out;
}

}  // namespace dropair
