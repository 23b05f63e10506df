#pragma once

// Baseline pair-selection policies. Each returns a binary WeightAssignment
// over the full pair system. semihard_select scores its own selection; the
// other two leave robust_value at 0 until score_selection is called.

#include "dropair/core.hpp"
#include "dropair/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace dropair::mining {

/// Sets `w.robust_value` to the mean loss over the selected pairs.
inline void score_selection(WeightAssignment& w, const PairLossMatrix& losses) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < w.weights.size(); ++k) {
    if (w.weights[k] == 0.0) continue;
    sum += losses.loss[k];
    ++n;
  }
  w.robust_value = n > 0 ? sum / static_cast<double>(n) : 0.0;
}

inline WeightAssignment empty_selection(const PairSystem& pairs) {
  WeightAssignment w;
  w.flavor = WeightFlavor::binary_selection;
  w.weights.assign(pairs.size(), 0.0);
  return w;
}

/// Semihard selection with lambda standing in for the positive similarity:
/// every positive pair with a positive margin loss, plus the negatives with
/// S in (lambda - m, lambda). An anchor with no negative in that band falls
/// back to its most similar negative below lambda, if any.
inline WeightAssignment semihard_select(const SimilarityMatrix& sim, const PairSystem& pairs, double lambda, double m) {
  WeightAssignment w = empty_selection(pairs);
  double sum = 0.0;
  std::size_t n = 0;
  auto pick = [&](std::size_t k) {
    const Pair& p = pairs.pairs[k];
    w.weights[k] = 1.0;
    sum += margin_loss(sim(p.i, p.j), p.y, m, lambda).loss;
    ++n;
  };
  for (int i = 0; i < pairs.batch_size; ++i) {
    for (auto k : pairs.pos_groups[i]) {
      const Pair& p = pairs.pairs[k];
      if (margin_loss(sim(p.i, p.j), p.y, m, lambda).loss > 0.0) pick(k);
    }
    bool any = false;
    std::size_t fallback = pairs.size();
    double fallback_s = -std::numeric_limits<double>::infinity();
    for (auto k : pairs.neg_groups[i]) {
      const Pair& p = pairs.pairs[k];
      const double s = sim(p.i, p.j);
      if (s > lambda - m && s < lambda) {
        pick(k);
        any = true;
      }
      if (s < lambda && s > fallback_s) {
        fallback_s = s;
        fallback = k;
      }
    }
    if (!any && fallback < pairs.size()) pick(fallback);
  }
  w.robust_value = n > 0 ? sum / static_cast<double>(n) : 0.0;
  return w;
}

/// Unnormalized log density of pairwise distances between uniform points on
/// the unit sphere in R^d: (d-2) log t + (d-3)/2 log(1 - t^2/4).
inline double log_sphere_distance_density(double dist, int d) {
  const double inner = 1.0 - dist * dist / 4.0;
  if (dist <= 0.0 || inner <= 0.0) return -std::numeric_limits<double>::infinity();
  return (d - 2) * std::log(dist) + 0.5 * (d - 3) * std::log(inner);
}

/// Distance-weighted sampling: keeps every positive pair and draws
/// `count_per_anchor` negatives per anchor without replacement with
/// probability ∝ min(clip_tau, 1 / q(dist)), dist = sqrt(2 - 2S).
inline WeightAssignment dws_select(const SimilarityMatrix& sim, const PairSystem& pairs, int d, int count_per_anchor,
                                   double clip_tau, std::uint64_t seed) {
  if (d < 3) throw Error(ErrorKind::configuration, "distance-weighted sampling needs dimension >= 3");
  if (count_per_anchor < 0) throw Error(ErrorKind::configuration, "count_per_anchor must be non-negative");
  WeightAssignment w = empty_selection(pairs);
  std::mt19937_64 rng(seed);
  for (int i = 0; i < pairs.batch_size; ++i) {
    for (auto k : pairs.pos_groups[i]) w.weights[k] = 1.0;
    const auto& neg = pairs.neg_groups[i];
    if (neg.empty()) continue;
    std::vector<double> mass(neg.size());
    for (std::size_t t = 0; t < neg.size(); ++t) {
      const Pair& p = pairs.pairs[neg[t]];
      const double dist = std::sqrt(std::max(0.0, 2.0 - 2.0 * sim(p.i, p.j)));
      const double log_inv = -log_sphere_distance_density(dist, d);
      mass[t] = log_inv >= std::log(clip_tau) ? clip_tau : std::exp(log_inv);
    }
    const std::size_t draws = std::min<std::size_t>(static_cast<std::size_t>(count_per_anchor), neg.size());
    for (std::size_t t = 0; t < draws; ++t) {
      std::discrete_distribution<std::size_t> dist(mass.begin(), mass.end());
      const std::size_t chosen = dist(rng);
      w.weights[neg[chosen]] = 1.0;
      mass[chosen] = 0.0;
    }
  }
  return w;
}

/// Multi-similarity mining: per anchor, negatives with S > min positive S - eps
/// and positives with S < max negative S + eps. An anchor lacking one side
/// keeps every pair of the other side.
inline WeightAssignment ms_mining_select(const SimilarityMatrix& sim, const PairSystem& pairs, double epsilon) {
  WeightAssignment w = empty_selection(pairs);
  auto s_of = [&](std::size_t k) { return sim(pairs.pairs[k].i, pairs.pairs[k].j); };
  for (int i = 0; i < pairs.batch_size; ++i) {
    const auto& pos = pairs.pos_groups[i];
    const auto& neg = pairs.neg_groups[i];
    if (pos.empty() || neg.empty()) {
      for (auto k : pos) w.weights[k] = 1.0;
      for (auto k : neg) w.weights[k] = 1.0;
      continue;
    }
    {
      double min_pos = std::numeric_limits<double>::infinity();
      for (auto k : pos) min_pos = std::min(min_pos, s_of(k));
      for (auto k : neg)
        if (s_of(k) > min_pos - epsilon) w.weights[k] = 1.0;
    }
    {
      double max_neg = -std::numeric_limits<double>::infinity();
      for (auto k : neg) max_neg = std::max(max_neg, s_of(k));
      for (auto k : pos)
        if (s_of(k) < max_neg + epsilon) w.weights[k] = 1.0;
    }
  }
  return w;
}

}  // namespace dropair::mining
