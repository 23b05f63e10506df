#pragma once

// Robust pair weighting: maximize sum_ij p_ij l_ij (minus a divergence
// regularizer) over an uncertainty set for p.
//
// All solvers except solve_avg look only at the active (positive-loss) pairs
// of the PairLossMatrix; inactive pairs always receive weight 0.

#include "dropair/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dropair {

namespace detail {

inline void require_active(std::size_t n_active) {
  if (n_active == 0) throw Error(ErrorKind::empty_active_set, "no pair has a positive loss");
}

inline void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorKind::configuration, std::string(name) + " must be positive");
}

/// The `k` hardest entries of the ascending index list `idx`, in ascending
/// order: every loss above the k-th largest, plus as many entries equal to
/// it as fit, lowest index first.
inline std::vector<std::size_t> hardest(const std::vector<std::size_t>& idx, std::size_t k,
                                        const std::vector<double>& loss) {
  k = std::min(k, idx.size());
  std::vector<std::size_t> out;
  if (k == 0) return out;
  std::vector<double> vals;
  vals.reserve(idx.size());
  for (auto i : idx) vals.push_back(loss[i]);
  std::vector<double> order(vals);
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(), std::greater<>());
  const double cut = order[k - 1];
  std::size_t ties = k;
  for (auto it = order.begin(); it != order.begin() + static_cast<std::ptrdiff_t>(k); ++it) ties -= *it > cut ? 1 : 0;
  out.reserve(k);
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (vals[t] < cut) continue;
    if (vals[t] > cut) out.push_back(idx[t]);
    else if (ties > 0) {
      out.push_back(idx[t]);
      --ties;
    }
  }
  return out;
}

/// Softmax of loss/gamma over `group` written into `w`. Returns the group's
/// regularized value gamma * log(mean exp(loss/gamma)).
inline double softmax_group(std::span<const std::size_t> group, const std::vector<double>& loss, double gamma,
                            std::vector<double>& w) {
  double top = -std::numeric_limits<double>::infinity();
  for (auto k : group) top = std::max(top, loss[k] / gamma);
  double z = 0.0;
  for (auto k : group) z += std::exp(loss[k] / gamma - top);
  for (auto k : group) w[k] = std::exp(loss[k] / gamma - top) / z;
  return gamma * (top + std::log(z / static_cast<double>(group.size())));
}

/// Same as softmax_group with one extra zero-loss element. Returns
/// (value, slack weight).
inline std::pair<double, double> softmax_group_with_slack(std::span<const std::size_t> group,
                                                          const std::vector<double>& loss, double gamma,
                                                          std::vector<double>& w) {
  double top = 0.0;  // the slack exponent
  for (auto k : group) top = std::max(top, loss[k] / gamma);
  double z = std::exp(-top);
  for (auto k : group) z += std::exp(loss[k] / gamma - top);
  for (auto k : group) w[k] = std::exp(loss[k] / gamma - top) / z;
  const double value = gamma * (top + std::log(z / static_cast<double>(group.size() + 1)));
  return {value, std::exp(-top) / z};
}

inline std::vector<std::size_t> active_members(const std::vector<std::size_t>& group, const PairLossMatrix& losses) {
  std::vector<std::size_t> out;
  out.reserve(group.size());
  for (auto k : group)
    if (losses.active[k]) out.push_back(k);
  return out;
}

}  // namespace detail

/// Uniform weights over every pair (active or not): the plain averaged loss.
inline WeightAssignment solve_avg(const PairLossMatrix& losses) {
  const std::size_t n = losses.size();
  if (n == 0) throw Error(ErrorKind::empty_input, "no pairs");
  WeightAssignment w;
  w.flavor = WeightFlavor::global_simplex;
  w.weights.assign(n, 1.0 / static_cast<double>(n));
  double sum = 0.0;
  for (double l : losses.loss) sum += l;
  w.robust_value = sum / static_cast<double>(n);
  return w;
}

/// All mass on the largest loss (lowest index among ties).
inline WeightAssignment solve_max(const PairLossMatrix& losses) {
  std::size_t best = losses.size();
  for (std::size_t k = 0; k < losses.size(); ++k)
    if (losses.active[k] && (best == losses.size() || losses.loss[k] > losses.loss[best])) best = k;
  detail::require_active(best == losses.size() ? 0 : 1);
  WeightAssignment w;
  w.flavor = WeightFlavor::global_simplex;
  w.weights.assign(losses.size(), 0.0);
  w.weights[best] = 1.0;
  w.robust_value = losses.loss[best];
  return w;
}

/// Capped simplex {sum p = 1, 0 <= p <= 1/K}: the mean of the K largest losses.
/// K larger than the active set is clamped and a warning is recorded.
inline WeightAssignment solve_topk(const PairLossMatrix& losses, int k) {
  if (k <= 0) throw Error(ErrorKind::configuration, "K must be positive");
  const auto active = losses.active_indices();
  detail::require_active(active.size());
  WeightAssignment w;
  w.flavor = WeightFlavor::global_simplex;
  std::size_t kk = static_cast<std::size_t>(k);
  if (kk > active.size()) {
    w.warnings.push_back("K=" + std::to_string(k) + " exceeds " + std::to_string(active.size()) +
                         " active pairs; using K=" + std::to_string(active.size()));
    kk = active.size();
  }
  const auto top = detail::hardest(active, kk, losses.loss);
  w.weights.assign(losses.size(), 0.0);
  std::vector<double> picked;
  picked.reserve(kk);
  for (auto idx : top) {
    w.weights[idx] = 1.0 / static_cast<double>(kk);
    picked.push_back(losses.loss[idx]);
  }
  // Summing largest first makes the value independent of pair order.
  std::sort(picked.begin(), picked.end(), std::greater<>());
  w.robust_value = std::accumulate(picked.begin(), picked.end(), 0.0) / static_cast<double>(kk);
  return w;
}

/// Binary selection of the K/2 hardest positive and K/2 hardest negative
/// active pairs. A side with fewer active pairs contributes all it has.
inline WeightAssignment solve_topk_pn(const PairLossMatrix& losses, const PairSystem& pairs, int k) {
  if (k < 2 || k % 2 != 0) throw Error(ErrorKind::configuration, "K must be even and >= 2");
  if (losses.size() != pairs.size()) throw Error(ErrorKind::shape, "losses do not match the pair system");
  const auto active = losses.active_indices();
  detail::require_active(active.size());

  // Split by merging with the ascending positive indices (the groups are
  // already in anchor order), which avoids reading every pair record.
  std::vector<std::size_t> pos, neg;
  neg.reserve(active.size());
  auto next_pos = [&, i = 0, t = std::size_t{0}]() mutable -> std::size_t {
    while (i < pairs.batch_size && t >= pairs.pos_groups[i].size()) {
      ++i;
      t = 0;
    }
    return i < pairs.batch_size ? pairs.pos_groups[i][t++] : pairs.size();
  };
  std::size_t p = next_pos();
  for (auto idx : active) {
    while (p < idx) p = next_pos();
    (idx == p ? pos : neg).push_back(idx);
  }

  const auto half = static_cast<std::size_t>(k / 2);
  WeightAssignment w;
  w.flavor = WeightFlavor::binary_selection;
  w.weights.assign(losses.size(), 0.0);
  double sum = 0.0;
  std::size_t selected = 0;
  for (const auto* side : {&pos, &neg}) {
    for (auto idx : detail::hardest(*side, half, losses.loss)) {
      w.weights[idx] = 1.0;
      sum += losses.loss[idx];
      ++selected;
    }
  }
  w.robust_value = sum / static_cast<double>(selected);
  return w;
}

/// KL-regularized weights p ∝ exp(l / gamma) over the active pairs. The value
/// is gamma * log(mean exp(l / gamma)), the optimum of
/// sum p l - gamma * KL(p || uniform over the active pairs).
inline WeightAssignment solve_kl(const PairLossMatrix& losses, double gamma) {
  detail::require_positive(gamma, "gamma");
  const auto active = losses.active_indices();
  detail::require_active(active.size());
  WeightAssignment w;
  w.flavor = WeightFlavor::global_simplex;
  w.weights.assign(losses.size(), 0.0);
  w.robust_value = detail::softmax_group(active, losses.loss, gamma, w.weights);
  return w;
}

/// Maximizes sum p l over the simplex intersected with the chi-square ball
/// sum (n p_i - 1)^2 / (2n) <= rho / n (n = active pairs).
inline WeightAssignment solve_chi2(const PairLossMatrix& losses, double rho) {
  detail::require_positive(rho, "rho");
  const auto active = losses.active_indices();
  detail::require_active(active.size());
  const std::size_t n = active.size();
  const double nd = static_cast<double>(n);
  std::vector<double> l(n);
  for (std::size_t t = 0; t < n; ++t) l[t] = losses.loss[active[t]];

  WeightAssignment w;
  w.flavor = WeightFlavor::global_simplex;
  w.weights.assign(losses.size(), 0.0);
  auto emit = [&](const std::vector<double>& p) {
    double v = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      w.weights[active[t]] = p[t];
      v += p[t] * l[t];
    }
    w.robust_value = v;
    return w;
  };

  const double mean = std::accumulate(l.begin(), l.end(), 0.0) / nd;
  double css = 0.0;
  for (double v : l) css += (v - mean) * (v - mean);
  const double radius2 = 2.0 * rho / (nd * nd);  // ||p - 1/n||^2 bound

  // Exactly equal losses: the mean may still carry rounding, so test the range.
  const auto [lo_it, hi_it] = std::minmax_element(l.begin(), l.end());
  const double lmin = *lo_it, lmax = *hi_it;
  if (lmin == lmax || css == 0.0) return emit(std::vector<double>(n, 1.0 / nd));

  // Interior case: move from uniform along the centered losses to the ball edge.
  {
    const double scale = std::sqrt(radius2 / css);
    std::vector<double> p(n);
    bool nonneg = true;
    for (std::size_t t = 0; t < n; ++t) {
      p[t] = 1.0 / nd + scale * (l[t] - mean);
      nonneg = nonneg && p[t] >= 0.0;
    }
    if (nonneg) return emit(p);
  }

  // Boundary case: p ∝ (l - eta)_+, with eta found by bisection so that p sits
  // on the ball; the distance to uniform grows with eta.
  auto shifted = [&](double eta) {
    std::vector<double> p(n, 0.0);
    double z = 0.0;
    for (std::size_t t = 0; t < n; ++t) z += p[t] = std::max(0.0, l[t] - eta);
    for (auto& v : p) v /= z;
    return p;
  };
  auto dist2 = [&](const std::vector<double>& p) {
    double d = 0.0;
    for (double v : p) d += (v - 1.0 / nd) * (v - 1.0 / nd);
    return d;
  };

  // Uniform over the maximizers is the most concentrated point of the family.
  std::vector<double> corner(n, 0.0);
  std::size_t ties = 0;
  for (std::size_t t = 0; t < n; ++t) ties += l[t] == lmax ? 1 : 0;
  for (std::size_t t = 0; t < n; ++t) corner[t] = l[t] == lmax ? 1.0 / static_cast<double>(ties) : 0.0;
  if (dist2(corner) <= radius2) return emit(corner);

  double lo = lmin, hi = lmax;
  while (hi - lo > 1e-12 * std::max(1.0, std::abs(lmax))) {
    const double mid = 0.5 * (lo + hi);
    if (dist2(shifted(mid)) > radius2) hi = mid;
    else lo = mid;
  }
  const double eta = lo;

  // Exact scaling on the identified support: p = 1/s + t (l - mean_S).
  std::vector<std::size_t> support;
  for (std::size_t t = 0; t < n; ++t)
    if (l[t] > eta) support.push_back(t);
  const double s = static_cast<double>(support.size());
  double mean_s = 0.0;
  for (auto t : support) mean_s += l[t];
  mean_s /= s;
  double css_s = 0.0;
  for (auto t : support) css_s += (l[t] - mean_s) * (l[t] - mean_s);
  const double rest = radius2 - (nd - s) / (nd * nd) - (nd - s) * (nd - s) / (s * nd * nd);
  if (css_s > 0.0 && rest >= 0.0) {
    const double scale = std::sqrt(rest / css_s);
    std::vector<double> p(n, 0.0);
    bool ok = true;
    for (auto t : support) {
      p[t] = 1.0 / s + scale * (l[t] - mean_s);
      ok = ok && p[t] >= 0.0;
    }
    if (ok) return emit(p);
  }
  return emit(shifted(eta));
}

/// Per-anchor KL weights: inside each anchor's positive (negative) group,
/// p ∝ exp(l / gamma_pos) (exp(l / gamma_neg)) over the active members.
inline WeightAssignment solve_kl_grouped(const PairLossMatrix& losses, const PairSystem& pairs, double gamma_pos,
                                         double gamma_neg) {
  detail::require_positive(gamma_pos, "gamma_pos");
  detail::require_positive(gamma_neg, "gamma_neg");
  if (losses.size() != pairs.size()) throw Error(ErrorKind::shape, "losses do not match the pair system");
  WeightAssignment w;
  w.flavor = WeightFlavor::per_anchor;
  w.weights.assign(losses.size(), 0.0);
  double value = 0.0;
  for (int i = 0; i < pairs.batch_size; ++i) {
    const auto pos = detail::active_members(pairs.pos_groups[i], losses);
    const auto neg = detail::active_members(pairs.neg_groups[i], losses);
    if (!pos.empty()) value += detail::softmax_group(pos, losses.loss, gamma_pos, w.weights);
    if (!neg.empty()) value += detail::softmax_group(neg, losses.loss, gamma_neg, w.weights);
  }
  w.robust_value = value;
  return w;
}

/// Grouped KL weights where every group carries one extra zero-loss element.
/// With margin losses this gives p+_ij = 1 / (e^{(S_ij - c+)/g+} + sum_k e^{(S_ij - S_ik)/g+}).
inline WeightAssignment solve_ms_recovery(const PairLossMatrix& losses, const PairSystem& pairs, const DroConfig& cfg) {
  detail::require_positive(cfg.gamma_pos, "gamma_pos");
  detail::require_positive(cfg.gamma_neg, "gamma_neg");
  if (losses.size() != pairs.size()) throw Error(ErrorKind::shape, "losses do not match the pair system");
  WeightAssignment w;
  w.flavor = WeightFlavor::per_anchor;
  w.weights.assign(losses.size(), 0.0);
  w.slack_pos.assign(pairs.batch_size, 1.0);
  w.slack_neg.assign(pairs.batch_size, 1.0);
  double value = 0.0;
  for (int i = 0; i < pairs.batch_size; ++i) {
    const auto pos = detail::active_members(pairs.pos_groups[i], losses);
    const auto neg = detail::active_members(pairs.neg_groups[i], losses);
    if (!pos.empty()) {
      auto [v, slack] = detail::softmax_group_with_slack(pos, losses.loss, cfg.gamma_pos, w.weights);
      value += v;
      w.slack_pos[i] = slack;
    }
    if (!neg.empty()) {
      auto [v, slack] = detail::softmax_group_with_slack(neg, losses.loss, cfg.gamma_neg, w.weights);
      value += v;
      w.slack_neg[i] = slack;
    }
  }
  w.robust_value = value;
  return w;
}

/// Runs the solver selected by `cfg.variant`.
inline WeightAssignment solve(const PairLossMatrix& losses, const PairSystem& pairs, const DroConfig& cfg) {
  cfg.validate();
  switch (cfg.variant) {
    case DroVariant::avg: return solve_avg(losses);
    case DroVariant::max: return solve_max(losses);
    case DroVariant::topk: return solve_topk(losses, cfg.k);
    case DroVariant::topk_pn: return solve_topk_pn(losses, pairs, cfg.k);
    case DroVariant::kl: return solve_kl(losses, cfg.gamma);
    case DroVariant::chi2: return solve_chi2(losses, cfg.rho);
    case DroVariant::kl_grouped: return solve_kl_grouped(losses, pairs, cfg.gamma_pos, cfg.gamma_neg);
    case DroVariant::ms_recovery: return solve_ms_recovery(losses, pairs, cfg);
  }
  throw Error(ErrorKind::configuration, "unknown DRO variant");
}

// ---------------------------------------------------------------------------
// Objective evaluation
// ---------------------------------------------------------------------------

namespace detail {

/// gamma * KL(p_group || uniform over `group_size` elements), 0 log 0 = 0.
inline double kl_to_uniform(std::span<const double> p, std::size_t group_size, double gamma) {
  double kl = 0.0;
  for (double v : p)
    if (v > 0.0) kl += v * std::log(v * static_cast<double>(group_size));
  return gamma * kl;
}

}  // namespace detail

/// The objective that `cfg.variant` maximizes, evaluated at arbitrary weights.
/// Binary selections are scored as the mean loss over the selected pairs.
inline double robust_objective(const WeightAssignment& w, const PairLossMatrix& losses, const PairSystem& pairs,
                               const DroConfig& cfg) {
  double linear = 0.0;
  for (std::size_t k = 0; k < losses.size(); ++k) linear += w.weights[k] * losses.loss[k];
  switch (cfg.variant) {
    case DroVariant::avg:
    case DroVariant::max:
    case DroVariant::topk:
    case DroVariant::chi2: return linear;
    case DroVariant::topk_pn: {
      const double n = static_cast<double>(w.count_selected());
      return n > 0 ? linear / n : 0.0;
    }
    case DroVariant::kl: {
      std::vector<double> p;
      for (std::size_t k = 0; k < losses.size(); ++k)
        if (losses.active[k]) p.push_back(w.weights[k]);
      return linear - detail::kl_to_uniform(p, p.size(), cfg.gamma);
    }
    case DroVariant::kl_grouped:
    case DroVariant::ms_recovery: {
      const bool slack = cfg.variant == DroVariant::ms_recovery;
      double reg = 0.0;
      for (int i = 0; i < pairs.batch_size; ++i) {
        for (int side = 0; side < 2; ++side) {
          const auto members = detail::active_members(side == 0 ? pairs.pos_groups[i] : pairs.neg_groups[i], losses);
          if (members.empty()) continue;
          std::vector<double> p;
          for (auto k : members) p.push_back(w.weights[k]);
          if (slack) p.push_back(side == 0 ? w.slack_pos[i] : w.slack_neg[i]);
          reg += detail::kl_to_uniform(p, p.size(), side == 0 ? cfg.gamma_pos : cfg.gamma_neg);
        }
      }
      return linear - reg;
    }
  }
  throw Error(ErrorKind::configuration, "unknown DRO variant");
}

// ---------------------------------------------------------------------------
// Sampling and subgradients
// ---------------------------------------------------------------------------

/// Draws `count` pair indices with replacement according to the weights.
/// Per-anchor weights are sampled group by group with the count split evenly
/// over the groups that carry mass (earlier groups take the remainder).
inline std::vector<std::size_t> sample_pairs(const WeightAssignment& w, const PairSystem& pairs, std::size_t count,
                                             std::uint64_t seed) {
  if (count == 0) throw Error(ErrorKind::configuration, "sample count must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  out.reserve(count);

  auto draw = [&](const std::vector<std::size_t>& members, std::size_t n) {
    std::vector<double> mass;
    mass.reserve(members.size());
    for (auto k : members) mass.push_back(w.weights[k]);
    std::discrete_distribution<std::size_t> dist(mass.begin(), mass.end());
    for (std::size_t t = 0; t < n; ++t) out.push_back(members[dist(rng)]);
  };

  if (w.flavor != WeightFlavor::per_anchor) {
    std::vector<std::size_t> members;
    for (std::size_t k = 0; k < w.weights.size(); ++k)
      if (w.weights[k] > 0.0) members.push_back(k);
    if (members.empty()) throw Error(ErrorKind::empty_active_set, "all weights are zero");
    draw(members, count);
    return out;
  }

  if (w.weights.size() != pairs.size()) throw Error(ErrorKind::shape, "weights do not match the pair system");
  std::vector<std::vector<std::size_t>> groups;
  for (int i = 0; i < pairs.batch_size; ++i) {
    for (const auto* g : {&pairs.pos_groups[i], &pairs.neg_groups[i]}) {
      std::vector<std::size_t> members;
      for (auto k : *g)
        if (w.weights[k] > 0.0) members.push_back(k);
      if (!members.empty()) groups.push_back(std::move(members));
    }
  }
  if (groups.empty()) throw Error(ErrorKind::empty_active_set, "all weights are zero");
  const std::size_t base = count / groups.size(), extra = count % groups.size();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::size_t n = base + (g < extra ? 1 : 0);
    if (n > 0) draw(groups[g], n);
  }
  return out;
}

/// Coefficient of dS_ij/dtheta in the subgradient sum_ij p*_ij grad l_ij.
/// Binary selections use p*_ij = 1 / (number selected).
inline std::vector<double> weighted_subgradient_coeffs(const WeightAssignment& w, const PairLossMatrix& losses) {
  if (w.weights.size() != losses.size()) throw Error(ErrorKind::shape, "weights do not match the losses");
  std::vector<double> coeff(losses.size(), 0.0);
  double unit = 1.0;
  if (w.flavor == WeightFlavor::binary_selection) {
    const std::size_t n = w.count_selected();
    unit = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
  }
  for (std::size_t k = 0; k < losses.size(); ++k) {
    if (w.weights[k] == 0.0) continue;
    const double p = w.flavor == WeightFlavor::binary_selection ? unit : w.weights[k];
    coeff[k] = p * losses.dloss_dS[k];
  }
  return coeff;
}

}  // namespace dropair
