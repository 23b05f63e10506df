#pragma once

// Reference gradient weights of the lifted-structure (LS), multi-similarity
// (MS) and exponentially weighted hard-aware point-to-set (HAP2S_E) losses,
// computed from their own definitions. They share no code with dro.hpp so the
// equivalence checks compare two independent routes.

#include "dropair/core.hpp"
#include "dropair/dro.hpp"
#include "dropair/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace dropair::recovery {

/// Weights indexed by pair. `w_pos` is nonzero only on positive pairs and
/// `w_neg` only on negative pairs; anchors with an empty group contribute
/// nothing to that map.
struct GroupWeights {
  std::vector<double> w_pos;
  std::vector<double> w_neg;
  double loss_value = 0.0;
  std::vector<std::uint8_t> anchor_active;  // LS only: hinged anchor term > 0
};

namespace detail {

inline double log_sum_exp(const std::vector<double>& a, bool with_zero) {
  double top = with_zero ? 0.0 : -std::numeric_limits<double>::infinity();
  for (double v : a) top = std::max(top, v);
  double s = with_zero ? std::exp(-top) : 0.0;
  for (double v : a) s += std::exp(v - top);
  return top + std::log(s);
}

/// For each member k of `group`, writes exp(a_k - LSE) into out[k], where
/// a_k = scale * S(i, j_k) and the LSE optionally includes a zero exponent.
inline double group_softmax(const SimilarityMatrix& sim, const PairSystem& pairs, const std::vector<std::size_t>& group,
                            double scale, double offset, bool with_zero, std::vector<double>& out) {
  std::vector<double> a;
  a.reserve(group.size());
  for (auto k : group) {
    const Pair& p = pairs.pairs[k];
    a.push_back(scale * sim(p.i, p.j) + offset);
  }
  const double lse = log_sum_exp(a, with_zero);
  for (std::size_t t = 0; t < group.size(); ++t) out[group[t]] = std::exp(a[t] - lse);
  return lse;
}

}  // namespace detail

/// LS weights w+_ij = 1 / sum_{k in P_i} e^{S_ij - S_ik} and
/// w-_ij = 1 / sum_{k in N_i} e^{S_ik - S_ij}, plus the hinged LS loss value.
/// The weights ignore the outer hinge; `anchor_active` marks anchors whose
/// hinged term is positive.
inline GroupWeights ls_weights(const SimilarityMatrix& sim, const PairSystem& pairs, double lambda) {
  GroupWeights g;
  g.w_pos.assign(pairs.size(), 0.0);
  g.w_neg.assign(pairs.size(), 0.0);
  g.anchor_active.assign(pairs.batch_size, 0);
  for (int i = 0; i < pairs.batch_size; ++i) {
    const auto& pos = pairs.pos_groups[i];
    const auto& neg = pairs.neg_groups[i];
    double term = 0.0;
    bool finite = true;
    if (!pos.empty()) term += detail::group_softmax(sim, pairs, pos, -1.0, lambda, false, g.w_pos);
    else finite = false;
    if (!neg.empty()) term += detail::group_softmax(sim, pairs, neg, 1.0, -lambda, false, g.w_neg);
    else finite = false;
    if (finite && term > 0.0) {
      g.loss_value += term;
      g.anchor_active[i] = 1;
    }
  }
  return g;
}

/// MS gradient weights with separate thresholds for the positive and the
/// negative side:
///   w+_ij = 1 / (e^{alpha (S_ij - lambda_pos)} + sum_{k in P_i} e^{alpha (S_ij - S_ik)})
///   w-_ij = 1 / (e^{beta (lambda_neg - S_ij)} + sum_{k in N_i} e^{beta (S_ik - S_ij)})
/// The loss value carries the 1/B prefactor; the weights do not.
inline GroupWeights ms_weights(const SimilarityMatrix& sim, const PairSystem& pairs, double alpha, double beta,
                               double lambda_pos, double lambda_neg) {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw Error(ErrorKind::configuration, "alpha and beta must be positive");
  GroupWeights g;
  g.w_pos.assign(pairs.size(), 0.0);
  g.w_neg.assign(pairs.size(), 0.0);
  double total = 0.0;
  for (int i = 0; i < pairs.batch_size; ++i) {
    if (!pairs.pos_groups[i].empty())
      total += detail::group_softmax(sim, pairs, pairs.pos_groups[i], -alpha, alpha * lambda_pos, true, g.w_pos) / alpha;
    if (!pairs.neg_groups[i].empty())
      total += detail::group_softmax(sim, pairs, pairs.neg_groups[i], beta, -beta * lambda_neg, true, g.w_neg) / beta;
  }
  g.loss_value = total / static_cast<double>(pairs.batch_size);
  return g;
}

/// MS weights with the single threshold of the original loss.
inline GroupWeights ms_weights(const SimilarityMatrix& sim, const PairSystem& pairs, double alpha, double beta,
                               double lambda) {
  return ms_weights(sim, pairs, alpha, beta, lambda, lambda);
}

/// Normalized exponential point-to-set weights q_ij / sum_k q_ik with
/// q+ = exp(-S / gamma) on positives and q- = exp(S / gamma) on negatives.
inline GroupWeights hap2s_e_weights(const SimilarityMatrix& sim, const PairSystem& pairs, double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw Error(ErrorKind::configuration, "gamma must be positive");
  GroupWeights g;
  g.w_pos.assign(pairs.size(), 0.0);
  g.w_neg.assign(pairs.size(), 0.0);
  for (int i = 0; i < pairs.batch_size; ++i) {
    if (!pairs.pos_groups[i].empty())
      detail::group_softmax(sim, pairs, pairs.pos_groups[i], -1.0 / gamma, 0.0, false, g.w_pos);
    if (!pairs.neg_groups[i].empty())
      detail::group_softmax(sim, pairs, pairs.neg_groups[i], 1.0 / gamma, 0.0, false, g.w_neg);
  }
  return g;
}

/// Coefficients of dS_ij/dtheta in the loss gradient: -w+ on positives, +w- on
/// negatives. With `hinged`, anchors outside `anchor_active` are zeroed.
inline std::vector<double> signed_coeffs(const GroupWeights& g, const PairSystem& pairs, bool hinged = false) {
  std::vector<double> c(pairs.size(), 0.0);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Pair& p = pairs.pairs[k];
    if (hinged && !g.anchor_active.empty() && !g.anchor_active[p.i]) continue;
    c[k] = p.positive() ? -g.w_pos[k] : g.w_neg[k];
  }
  return c;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
  return d;
}

struct EquivalenceReport {
  std::string status = "ok";  // "ok" or "hinge-active"
  double tolerance = 1e-10;
  double ls_discrepancy = 0.0;
  double ms_discrepancy = 0.0;          // against MS with a single threshold lambda
  double ms_split_discrepancy = 0.0;    // against MS with thresholds c+ / c-
  double hap2s_discrepancy = 0.0;
  double gamma = 0.0;
  std::size_t zero_loss_pairs = 0;

  bool ls_pass() const { return status == "ok" && ls_discrepancy <= tolerance; }
  bool ms_pass() const { return status == "ok" && ms_discrepancy <= tolerance; }
  bool ms_split_pass() const { return status == "ok" && ms_split_discrepancy <= tolerance; }
  bool hap2s_pass() const { return status == "ok" && hap2s_discrepancy <= tolerance; }

  /// Flat key=value text, one entry per line.
  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "status=" << status << '\n'
       << "tolerance=" << tolerance << '\n'
       << "zero_loss_pairs=" << zero_loss_pairs << '\n'
       << "ls_discrepancy=" << ls_discrepancy << '\n'
       << "ls_pass=" << (ls_pass() ? "true" : "false") << '\n'
       << "ms_discrepancy=" << ms_discrepancy << '\n'
       << "ms_pass=" << (ms_pass() ? "true" : "false") << '\n'
       << "ms_split_discrepancy=" << ms_split_discrepancy << '\n'
       << "ms_split_pass=" << (ms_split_pass() ? "true" : "false") << '\n'
       << "hap2s_gamma=" << gamma << '\n'
       << "hap2s_discrepancy=" << hap2s_discrepancy << '\n'
       << "hap2s_pass=" << (hap2s_pass() ? "true" : "false") << '\n';
    return os.str();
  }
};

/// Compares the grouped DRO weights with the reference loss weights on one
/// batch under margin base losses:
///  (a) grouped KL at gamma = 1 against LS (signed coefficients),
///  (b) slack-augmented grouped KL with MS-tied parameters against MS,
///  (c) grouped KL at cfg.gamma against HAP2S_E at cfg.gamma.
/// Requires every margin loss to be positive; otherwise the status is
/// "hinge-active" and no discrepancy is computed.
inline EquivalenceReport equivalence_report(const EmbeddingBatch& batch, const DroConfig& cfg) {
  EquivalenceReport r;
  r.gamma = cfg.gamma;
  const PairSystem pairs = build_pair_system(batch.labels, false);
  const SimilarityMatrix sim = similarity(batch);
  const PairLossMatrix losses = loss_matrix(sim, pairs, cfg, LossKind::margin);
  r.zero_loss_pairs = losses.size() - losses.count_active();
  if (r.zero_loss_pairs > 0) {
    r.status = "hinge-active";
    return r;
  }

  const auto kl1 = weighted_subgradient_coeffs(solve_kl_grouped(losses, pairs, 1.0, 1.0), losses);
  r.ls_discrepancy = max_abs_diff(kl1, signed_coeffs(ls_weights(sim, pairs, cfg.lambda), pairs));

  DroConfig tied = cfg;
  tied.tie_ms_parameters();
  const auto ms_dro = weighted_subgradient_coeffs(solve_ms_recovery(losses, pairs, tied), losses);
  r.ms_discrepancy =
      max_abs_diff(ms_dro, signed_coeffs(ms_weights(sim, pairs, cfg.alpha, cfg.beta, cfg.lambda), pairs));
  r.ms_split_discrepancy = max_abs_diff(
      ms_dro, signed_coeffs(ms_weights(sim, pairs, cfg.alpha, cfg.beta, tied.c_pos, tied.c_neg), pairs));

  const auto klg = weighted_subgradient_coeffs(solve_kl_grouped(losses, pairs, cfg.gamma, cfg.gamma), losses);
  r.hap2s_discrepancy = max_abs_diff(klg, signed_coeffs(hap2s_e_weights(sim, pairs, cfg.gamma), pairs));
  return r;
}

}  // namespace dropair::recovery
