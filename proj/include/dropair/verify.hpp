#pragma once

// Numerical self-checks: closed-form solvers against the slow oracles,
// grouped weights against the reference loss weights, and the analytic
// backward pass against finite differences.

#include "dropair/core.hpp"
#include "dropair/dro.hpp"
#include "dropair/losses.hpp"
#include "dropair/model.hpp"
#include "dropair/oracle.hpp"
#include "dropair/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dropair::verify {

struct Check {
  std::string name;
  bool passed = false;
  double worst = 0.0;  // largest observed discrepancy
  double tolerance = 0.0;
  std::string detail;
};

namespace detail {

inline std::vector<double> uniform_losses(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> l(n);
  for (auto& v : l) v = u(rng);
  return l;
}

inline Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = g(rng);
  return m;
}

inline std::vector<int> balanced_labels(int classes, int per_class) {
  std::vector<int> labels;
  for (int c = 0; c < classes; ++c)
    for (int t = 0; t < per_class; ++t) labels.push_back(c);
  return labels;
}

inline Check make_check(std::string name, double worst, double tol, std::string detail = {}) {
  return {std::move(name), worst <= tol, worst, tol, std::move(detail)};
}

}  // namespace detail

/// Closed-form KL, top-K and chi-square solvers against the oracles on
/// `count` loss vectors with n cycling through {5, 16, 64}. Also checks the
/// mean + sqrt(2 rho Var / n) identity on the chi-square instances whose
/// weights are all strictly positive.
inline std::vector<Check> oracle_equivalence(std::uint64_t seed, int count = 100) {
  std::mt19937_64 rng(seed);
  const std::size_t sizes[] = {5, 16, 64};
  const double gammas[] = {0.01, 0.1, 1.0};
  const double rhos[] = {0.05, 0.25, 1.0};
  double kl_gap = 0.0, topk_gap = 0.0, chi2_gap = 0.0, var_gap = 0.0;
  int interior = 0;
  for (int t = 0; t < count; ++t) {
    const std::size_t n = sizes[t % 3];
    const auto l = detail::uniform_losses(rng, n);
    const auto losses = PairLossMatrix::from_losses(l, true);

    for (double g : gammas) {
      const auto w = solve_kl(losses, g);
      const auto ref = oracle::simplex_ascent(l, oracle::Regularizer::kl(g));
      const double at_w = oracle::regularized_value(w.weights, l, oracle::Regularizer::kl(g));
      kl_gap = std::max({kl_gap, std::abs(w.robust_value - ref.value), std::abs(at_w - ref.value)});
    }

    std::uniform_int_distribution<int> pick_k(1, static_cast<int>(n));
    const int k = pick_k(rng);
    const double topk = solve_topk(losses, k).robust_value;
    topk_gap = std::max(topk_gap, std::abs(topk - oracle::topk_oracle(l, k)));

    for (double rho : rhos) {
      const auto w = solve_chi2(losses, rho);
      chi2_gap = std::max(chi2_gap, std::abs(w.robust_value - oracle::chi2_oracle(l, rho)));
      if (std::all_of(w.weights.begin(), w.weights.end(), [](double p) { return p > 0.0; })) {
        const double nd = static_cast<double>(n);
        double mean = 0.0, var = 0.0;
        for (double v : l) mean += v;
        mean /= nd;
        for (double v : l) var += (v - mean) * (v - mean);
        var /= nd;
        var_gap = std::max(var_gap, std::abs(w.robust_value - (mean + std::sqrt(2.0 * rho * var / nd))));
        ++interior;
      }
    }
  }
  std::vector<Check> out;
  out.push_back(detail::make_check("kl_vs_ascent", kl_gap, 1e-8));
  out.push_back(detail::make_check("topk_vs_sort", topk_gap, 0.0));
  out.push_back(detail::make_check("chi2_vs_oracle", chi2_gap, 1e-4));
  Check var = detail::make_check("chi2_variance_identity", var_gap, 1e-8,
                                 std::to_string(interior) + " interior instances");
  var.passed = var.passed && interior > 0;
  out.push_back(var);
  return out;
}

/// Random unit embeddings with every margin loss positive (m = 2 covers the
/// whole similarity range at lambda = 0.5).
struct RecoveryBatch {
  Matrix inputs;
  EmbeddingModel model;
  EmbeddingBatch batch;
};

inline RecoveryBatch recovery_batch(std::mt19937_64& rng, int b = 8, int d = 4, int input_dim = 6) {
  RecoveryBatch r;
  r.inputs = detail::gaussian(rng, b, input_dim);
  r.model = EmbeddingModel::make(ModelKind::linear, input_dim, d, 0, rng());
  r.batch = EmbeddingBatch::make(r.inputs, forward(r.model, r.inputs), detail::balanced_labels(b / 2, 2));
  return r;
}

inline DroConfig recovery_config() {
  DroConfig cfg;
  cfg.margin = 2.0;
  cfg.lambda = 0.5;
  cfg.alpha = 2.0;
  cfg.beta = 50.0;
  return cfg;
}

/// LS, MS and HAP2S_E recovery on `count` random batches. The LS row also
/// compares the full parameter gradients produced by the two weightings.
inline std::vector<Check> recovery_equivalence(std::uint64_t seed, int count = 100) {
  std::mt19937_64 rng(seed);
  const double hap2s_gammas[] = {0.1, 0.5, 1.0};
  double ls = 0.0, ls_grad = 0.0, ms = 0.0, ms_split = 0.0, hap2s = 0.0;
  int hinge_active = 0;
  for (int t = 0; t < count; ++t) {
    const RecoveryBatch rb = recovery_batch(rng);
    DroConfig cfg = recovery_config();
    for (double g : hap2s_gammas) {
      cfg.gamma = g;
      const auto report = recovery::equivalence_report(rb.batch, cfg);
      if (report.status != "ok") {
        ++hinge_active;
        continue;
      }
      ls = std::max(ls, report.ls_discrepancy);
      ms = std::max(ms, report.ms_discrepancy);
      ms_split = std::max(ms_split, report.ms_split_discrepancy);
      hap2s = std::max(hap2s, report.hap2s_discrepancy);
    }

    const PairSystem pairs = build_pair_system(rb.batch.labels);
    const SimilarityMatrix sim = similarity(rb.batch);
    const PairLossMatrix losses = loss_matrix(sim, pairs, cfg, LossKind::margin);
    const auto dro = weighted_subgradient_coeffs(solve_kl_grouped(losses, pairs, 1.0, 1.0), losses);
    const auto ref = recovery::signed_coeffs(recovery::ls_weights(sim, pairs, cfg.lambda), pairs);
    const Vector diff = backward(rb.model, rb.inputs, pairs, dro) - backward(rb.model, rb.inputs, pairs, ref);
    ls_grad = std::max(ls_grad, diff.lpNorm<Eigen::Infinity>());
  }
  const std::string note = hinge_active > 0 ? std::to_string(hinge_active) + " hinge-active batches" : "";
  std::vector<Check> out;
  out.push_back(detail::make_check("ls_weights", ls, 1e-10, note));
  out.push_back(detail::make_check("ls_gradient", ls_grad, 1e-8));
  out.push_back(detail::make_check("ms_weights", ms, 1e-10, "MS with the single threshold lambda"));
  out.push_back(detail::make_check("ms_split_weights", ms_split, 1e-10, "MS with thresholds lambda+m / lambda-m"));
  out.push_back(detail::make_check("hap2s_e_weights", hap2s, 1e-10));
  if (hinge_active > 0)
    for (auto& c : out) c.passed = false;
  return out;
}

/// Robust value of one batch with the weights re-solved at `model`. By
/// Danskin's theorem its gradient is backward(weighted_subgradient_coeffs(p*)).
inline double resolved_objective(const EmbeddingModel& model, const Matrix& inputs, const PairSystem& pairs,
                                 const DroConfig& cfg, LossKind kind) {
  const SimilarityMatrix sim = similarity(forward(model, inputs));
  return solve(loss_matrix(sim, pairs, cfg, kind), pairs, cfg).robust_value;
}

/// backward against central differences on `count` random (model, batch,
/// variant) triples, differentiating the robust value with p re-solved per
/// evaluation, at points where no margin loss is within 1e-3 of its kink. Relative max-norm error against the numerical gradient.
inline Check gradient_check(std::uint64_t seed, int count = 20) {
  std::mt19937_64 rng(seed);
  const DroVariant variants[] = {DroVariant::avg,    DroVariant::max,  DroVariant::topk,       DroVariant::topk_pn,
                                 DroVariant::kl,     DroVariant::chi2, DroVariant::kl_grouped, DroVariant::ms_recovery};
  double worst = 0.0;
  std::string where;
  int done = 0, attempts = 0;
  while (done < count) {
    if (++attempts > 100 * count) return {"finite_difference", false, worst, 1e-4, "no admissible points found"};
    const DroVariant variant = variants[done % 8];
    const ModelKind kind = done % 2 == 0 ? ModelKind::linear : ModelKind::one_hidden;
    const LossKind loss_kind = done % 4 == 3 ? LossKind::binomial : LossKind::margin;
    std::uniform_int_distribution<int> dim(2, 8);
    const int input_dim = dim(rng), out_dim = dim(rng), hidden = dim(rng);
    const int classes = 2 + static_cast<int>(rng() % 3);  // B = 4, 6 or 8
    const auto labels = detail::balanced_labels(classes, 2);
    const Matrix inputs = detail::gaussian(rng, static_cast<Eigen::Index>(labels.size()), input_dim);
    const EmbeddingModel model = EmbeddingModel::make(kind, input_dim, out_dim, hidden, rng());

    DroConfig cfg;
    cfg.variant = variant;
    cfg.k = variant == DroVariant::topk_pn ? 4 : 5;
    cfg.gamma = cfg.gamma_pos = cfg.gamma_neg = 0.5;
    if (variant == DroVariant::ms_recovery) cfg.tie_ms_parameters();
    const PairSystem pairs = build_pair_system(labels);
    const SimilarityMatrix sim = similarity(forward(model, inputs));
    if (loss_kind == LossKind::margin) {
      bool near_kink = false;
      for (const Pair& p : pairs.pairs)
        near_kink = near_kink || std::abs(cfg.margin + p.y * (cfg.lambda - sim(p.i, p.j))) <= 1e-3;
      if (near_kink) continue;
    }
    const PairLossMatrix losses = loss_matrix(sim, pairs, cfg, loss_kind);
    if (losses.count_active() == 0) continue;
    const WeightAssignment w = solve(losses, pairs, cfg);
    const Vector analytic = backward(model, inputs, pairs, weighted_subgradient_coeffs(w, losses));

    EmbeddingModel probe = model;
    const Vector numeric = oracle::finite_diff_grad(
        [&](const Vector& theta) {
          probe.set_params(theta);
          return resolved_objective(probe, inputs, pairs, cfg, loss_kind);
        },
        model.params(), 1e-6);
    // A vanishing gradient (dead rectifiers) leaves only differencing noise
    // to compare, so such points are redrawn.
    const double scale = numeric.lpNorm<Eigen::Infinity>();
    if (scale < 1e-6) continue;
    const double err = (analytic - numeric).lpNorm<Eigen::Infinity>() / scale;
    if (err > worst || done == 0) {
      worst = err;
      where = std::string(to_string(variant)) + "/" + std::string(to_string(kind)) + "/" +
              std::string(to_string(loss_kind));
    }
    ++done;
  }
  return detail::make_check("finite_difference", worst, 1e-4,
                            std::to_string(count) + " triples, worst at " + where);
}

/// Every suite run by `dropair verify`.
inline std::vector<Check> run_all(std::uint64_t seed) {
  std::vector<Check> out = oracle_equivalence(seed);
  for (auto& c : recovery_equivalence(seed + 1)) out.push_back(std::move(c));
  out.push_back(gradient_check(seed + 2));
  return out;
}

}  // namespace dropair::verify
