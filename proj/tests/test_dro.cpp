#include "dropair/dro.hpp"
#include "dropair/losses.hpp"
#include "dropair/oracle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

using namespace dropair;

namespace {

PairLossMatrix losses_of(std::vector<double> l, bool keep_zero = false) {
  return PairLossMatrix::from_losses(std::move(l), keep_zero);
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

/// Exhaustive search over p = (a, 1 - a) on a fine grid.
template <class F>
std::pair<double, double> grid_max_2(F objective, int cells = 1000000) {
  double best = -1e300, arg = 0.0;
  for (int g = 0; g <= cells; ++g) {
    const double a = static_cast<double>(g) / cells;
    const double v = objective(a);
    if (v > best) {
      best = v;
      arg = a;
    }
  }
  return {best, arg};
}

/// A pair system with given positive / negative counts for a single anchor
/// (anchor 0) plus filler anchors; returns the system and the indices.
PairSystem two_class_system(int pos, int neg) {
  std::vector<int> labels(1 + pos, 0);
  labels.insert(labels.end(), neg, 1);
  return build_pair_system(labels);
}

}  // namespace

TEST(SolveAvg, Examples) {
  auto w = solve_avg(losses_of({0.4, 0.0, 0.4, 0.0}));
  for (double p : w.weights) EXPECT_DOUBLE_EQ(p, 0.25);
  EXPECT_DOUBLE_EQ(w.robust_value, 0.2);
  w = solve_avg(losses_of({0.7}));
  EXPECT_DOUBLE_EQ(w.weights[0], 1.0);
  EXPECT_DOUBLE_EQ(w.robust_value, 0.7);
  EXPECT_DOUBLE_EQ(solve_avg(losses_of({0.0, 0.0})).robust_value, 0.0);
}

TEST(SolveMax, ExamplesAndTies) {
  auto w = solve_max(losses_of({0.9, 0.5, 0.1}));
  EXPECT_DOUBLE_EQ(w.robust_value, 0.9);
  EXPECT_EQ(w.weights, (std::vector<double>{1, 0, 0}));
  w = solve_max(losses_of({0.9, 0.9}));
  EXPECT_EQ(w.weights, (std::vector<double>{1, 0}));
  EXPECT_THROW(solve_max(losses_of({0.0, 0.0})), Error);
}

TEST(SolveTopK, Examples) {
  const auto l = losses_of({0.9, 0.5, 0.1, 0.3});
  auto w = solve_topk(l, 2);
  EXPECT_NEAR(w.robust_value, 0.7, 1e-15);
  EXPECT_EQ(w.weights, (std::vector<double>{0.5, 0.5, 0, 0}));
  EXPECT_DOUBLE_EQ(solve_topk(l, 1).robust_value, solve_max(l).robust_value);
  EXPECT_EQ(solve_topk(l, 1).weights, solve_max(l).weights);
  EXPECT_NEAR(solve_topk(l, 4).robust_value, (0.9 + 0.5 + 0.1 + 0.3) / 4, 1e-15);
}

TEST(SolveTopK, ClampsWithWarning) {
  const auto w = solve_topk(losses_of({0.9, 0.0, 0.3}), 5);
  EXPECT_EQ(w.warnings.size(), 1u);
  EXPECT_EQ(w.weights, (std::vector<double>{0.5, 0, 0.5}));
  EXPECT_NEAR(w.robust_value, 0.6, 1e-15);
}

TEST(SolveTopK, TiesGoToLowerIndex) {
  const auto w = solve_topk(losses_of({0.2, 0.5, 0.5, 0.5, 0.1}), 2);
  EXPECT_EQ(w.weights, (std::vector<double>{0, 0.5, 0.5, 0, 0}));
}

TEST(SolveTopK, MatchesSortOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> l(1 + t * 7);
    for (auto& v : l) v = u(rng);
    const int k = 1 + static_cast<int>(rng() % l.size());
    const auto w = solve_topk(losses_of(l), k);
    EXPECT_EQ(w.robust_value, oracle::topk_oracle(l, k));
    EXPECT_NEAR(sum(w.weights), 1.0, 1e-9);
    for (double p : w.weights) EXPECT_LE(p, 1.0 / k + 1e-15);
  }
}

TEST(SolveTopKPn, PerSideSelection) {
  // Anchor 0 has 2 positives and 3 negatives; other anchors' pairs get zero
  // loss so only anchor 0's pairs are active.
  const PairSystem ps = two_class_system(2, 3);
  std::vector<double> l(ps.size(), 0.0);
  const double pos_loss[] = {0.4, 0.1};
  const double neg_loss[] = {0.9, 0.5, 0.3};
  for (std::size_t t = 0; t < 2; ++t) l[ps.pos_groups[0][t]] = pos_loss[t];
  for (std::size_t t = 0; t < 3; ++t) l[ps.neg_groups[0][t]] = neg_loss[t];
  const auto losses = losses_of(l);

  auto w = solve_topk_pn(losses, ps, 4);
  EXPECT_EQ(w.flavor, WeightFlavor::binary_selection);
  EXPECT_EQ(w.count_selected(), 4u);
  EXPECT_EQ(w.weights[ps.pos_groups[0][0]], 1.0);
  EXPECT_EQ(w.weights[ps.pos_groups[0][1]], 1.0);
  EXPECT_EQ(w.weights[ps.neg_groups[0][0]], 1.0);
  EXPECT_EQ(w.weights[ps.neg_groups[0][1]], 1.0);
  EXPECT_NEAR(w.robust_value, (0.4 + 0.1 + 0.9 + 0.5) / 4, 1e-15);

  w = solve_topk_pn(losses, ps, 2);
  EXPECT_EQ(w.count_selected(), 2u);
  EXPECT_EQ(w.weights[ps.pos_groups[0][0]], 1.0);
  EXPECT_EQ(w.weights[ps.neg_groups[0][0]], 1.0);
}

TEST(SolveTopKPn, OneSidedShortfall) {
  const PairSystem ps = two_class_system(1, 3);
  std::vector<double> l(ps.size(), 0.0);
  l[ps.pos_groups[0][0]] = 0.4;
  for (std::size_t t = 0; t < 3; ++t) l[ps.neg_groups[0][t]] = 0.1 * (t + 1);
  const auto w = solve_topk_pn(losses_of(l), ps, 4);
  EXPECT_EQ(w.count_selected(), 3u);
  EXPECT_EQ(w.weights[ps.neg_groups[0][0]], 0.0);
}

TEST(SolveTopKPn, MatchesBruteForceOnRandomBatches) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 30; ++t) {
    std::vector<int> labels;
    for (int r = 0; r < 12; ++r) labels.push_back(static_cast<int>(rng() % 4));
    const PairSystem ps = build_pair_system(labels);
    std::vector<double> l(ps.size());
    // Coarse values so ties occur.
    for (auto& v : l) v = std::max(0.0, std::round(u(rng) * 8) / 8 - 0.25);
    const auto losses = losses_of(l);
    const int k = 2 * (1 + static_cast<int>(rng() % 10));
    const auto w = solve_topk_pn(losses, ps, k);

    for (int sign : {1, -1}) {
      std::vector<std::size_t> side;
      for (std::size_t idx = 0; idx < l.size(); ++idx)
        if (ps.pairs[idx].y == sign && l[idx] > 0.0) side.push_back(idx);
      std::stable_sort(side.begin(), side.end(), [&](auto a, auto b) { return l[a] > l[b]; });
      side.resize(std::min<std::size_t>(side.size(), k / 2));
      for (auto idx : side) EXPECT_EQ(w.weights[idx], 1.0) << t;
      std::size_t chosen = 0;
      for (std::size_t idx = 0; idx < l.size(); ++idx) chosen += (ps.pairs[idx].y == sign && w.weights[idx] != 0.0);
      EXPECT_EQ(chosen, side.size());
    }
  }
}

TEST(SolveKl, TwoLossExampleAgainstGridSearch) {
  const auto w = solve_kl(losses_of({1.0, 0.0}, true), 1.0);
  // Oracle: maximize a*1 - KL((a, 1-a) || uniform) on a grid.
  auto objective = [](double a) {
    double v = a;
    for (double q : {a, 1 - a})
      if (q > 0) v -= q * std::log(2 * q);
    return v;
  };
  const auto [best, arg] = grid_max_2(objective);
  EXPECT_NEAR(w.robust_value, best, 1e-10);
  EXPECT_NEAR(w.weights[0], arg, 1e-5);
  EXPECT_NEAR(w.weights[0], 0.7311, 5e-5);
  EXPECT_NEAR(w.weights[1], 0.2689, 5e-5);
  EXPECT_NEAR(w.robust_value, 0.6201, 5e-5);
}

TEST(SolveKl, Limits) {
  auto w = solve_kl(losses_of({0.3, 0.3, 0.3}), 0.1);
  for (double p : w.weights) EXPECT_NEAR(p, 1.0 / 3, 1e-15);
  w = solve_kl(losses_of({0.9, 0.2, 0.5}), 1e6);
  for (double p : w.weights) EXPECT_LE(std::abs(p - 1.0 / 3), 1e-5);
  // Inactive pairs get no weight; the reference uniform is over active pairs.
  w = solve_kl(losses_of({0.9, 0.0, 0.5}), 0.5);
  EXPECT_EQ(w.weights[1], 0.0);
  EXPECT_NEAR(w.weights[0] + w.weights[2], 1.0, 1e-15);
  EXPECT_THROW(solve_kl(losses_of({0.9}), 0.0), Error);
}

TEST(SolveKl, AgreesWithMirrorAscent) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  for (double gamma : {0.05, 0.3, 2.0}) {
    std::vector<double> l(12);
    for (auto& v : l) v = u(rng);
    const auto w = solve_kl(losses_of(l), gamma);
    const auto ref = oracle::simplex_ascent(l, oracle::Regularizer::kl(gamma));
    EXPECT_NEAR(w.robust_value, ref.value, 1e-8);
    for (std::size_t k = 0; k < l.size(); ++k) EXPECT_NEAR(w.weights[k], ref.weights[k], 1e-5);
  }
}

TEST(SolveChi2, TwoLossExampleAgainstLineSearch) {
  const auto w = solve_chi2(losses_of({0.0, 1.0}, true), 0.25);
  // Oracle: p = (1/2 - t, 1/2 + t) with sum (2 p_i - 1)^2 = 8 t^2 <= 2 rho.
  double best = -1e300, best_t = 0;
  for (int g = 0; g <= 1000000; ++g) {
    const double t = -0.5 + static_cast<double>(g) / 1000000;
    if (8 * t * t > 2 * 0.25 + 1e-15) continue;
    const double v = 0.5 + t;
    if (v > best) {
      best = v;
      best_t = t;
    }
  }
  EXPECT_NEAR(w.robust_value, best, 1e-6);
  EXPECT_NEAR(w.robust_value, 0.75, 1e-12);
  EXPECT_NEAR(w.weights[0], 0.5 - best_t, 1e-6);
  EXPECT_NEAR(w.weights[0], 0.25, 1e-12);
  EXPECT_NEAR(w.weights[1], 0.75, 1e-12);
}

TEST(SolveChi2, Limits) {
  EXPECT_NEAR(solve_chi2(losses_of({0.4, 0.4, 0.4}), 0.7).robust_value, 0.4, 1e-15);
  const std::vector<double> l{0.9, 0.2, 0.5, 0.3};
  EXPECT_NEAR(solve_chi2(losses_of(l), 1e-14).robust_value, 0.475, 1e-6);
  // The ball contains a vertex once rho >= n (n - 1) / 2.
  EXPECT_NEAR(solve_chi2(losses_of(l), 6.0).robust_value, 0.9, 1e-12);
  EXPECT_NEAR(solve_chi2(losses_of({0.1, 0.8}), 1.0).robust_value, 0.8, 1e-12);
}

TEST(SolveChi2, FeasibleAndAgreesWithOracle) {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 3 + t % 5;
    std::vector<double> l(n);
    for (auto& v : l) v = u(rng);
    for (double rho : {0.05, 0.5, 2.0}) {
      const auto w = solve_chi2(losses_of(l), rho);
      double dev = 0.0;
      for (double p : w.weights) {
        EXPECT_GE(p, 0.0);
        dev += (n * p - 1) * (n * p - 1);
      }
      EXPECT_LE(dev, 2 * rho * (1 + 1e-9));
      EXPECT_NEAR(sum(w.weights), 1.0, 1e-9);
      const double tol = n == 3 ? 2e-3 : 1e-4;  // n = 3 uses a coarse grid
      EXPECT_NEAR(w.robust_value, oracle::chi2_oracle(l, rho), tol) << n << " " << rho;
      EXPECT_GE(w.robust_value + 1e-12, oracle::chi2_oracle(l, rho));
    }
  }
}

TEST(SolveKlGrouped, TwoPositiveExample) {
  // One anchor with positives at S = 0.9 and 0.5 and a large margin: losses
  // m + lambda - S differ by 0.4.
  const PairSystem ps = two_class_system(2, 1);
  DroConfig cfg;
  cfg.margin = 2.0;
  std::vector<double> l(ps.size(), 0.0);
  l[ps.pos_groups[0][0]] = margin_loss(0.9, +1, cfg.margin, cfg.lambda).loss;
  l[ps.pos_groups[0][1]] = margin_loss(0.5, +1, cfg.margin, cfg.lambda).loss;
  l[ps.neg_groups[0][0]] = 0.3;
  const auto w = solve_kl_grouped(losses_of(l), ps, 1.0, 1.0);
  // Oracle: grid over the positive group's 2-simplex.
  const double l0 = l[ps.pos_groups[0][0]], l1 = l[ps.pos_groups[0][1]];
  const auto [best, arg] = grid_max_2([&](double a) {
    double v = a * l0 + (1 - a) * l1;
    for (double q : {a, 1 - a})
      if (q > 0) v -= q * std::log(2 * q);
    return v;
  });
  (void)best;
  EXPECT_NEAR(w.weights[ps.pos_groups[0][0]], arg, 1e-5);
  EXPECT_NEAR(w.weights[ps.pos_groups[0][0]], 0.4013, 5e-5);
  EXPECT_NEAR(w.weights[ps.pos_groups[0][1]], 0.5987, 5e-5);
  EXPECT_DOUBLE_EQ(w.weights[ps.neg_groups[0][0]], 1.0);
}

TEST(SolveKlGrouped, GroupSumsAndSymmetry) {
  const PairSystem ps = build_pair_system({0, 0, 0, 1, 1, 2});
  std::vector<double> l(ps.size(), 0.6);
  const auto w = solve_kl_grouped(losses_of(l), ps, 0.3, 0.7);
  EXPECT_EQ(w.flavor, WeightFlavor::per_anchor);
  for (int i = 0; i < ps.batch_size; ++i) {
    for (const auto* g : {&ps.pos_groups[i], &ps.neg_groups[i]}) {
      double s = 0;
      for (auto k : *g) {
        s += w.weights[k];
        EXPECT_NEAR(w.weights[k], 1.0 / g->size(), 1e-15);
      }
      if (!g->empty()) {
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
  }
}

TEST(SolveMsRecovery, ThresholdSimilarityGivesHalf) {
  // A single positive pair whose loss is zero relative to the slack... the
  // pair loss equals the slack loss (0), so both share the mass.
  const PairSystem ps = build_pair_system({0, 0});
  DroConfig cfg;
  cfg.variant = DroVariant::ms_recovery;
  cfg.tie_ms_parameters();
  const auto w = solve_ms_recovery(losses_of({0.0, 0.0}, true), ps, cfg);
  EXPECT_NEAR(w.weights[0], 0.5, 1e-15);
  EXPECT_NEAR(w.slack_pos[0], 0.5, 1e-15);
}

TEST(SolveMsRecovery, HugeLossTakesAllMass) {
  const PairSystem ps = build_pair_system({0, 0});
  DroConfig cfg;
  cfg.tie_ms_parameters();
  const auto w = solve_ms_recovery(losses_of({1e3, 1e3}), ps, cfg);
  EXPECT_NEAR(w.weights[0], 1.0, 1e-12);
  EXPECT_NEAR(w.slack_pos[0], 0.0, 1e-12);
}

TEST(SolveDispatcher, RoutesEveryVariant) {
  const PairSystem ps = build_pair_system({0, 0, 1, 1});
  std::vector<double> l(ps.size());
  for (std::size_t k = 0; k < l.size(); ++k) l[k] = 0.1 * (1 + k % 5);
  const auto losses = losses_of(l);
  DroConfig cfg;
  cfg.k = 4;
  for (auto v : {DroVariant::avg, DroVariant::max, DroVariant::topk, DroVariant::topk_pn, DroVariant::kl,
                 DroVariant::chi2, DroVariant::kl_grouped, DroVariant::ms_recovery}) {
    cfg.variant = v;
    const auto w = solve(losses, ps, cfg);
    EXPECT_NEAR(robust_objective(w, losses, ps, cfg), w.robust_value, 1e-12) << to_string(v);
  }
}

TEST(SolveDispatcher, EmptyActiveSet) {
  const PairSystem ps = build_pair_system({0, 1});
  DroConfig cfg;
  cfg.variant = DroVariant::kl;
  try {
    solve(losses_of({0.0, 0.0}), ps, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_active_set);
  }
}

TEST(RobustObjective, SolverWeightsBeatPerturbations) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  const PairSystem ps = build_pair_system({0, 0, 1, 1, 2, 2});
  std::vector<double> l(ps.size());
  for (auto& v : l) v = u(rng);
  const auto losses = losses_of(l);
  for (auto v : {DroVariant::kl, DroVariant::chi2, DroVariant::kl_grouped}) {
    DroConfig cfg;
    cfg.variant = v;
    cfg.gamma = cfg.gamma_pos = cfg.gamma_neg = 0.4;
    const auto w = solve(losses, ps, cfg);
    const double best = robust_objective(w, losses, ps, cfg);
    for (int t = 0; t < 20; ++t) {
      WeightAssignment other = w;
      // Move a little mass between two pairs sharing a group.
      const std::size_t a = ps.pos_groups[t % 6][0];
      const std::size_t b = ps.neg_groups[t % 6][t % 4];
      const std::size_t c = ps.neg_groups[t % 6][(t + 1) % 4];
      const double eps = 1e-3;
      if (v == DroVariant::kl_grouped) {
        if (other.weights[b] < eps) continue;
        other.weights[b] -= eps;
        other.weights[c] += eps;
      } else {
        if (other.weights[a] < eps) continue;
        other.weights[a] -= eps;
        other.weights[b] += eps;
        if (v == DroVariant::chi2) {
          double dev = 0;
          for (double p : other.weights) dev += (l.size() * p - 1) * (l.size() * p - 1);
          if (dev > 2 * cfg.rho) continue;
        }
      }
      EXPECT_LE(robust_objective(other, losses, ps, cfg), best + 1e-12) << to_string(v);
    }
  }
}

TEST(SamplePairs, DegenerateWeights) {
  WeightAssignment w;
  w.weights = {1.0, 0.0, 0.0};
  const PairSystem ps = build_pair_system({0, 1, 1});
  w.weights.resize(ps.size(), 0.0);
  for (auto k : sample_pairs(w, ps, 50, 7)) EXPECT_EQ(k, 0u);
}

TEST(SamplePairs, UniformFrequencies) {
  const PairSystem ps = build_pair_system({0, 0, 1, 1});
  const auto w = solve_avg(losses_of(std::vector<double>(ps.size(), 1.0)));
  const std::size_t n = 100000;
  const auto draws = sample_pairs(w, ps, n, 3);
  std::map<std::size_t, double> freq;
  for (auto k : draws) freq[k] += 1.0 / n;
  ASSERT_EQ(freq.size(), ps.size());
  double chi2 = 0.0;
  const double expected = static_cast<double>(n) / ps.size();
  for (auto& [k, f] : freq) {
    EXPECT_NEAR(f, 1.0 / ps.size(), 0.01);
    chi2 += (f * n - expected) * (f * n - expected) / expected;
  }
  // 11 degrees of freedom: the 0.999 quantile is about 31.3.
  EXPECT_LT(chi2, 31.3);
}

TEST(SamplePairs, Deterministic) {
  const PairSystem ps = build_pair_system({0, 0, 1, 1});
  std::vector<double> l(ps.size());
  for (std::size_t k = 0; k < l.size(); ++k) l[k] = 0.1 + 0.05 * k;
  const auto w = solve_kl_grouped(losses_of(l), ps, 0.5, 0.5);
  EXPECT_EQ(sample_pairs(w, ps, 40, 99), sample_pairs(w, ps, 40, 99));
  EXPECT_EQ(sample_pairs(w, ps, 40, 99).size(), 40u);
}

TEST(SubgradientCoeffs, Examples) {
  const double s = 0.3;
  const auto v = margin_loss(s, +1, 0.2, 0.5);
  const auto losses = PairLossMatrix::from_losses({v.loss, 0.0, 0.2}, false, {v.dloss_dS, 0.0, 1.0});
  WeightAssignment w;
  w.weights = {0.4, 0.0, 0.6};
  const auto c = weighted_subgradient_coeffs(w, losses);
  EXPECT_DOUBLE_EQ(c[0], -0.4);
  EXPECT_DOUBLE_EQ(c[1], 0.0);
  EXPECT_DOUBLE_EQ(c[2], 0.6);
  w.flavor = WeightFlavor::binary_selection;
  w.weights = {1.0, 0.0, 1.0};
  const auto b = weighted_subgradient_coeffs(w, losses);
  EXPECT_DOUBLE_EQ(b[0], -0.5);
  EXPECT_DOUBLE_EQ(b[2], 0.5);
}
