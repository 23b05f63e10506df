#include "dropair/dataset.hpp"
#include "dropair/model.hpp"
#include "dropair/oracle.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace dropair;

namespace {

Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = g(rng);
  return m;
}

double weighted_similarity(const EmbeddingModel& model, const Matrix& x, const PairSystem& ps,
                           const std::vector<double>& coeffs) {
  const Matrix f = forward(model, x);
  double v = 0.0;
  for (std::size_t k = 0; k < ps.size(); ++k) v += coeffs[k] * f.row(ps.pairs[k].i).dot(f.row(ps.pairs[k].j));
  return v;
}

}  // namespace

TEST(Forward, IdentityWeights) {
  EmbeddingModel m = EmbeddingModel::make(ModelKind::linear, 3, 3, 0, 1);
  m.w1 = Matrix::Identity(3, 3);
  Matrix x(1, 3);
  x << 0.6, 0.0, 0.8;
  EXPECT_LE((forward(m, x) - x).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Forward, UnitNormsAndScaleInvariance) {
  for (auto kind : {ModelKind::linear, ModelKind::one_hidden}) {
    const EmbeddingModel m = EmbeddingModel::make(kind, 5, 3, 7, 2);
    const Matrix x = random_matrix(6, 5, 3);
    const Matrix f = forward(m, x);
    for (int r = 0; r < 6; ++r) EXPECT_NEAR(f.row(r).norm(), 1.0, 1e-9);
    EXPECT_LE((forward(m, 3.5 * x) - f).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, ZeroRowAndShapeError) {
  const EmbeddingModel m = EmbeddingModel::make(ModelKind::linear, 2, 2, 0, 1);
  const Matrix f = forward(m, Matrix::Zero(1, 2));
  EXPECT_NEAR(f.row(0).norm(), 1.0, 1e-9);
  try {
    forward(m, Matrix::Zero(1, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(Params, RoundTrip) {
  EmbeddingModel m = EmbeddingModel::make(ModelKind::one_hidden, 4, 3, 5, 9);
  EXPECT_EQ(m.param_count(), 4 * 5 + 5 * 3);
  Vector p = m.params();
  p(0) += 1.0;
  m.set_params(p);
  EXPECT_EQ(m.params(), p);
  EXPECT_THROW(m.set_params(Vector::Zero(3)), Error);
}

TEST(Backward, ZeroCoefficients) {
  const EmbeddingModel m = EmbeddingModel::make(ModelKind::one_hidden, 4, 3, 5, 9);
  const PairSystem ps = build_pair_system({0, 0, 1});
  const Vector g = backward(m, random_matrix(3, 4, 1), ps, std::vector<double>(ps.size(), 0.0));
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, SinglePairMatchesFiniteDifferences) {
  EmbeddingModel m = EmbeddingModel::make(ModelKind::linear, 2, 2, 0, 4);
  const Matrix x = random_matrix(2, 2, 5);
  const PairSystem ps = build_pair_system({0, 0});
  const std::vector<double> coeffs{-1.0, 0.0};
  const Vector g = backward(m, x, ps, coeffs);
  const Vector fd = oracle::finite_diff_grad(
      [&](const Vector& theta) {
        EmbeddingModel probe = m;
        probe.set_params(theta);
        return weighted_similarity(probe, x, ps, coeffs);
      },
      m.params(), 1e-6);
  EXPECT_LE((g - fd).cwiseAbs().maxCoeff(), 1e-5 * fd.cwiseAbs().maxCoeff());
}

TEST(Backward, OneHiddenMatchesFiniteDifferences) {
  EmbeddingModel m = EmbeddingModel::make(ModelKind::one_hidden, 4, 3, 6, 8);
  const Matrix x = random_matrix(5, 4, 6);
  const PairSystem ps = build_pair_system({0, 0, 1, 1, 2});
  std::vector<double> coeffs(ps.size());
  for (std::size_t k = 0; k < coeffs.size(); ++k) coeffs[k] = ps.pairs[k].positive() ? -0.3 : 0.1 * (k % 3);
  const Vector g = backward(m, x, ps, coeffs);
  const Vector fd = oracle::finite_diff_grad(
      [&](const Vector& theta) {
        EmbeddingModel probe = m;
        probe.set_params(theta);
        return weighted_similarity(probe, x, ps, coeffs);
      },
      m.params(), 1e-6);
  EXPECT_LE((g - fd).cwiseAbs().maxCoeff(), 1e-5 * fd.cwiseAbs().maxCoeff());
}

TEST(Backward, SwappingIdenticalExamples) {
  const EmbeddingModel m = EmbeddingModel::make(ModelKind::linear, 3, 2, 0, 2);
  Matrix x = random_matrix(3, 3, 7);
  x.row(1) = x.row(0);
  Matrix swapped = x;
  swapped.row(0).swap(swapped.row(1));
  const PairSystem ps = build_pair_system({0, 0, 1});
  std::vector<double> coeffs(ps.size());
  for (std::size_t k = 0; k < coeffs.size(); ++k) coeffs[k] = 0.1 * (1 + k);
  EXPECT_LE((backward(m, x, ps, coeffs) - backward(m, swapped, ps, coeffs)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SampleBatch, TwoClassesTwoEach) {
  TrainConfig cfg;
  cfg.classes_per_batch = 2;
  cfg.m_per_class = 2;
  const std::vector<int> labels{0, 0, 0, 1, 1, 1};
  const auto draw = sample_batch(labels, cfg, 3);
  ASSERT_EQ(draw.indices.size(), 4u);
  int zeros = 0;
  for (auto i : draw.indices) zeros += labels[i] == 0;
  EXPECT_EQ(zeros, 2);
  EXPECT_EQ(std::set<std::size_t>(draw.indices.begin(), draw.indices.end()).size(), 4u);
  EXPECT_TRUE(draw.warnings.empty());
  EXPECT_EQ(sample_batch(labels, cfg, 3).indices, draw.indices);
}

TEST(SampleBatch, SmallClassRepeats) {
  TrainConfig cfg;
  cfg.classes_per_batch = 2;
  cfg.m_per_class = 2;
  const auto draw = sample_batch({0, 1, 1}, cfg, 0);
  ASSERT_EQ(draw.indices.size(), 4u);
  EXPECT_EQ(std::count(draw.indices.begin(), draw.indices.end(), 0u), 2);
}

TEST(SampleBatch, TooFewClassesWarns) {
  TrainConfig cfg;
  cfg.classes_per_batch = 5;
  cfg.m_per_class = 2;
  const auto draw = sample_batch({0, 0, 1, 1}, cfg, 0);
  EXPECT_EQ(draw.indices.size(), 4u);
  EXPECT_EQ(draw.warnings.size(), 1u);
}

TEST(Train, ZeroLearningRateIsFlat) {
  const Dataset data = gen_synthetic(4, 10, 6, 0.5, 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  cfg.dro.k = 20;
  const auto r = train(data, cfg);
  ASSERT_EQ(r.history.size(), 3u);
  const EmbeddingModel init = EmbeddingModel::make(cfg.model_kind, 6, cfg.embedding_dim, cfg.hidden_dim, cfg.seed + 1);
  EXPECT_EQ(r.model.params(), init.params());
  for (const auto& h : r.history) EXPECT_EQ(h.recall1, r.history[0].recall1);
}

TEST(Train, Deterministic) {
  const Dataset data = gen_synthetic(4, 15, 6, 0.5, 2);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.dro.variant = DroVariant::kl;
  const auto a = train(data, cfg), b = train(data, cfg);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    EXPECT_EQ(a.history[e].robust_loss, b.history[e].robust_loss);
    EXPECT_EQ(a.history[e].recall1, b.history[e].recall1);
  }
  EXPECT_EQ(a.model.params(), b.model.params());
}

TEST(Train, SeparableClustersReachPerfectRecall) {
  const Dataset data = gen_synthetic(2, 30, 8, 0.1, 3);
  TrainConfig cfg;
  cfg.classes_per_batch = 2;
  cfg.dro.variant = DroVariant::topk_pn;
  cfg.dro.k = 20;
  const auto r = train(data, cfg);
  EXPECT_EQ(r.history.back().recall1, 1.0);
}

TEST(Train, RobustLossDecreasesEarly) {
  const Dataset data = gen_synthetic(4, 30, 8, 0.15, 4);
  for (auto v : {DroVariant::avg, DroVariant::max, DroVariant::topk, DroVariant::topk_pn, DroVariant::kl,
                 DroVariant::chi2, DroVariant::kl_grouped, DroVariant::ms_recovery}) {
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.dro.variant = v;
    cfg.dro.k = 20;
    if (v == DroVariant::ms_recovery) cfg.dro.tie_ms_parameters();
    const auto r = train(data, cfg);
    EXPECT_LT(r.history[4].robust_loss, r.history[0].robust_loss) << to_string(v);
  }
}

TEST(Train, BaselinesRun) {
  const Dataset data = gen_synthetic(4, 15, 6, 0.5, 5);
  for (auto b : {Baseline::semihard, Baseline::dws, Baseline::ms_mining}) {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.baseline = b;
    const auto r = train(data, cfg);
    EXPECT_EQ(r.history.size(), 2u);
  }
}

TEST(SplitHoldout, Partition) {
  const auto [tr, te] = split_holdout(50, 0.2, 7);
  EXPECT_EQ(te.size(), 10u);
  EXPECT_EQ(tr.size(), 40u);
  std::set<std::size_t> all(tr.begin(), tr.end());
  all.insert(te.begin(), te.end());
  EXPECT_EQ(all.size(), 50u);
}
