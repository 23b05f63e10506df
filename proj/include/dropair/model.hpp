#pragma once

// A small embedding network trained by SGD on DRO-weighted pair losses.

#include "dropair/core.hpp"
#include "dropair/dataset.hpp"
#include "dropair/dro.hpp"
#include "dropair/eval.hpp"
#include "dropair/losses.hpp"
#include "dropair/mining.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace dropair {

enum class ModelKind { linear, one_hidden };

/// x -> W1 x (linear) or x -> W2 relu(W1 x) (one hidden layer), followed by
/// row-wise L2 normalization. No bias terms.
struct EmbeddingModel {
  ModelKind kind = ModelKind::linear;
  Matrix w1;  // H x D (d x D for the linear kind)
  Matrix w2;  // d x H, empty for the linear kind

  Eigen::Index input_dim() const { return w1.cols(); }
  Eigen::Index output_dim() const { return kind == ModelKind::linear ? w1.rows() : w2.rows(); }
  Eigen::Index param_count() const { return w1.size() + w2.size(); }

  /// Uniform initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static EmbeddingModel make(ModelKind kind, int input_dim, int output_dim, int hidden_dim, std::uint64_t seed) {
    if (input_dim < 1 || output_dim < 1 || (kind == ModelKind::one_hidden && hidden_dim < 1))
      throw Error(ErrorKind::shape, "model dimensions must be positive");
    std::mt19937_64 rng(seed);
    auto fill = [&](Matrix& m, int fan_in) {
      std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = u(rng);
    };
    EmbeddingModel model;
    model.kind = kind;
    if (kind == ModelKind::linear) {
      model.w1.resize(output_dim, input_dim);
      fill(model.w1, input_dim);
    } else {
      model.w1.resize(hidden_dim, input_dim);
      model.w2.resize(output_dim, hidden_dim);
      fill(model.w1, input_dim);
      fill(model.w2, hidden_dim);
    }
    return model;
  }

  Vector params() const {
    Vector p(param_count());
    p.head(w1.size()) = Eigen::Map<const Vector>(w1.data(), w1.size());
    if (w2.size() > 0) p.tail(w2.size()) = Eigen::Map<const Vector>(w2.data(), w2.size());
    return p;
  }

  void set_params(const Vector& p) {
    if (p.size() != param_count()) throw Error(ErrorKind::shape, "parameter vector has the wrong length");
    Eigen::Map<Vector>(w1.data(), w1.size()) = p.head(w1.size());
    if (w2.size() > 0) Eigen::Map<Vector>(w2.data(), w2.size()) = p.tail(w2.size());
  }
};

inline std::string_view to_string(ModelKind k) { return k == ModelKind::linear ? "linear" : "one-hidden"; }

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "linear") return ModelKind::linear;
  if (s == "one-hidden") return ModelKind::one_hidden;
  throw Error(ErrorKind::configuration, "unknown model kind '" + std::string(s) + "'");
}

/// Intermediate values of one forward pass.
struct ForwardPass {
  Matrix pre;     // B x H hidden pre-activations (one-hidden only)
  Matrix hidden;  // B x H rectified activations (one-hidden only)
  Matrix raw;     // B x d before normalization
  Vector norms;   // ||raw_i||
  Matrix out;     // B x d unit rows
};

inline ForwardPass forward_pass(const EmbeddingModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.input_dim())
    throw Error(ErrorKind::shape, "input width " + std::to_string(inputs.cols()) + " does not match model width " +
                                      std::to_string(model.input_dim()));
  ForwardPass fp;
  if (model.kind == ModelKind::linear) {
    fp.raw = inputs * model.w1.transpose();
  } else {
    fp.pre = inputs * model.w1.transpose();
    fp.hidden = fp.pre.cwiseMax(0.0);
    fp.raw = fp.hidden * model.w2.transpose();
  }
  for (Eigen::Index r = 0; r < fp.raw.rows(); ++r)
    if (fp.raw.row(r).squaredNorm() == 0.0) fp.raw(r, 0) += 1e-12;
  fp.norms = fp.raw.rowwise().norm();
  fp.out = fp.raw.array().colwise() / fp.norms.array();
  return fp;
}

/// Unit-norm embeddings of `inputs`.
inline Matrix forward(const EmbeddingModel& model, const Matrix& inputs) { return forward_pass(model, inputs).out; }

/// Gradient of sum_k coeffs[k] * S_{i_k j_k} with respect to the parameters
/// (layout of EmbeddingModel::params). The coefficients are held constant.
inline Vector backward(const EmbeddingModel& model, const Matrix& inputs, const PairSystem& pairs,
                       const std::vector<double>& coeffs) {
  if (coeffs.size() != pairs.size()) throw Error(ErrorKind::shape, "one coefficient per pair expected");
  const ForwardPass fp = forward_pass(model, inputs);
  const Eigen::Index b = inputs.rows();
  if (b != pairs.batch_size) throw Error(ErrorKind::shape, "batch size does not match the pair system");

  Matrix c = Matrix::Zero(b, b);
  for (std::size_t k = 0; k < pairs.size(); ++k) c(pairs.pairs[k].i, pairs.pairs[k].j) += coeffs[k];
  const Matrix g_out = (c + c.transpose()) * fp.out;

  // Through the normalization: (I - f f^T) g / ||z||.
  Matrix g_raw(b, fp.out.cols());
  for (Eigen::Index r = 0; r < b; ++r) {
    const double along = fp.out.row(r).dot(g_out.row(r));
    g_raw.row(r) = (g_out.row(r) - along * fp.out.row(r)) / fp.norms(r);
  }

  Vector grad(model.param_count());
  if (model.kind == ModelKind::linear) {
    const Matrix g_w1 = g_raw.transpose() * inputs;
    grad = Eigen::Map<const Vector>(g_w1.data(), g_w1.size());
  } else {
    const Matrix g_w2 = g_raw.transpose() * fp.hidden;
    Matrix g_hidden = g_raw * model.w2;
    g_hidden = g_hidden.array() * (fp.pre.array() > 0.0).cast<double>();
    const Matrix g_w1 = g_hidden.transpose() * inputs;
    grad.head(g_w1.size()) = Eigen::Map<const Vector>(g_w1.data(), g_w1.size());
    grad.tail(g_w2.size()) = Eigen::Map<const Vector>(g_w2.data(), g_w2.size());
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Pair-selection baselines that replace the DRO solver during training.
enum class Baseline { none, semihard, dws, ms_mining };

inline std::string_view to_string(Baseline b) {
  switch (b) {
    case Baseline::none: return "none";
    case Baseline::semihard: return "semihard";
    case Baseline::dws: return "dws";
    case Baseline::ms_mining: return "ms-mining";
  }
  return "unknown";
}

struct TrainConfig {
  int classes_per_batch = 4;
  int m_per_class = 5;
  int epochs = 30;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
  DroConfig dro;
  LossKind loss_kind = LossKind::margin;
  Baseline baseline = Baseline::none;
  bool include_self = false;
  bool keep_zero_loss = false;
  ModelKind model_kind = ModelKind::linear;
  int embedding_dim = 16;
  int hidden_dim = 32;
  int steps_per_epoch = 0;  // 0: train size / batch size
  double holdout_fraction = 0.2;
  double dws_clip = 100.0;
  double ms_epsilon = 0.1;

  int batch_size() const { return classes_per_batch * m_per_class; }

  void validate() const {
    if (m_per_class < 2) throw Error(ErrorKind::configuration, "m_per_class must be >= 2 so positives exist");
    if (classes_per_batch < 2) throw Error(ErrorKind::configuration, "classes_per_batch must be >= 2");
    if (!(learning_rate >= 0.0)) throw Error(ErrorKind::configuration, "learning rate must be non-negative");
    if (epochs < 0) throw Error(ErrorKind::configuration, "epochs must be non-negative");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
      throw Error(ErrorKind::configuration, "holdout fraction must lie in (0, 1)");
    dro.validate();
  }
};

struct BatchDraw {
  std::vector<std::size_t> indices;
  std::vector<std::string> warnings;
};

/// Draws classes_per_batch classes without replacement, then m_per_class
/// instances of each (with replacement only when a class is too small).
/// Depends only on (cfg.seed, step) and the labels.
inline BatchDraw sample_batch(const std::vector<int>& labels, const TrainConfig& cfg, std::uint64_t step) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t r = 0; r < labels.size(); ++r) by_class[labels[r]].push_back(r);
  std::vector<int> classes;
  for (const auto& [c, members] : by_class) classes.push_back(c);

  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
  std::mt19937_64 rng(seq);
  BatchDraw draw;
  std::size_t want = static_cast<std::size_t>(cfg.classes_per_batch);
  if (classes.size() < want) {
    draw.warnings.push_back("requested " + std::to_string(want) + " classes per batch, only " +
                            std::to_string(classes.size()) + " available");
    want = classes.size();
  }
  std::shuffle(classes.begin(), classes.end(), rng);
  classes.resize(want);
  std::sort(classes.begin(), classes.end());
  const auto m = static_cast<std::size_t>(cfg.m_per_class);
  for (int c : classes) {
    auto members = by_class[c];
    std::shuffle(members.begin(), members.end(), rng);
    if (members.size() >= m) {
      draw.indices.insert(draw.indices.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(m));
    } else {
      draw.indices.insert(draw.indices.end(), members.begin(), members.end());
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      for (std::size_t t = members.size(); t < m; ++t) draw.indices.push_back(members[pick(rng)]);
    }
  }
  return draw;
}

struct EpochRecord {
  int epoch = 0;
  double robust_loss = 0.0;
  double recall1 = 0.0;
};

struct TrainResult {
  EmbeddingModel model;
  std::vector<EpochRecord> history;
  std::vector<std::string> warnings;
};

/// Seeded split of `n` example indices into (train, held-out).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_holdout(std::size_t n, double fraction,
                                                                                     std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto held = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n))),
                                            2, n > 2 ? n - 2 : n);
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(held));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(held), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {train, test};
}

/// Pair weights for one batch under the configured method.
inline WeightAssignment select_pairs(const SimilarityMatrix& sim, const PairSystem& pairs, const PairLossMatrix& losses,
                                     const TrainConfig& cfg, std::uint64_t step) {
  switch (cfg.baseline) {
    case Baseline::none: return solve(losses, pairs, cfg.dro);
    case Baseline::semihard: {
      auto w = mining::semihard_select(sim, pairs, cfg.dro.lambda, cfg.dro.margin);
      mining::score_selection(w, losses);
      return w;
    }
    case Baseline::dws: {
      const int count = 2 * (cfg.m_per_class - 1);
      auto w = mining::dws_select(sim, pairs, std::max(3, cfg.embedding_dim), count, cfg.dws_clip,
                                  cfg.seed * 1000003ULL + step);
      mining::score_selection(w, losses);
      return w;
    }
    case Baseline::ms_mining: {
      auto w = mining::ms_mining_select(sim, pairs, cfg.ms_epsilon);
      mining::score_selection(w, losses);
      return w;
    }
  }
  throw Error(ErrorKind::configuration, "unknown baseline");
}

/// Plain SGD on the DRO-weighted pair loss: per step sample a batch, embed,
/// solve for p*, and move against sum p*_ij grad l_ij with p* held fixed.
/// After every epoch the mean robust loss and the held-out recall@1 are
/// recorded.
inline TrainResult train(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() < 4) throw Error(ErrorKind::invalid_batch, "dataset too small to split");
  const auto [train_idx, test_idx] = split_holdout(data.size(), cfg.holdout_fraction, cfg.seed);
  const Dataset train_set = data.subset(train_idx);
  const Dataset test_set = data.subset(test_idx);

  TrainResult result;
  result.model = EmbeddingModel::make(cfg.model_kind, static_cast<int>(data.dim()), cfg.embedding_dim, cfg.hidden_dim,
                                      cfg.seed + 1);
  const int steps = cfg.steps_per_epoch > 0
                        ? cfg.steps_per_epoch
                        : std::max<int>(1, static_cast<int>(train_set.size()) / std::max(1, cfg.batch_size()));

  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (int s = 0; s < steps; ++s, ++step) {
      BatchDraw draw = sample_batch(train_set.labels, cfg, step);
      if (step == 0) result.warnings = draw.warnings;
      const Dataset batch = train_set.subset(draw.indices);
      const PairSystem pairs = build_pair_system(batch.labels, cfg.include_self);
      const SimilarityMatrix sim = similarity(forward(result.model, batch.features));
      const PairLossMatrix losses = loss_matrix(sim, pairs, cfg.dro, cfg.loss_kind, cfg.keep_zero_loss);

      WeightAssignment w;
      try {
        w = select_pairs(sim, pairs, losses, cfg, step);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::empty_active_set) throw;
        continue;  // nothing to learn from this batch
      }
      const auto coeffs = weighted_subgradient_coeffs(w, losses);
      for (std::size_t k = 0; k < coeffs.size(); ++k) {
        if (!std::isfinite(coeffs[k]) || !std::isfinite(losses.loss[k]))
          throw Error(ErrorKind::non_finite, "epoch " + std::to_string(epoch) + ", batch " + std::to_string(s) +
                                                 ", pair (" + std::to_string(pairs.pairs[k].i) + "," +
                                                 std::to_string(pairs.pairs[k].j) + ")");
      }
      const Vector grad = backward(result.model, batch.features, pairs, coeffs);
      if (!grad.allFinite())
        throw Error(ErrorKind::non_finite,
                    "epoch " + std::to_string(epoch) + ", batch " + std::to_string(s) + ": gradient");
      if (cfg.learning_rate > 0.0) result.model.set_params(result.model.params() - cfg.learning_rate * grad);
      loss_sum += w.robust_value;
    }
    const double recall = recall_at_1(forward(result.model, test_set.features), test_set.labels);
    result.history.push_back({epoch, loss_sum / steps, recall});
  }
  return result;
}

}  // namespace dropair
