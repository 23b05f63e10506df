#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dropair {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class ErrorKind {
  invalid_batch,
  normalization,
  configuration,
  empty_input,
  empty_active_set,
  shape,
  parse,
  oracle_failure,
  undefined_ratio,
  non_finite,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_batch: return "invalid-batch";
    case ErrorKind::normalization: return "normalization";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::empty_input: return "empty-input";
    case ErrorKind::empty_active_set: return "empty-active-set";
    case ErrorKind::shape: return "shape";
    case ErrorKind::parse: return "parse";
    case ErrorKind::oracle_failure: return "oracle-failure";
    case ErrorKind::undefined_ratio: return "undefined-ratio";
    case ErrorKind::non_finite: return "non-finite";
  }
  return "unknown";
}

/// Every failure raised by the library. `kind()` identifies the error class.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

/// Scales every row of `m` to unit Euclidean norm. All-zero rows are nudged by
/// 1e-12 in their first coordinate so the result stays finite.
inline void normalize_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    double norm = m.row(r).norm();
    if (norm == 0.0) {
      m(r, 0) += 1e-12;
      norm = m.row(r).norm();
    }
    m.row(r) /= norm;
  }
}

/// One mini-batch: raw inputs, unit-norm embeddings and class labels.
struct EmbeddingBatch {
  Matrix inputs;      // B x D
  Matrix embeddings;  // B x d, unit-norm rows
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }

  /// Validates shapes and labels, then normalizes the embedding rows.
  static EmbeddingBatch make(Matrix inputs, Matrix embeddings, std::vector<int> labels) {
    const auto b = static_cast<Eigen::Index>(labels.size());
    if (labels.size() < 2) throw Error(ErrorKind::invalid_batch, "a batch needs at least 2 examples");
    if (embeddings.rows() != b || embeddings.cols() < 1)
      throw Error(ErrorKind::shape, "embedding matrix must be B x d with d >= 1");
    if (inputs.size() != 0 && inputs.rows() != b)
      throw Error(ErrorKind::shape, "input matrix must have one row per label");
    for (int y : labels)
      if (y < 0) throw Error(ErrorKind::invalid_batch, "class labels must be non-negative");
    normalize_rows(embeddings);
    return EmbeddingBatch{std::move(inputs), std::move(embeddings), std::move(labels)};
  }
};

// ---------------------------------------------------------------------------
// Pairs
// ---------------------------------------------------------------------------

struct Pair {
  int i = 0;
  int j = 0;
  int y = 0;  // +1 same class, -1 different class

  bool positive() const { return y > 0; }
};

/// Ordered pairs of a batch, enumerated row-major, with the anchor groups.
/// Group entries are indices into `pairs`.
struct PairSystem {
  int batch_size = 0;
  bool include_self = false;
  std::vector<Pair> pairs;
  std::vector<std::vector<std::size_t>> pos_groups;
  std::vector<std::vector<std::size_t>> neg_groups;

  std::size_t size() const { return pairs.size(); }

  std::size_t count_positive() const {
    std::size_t n = 0;
    for (const auto& g : pos_groups) n += g.size();
    return n;
  }
  std::size_t count_negative() const {
    std::size_t n = 0;
    for (const auto& g : neg_groups) n += g.size();
    return n;
  }
};

inline PairSystem build_pair_system(const std::vector<int>& labels, bool include_self = false) {
  if (labels.size() < 2) throw Error(ErrorKind::invalid_batch, "a batch needs at least 2 examples");
  PairSystem ps;
  ps.batch_size = static_cast<int>(labels.size());
  ps.include_self = include_self;
  ps.pos_groups.resize(labels.size());
  ps.neg_groups.resize(labels.size());
  ps.pairs.reserve(labels.size() * labels.size());
  for (int i = 0; i < ps.batch_size; ++i) {
    for (int j = 0; j < ps.batch_size; ++j) {
      if (i == j && !include_self) continue;
      const int y = labels[i] == labels[j] ? 1 : -1;
      const std::size_t k = ps.pairs.size();
      ps.pairs.push_back({i, j, y});
      (y > 0 ? ps.pos_groups : ps.neg_groups)[i].push_back(k);
    }
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Similarities, losses, weights
// ---------------------------------------------------------------------------

struct SimilarityMatrix {
  Matrix values;  // B x B

  double operator()(int i, int j) const { return values(i, j); }
};

/// S_ij = <f_i, f_j>. Rows must already be unit norm (tolerance 1e-6).
inline SimilarityMatrix similarity(const Matrix& embeddings) {
  for (Eigen::Index r = 0; r < embeddings.rows(); ++r) {
    const double norm = embeddings.row(r).norm();
    if (!(std::abs(norm - 1.0) <= 1e-6))
      throw Error(ErrorKind::normalization,
                  "embedding row " + std::to_string(r) + " has norm " + std::to_string(norm));
  }
  const Eigen::Index b = embeddings.rows();
  SimilarityMatrix s{Matrix(b, b)};
  for (Eigen::Index i = 0; i < b; ++i) {
    s.values(i, i) = embeddings.row(i).squaredNorm();
    for (Eigen::Index j = i + 1; j < b; ++j) {
      const double v = embeddings.row(i).dot(embeddings.row(j));
      s.values(i, j) = v;
      s.values(j, i) = v;
    }
  }
  return s;
}

inline SimilarityMatrix similarity(const EmbeddingBatch& batch) { return similarity(batch.embeddings); }

/// Per-pair loss and its derivative with respect to the pair similarity,
/// indexed like PairSystem::pairs.
struct PairLossMatrix {
  std::vector<double> loss;
  std::vector<double> dloss_dS;
  std::vector<std::uint8_t> active;

  std::size_t size() const { return loss.size(); }

  std::vector<std::size_t> active_indices() const {
    std::vector<std::size_t> idx(count_active() + 1);
    std::size_t n = 0;
    for (std::size_t k = 0; k < active.size(); ++k) {
      idx[n] = k;  // branch-free: kept only when active
      n += active[k] ? 1 : 0;
    }
    idx.resize(n);
    return idx;
  }

  std::size_t count_active() const {
    std::size_t n = 0;
    for (auto a : active) n += a ? 1 : 0;
    return n;
  }

  /// Builds a matrix from raw loss values. With `keep_zero_loss` every pair is
  /// active, otherwise exactly the strictly positive ones.
  static PairLossMatrix from_losses(std::vector<double> values, bool keep_zero_loss = false,
                                    std::vector<double> derivatives = {}) {
    PairLossMatrix m;
    m.loss = std::move(values);
    m.dloss_dS = derivatives.empty() ? std::vector<double>(m.loss.size(), 0.0) : std::move(derivatives);
    if (m.dloss_dS.size() != m.loss.size()) throw Error(ErrorKind::shape, "loss and derivative sizes differ");
    m.active.resize(m.loss.size());
    for (std::size_t k = 0; k < m.loss.size(); ++k) m.active[k] = keep_zero_loss || m.loss[k] > 0.0;
    return m;
  }
};

enum class WeightFlavor { global_simplex, per_anchor, binary_selection };

inline std::string_view to_string(WeightFlavor f) {
  switch (f) {
    case WeightFlavor::global_simplex: return "global-simplex";
    case WeightFlavor::per_anchor: return "per-anchor";
    case WeightFlavor::binary_selection: return "binary-selection";
  }
  return "unknown";
}

/// The distributional variable p over the pairs plus the robust loss value.
/// Per-anchor assignments may carry a slack mass per group (a zero-loss extra
/// element); `slack_pos[i] + sum_{P_i} w == 1` and likewise for negatives.
struct WeightAssignment {
  std::vector<double> weights;
  WeightFlavor flavor = WeightFlavor::global_simplex;
  double robust_value = 0.0;
  std::vector<double> slack_pos;
  std::vector<double> slack_neg;
  std::vector<std::string> warnings;

  std::size_t count_selected() const {
    std::size_t n = 0;
    for (double w : weights) n += w != 0.0 ? 1 : 0;
    return n;
  }
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class DroVariant { avg, max, topk, topk_pn, kl, chi2, kl_grouped, ms_recovery };

inline std::string_view to_string(DroVariant v) {
  switch (v) {
    case DroVariant::avg: return "avg";
    case DroVariant::max: return "max";
    case DroVariant::topk: return "topk";
    case DroVariant::topk_pn: return "topk-pn";
    case DroVariant::kl: return "kl";
    case DroVariant::chi2: return "chi2";
    case DroVariant::kl_grouped: return "kl-grouped";
    case DroVariant::ms_recovery: return "ms";
  }
  return "unknown";
}

inline DroVariant parse_dro_variant(std::string_view s) {
  for (auto v : {DroVariant::avg, DroVariant::max, DroVariant::topk, DroVariant::topk_pn, DroVariant::kl,
                 DroVariant::chi2, DroVariant::kl_grouped, DroVariant::ms_recovery})
    if (to_string(v) == s) return v;
  if (s == "ms-recovery") return DroVariant::ms_recovery;
  throw Error(ErrorKind::configuration, "unknown DRO variant '" + std::string(s) + "'");
}

struct DroConfig {
  DroVariant variant = DroVariant::topk;
  int k = 160;
  double gamma = 0.1;
  double gamma_pos = 0.1;
  double gamma_neg = 0.1;
  double rho = 0.25;
  double margin = 0.2;     // m
  double lambda = 0.5;     // similarity threshold
  double alpha = 2.0;
  double beta = 50.0;
  double c_pos = 0.7;      // lambda + m
  double c_neg = 0.3;      // lambda - m
  double cost_neg = 1.0;   // binomial negative-pair cost multiplier

  /// Sets c_pos, c_neg, gamma_pos, gamma_neg to the values that tie the
  /// slack-augmented grouped problem to the multi-similarity loss.
  DroConfig& tie_ms_parameters() {
    c_pos = lambda + margin;
    c_neg = lambda - margin;
    gamma_pos = 1.0 / alpha;
    gamma_neg = 1.0 / beta;
    return *this;
  }

  /// Checks the hyperparameters used by `variant`. A top-K size larger than
  /// the active set is not an error here; the solver clamps it.
  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw Error(ErrorKind::configuration, std::string(name) + " must be positive");
    };
    switch (variant) {
      case DroVariant::topk:
        if (k <= 0) throw Error(ErrorKind::configuration, "K must be positive");
        break;
      case DroVariant::topk_pn:
        if (k < 2 || k % 2 != 0) throw Error(ErrorKind::configuration, "K must be even and >= 2");
        break;
      case DroVariant::kl: positive(gamma, "gamma"); break;
      case DroVariant::chi2: positive(rho, "rho"); break;
      case DroVariant::kl_grouped:
      case DroVariant::ms_recovery:
        positive(gamma_pos, "gamma_pos");
        positive(gamma_neg, "gamma_neg");
        break;
      default: break;
    }
  }
};

}  // namespace dropair
