#pragma once

// The `dropair` command line: weights, train, eval, verify, sweep, bench.

#include "dropair/core.hpp"
#include "dropair/dataset.hpp"
#include "dropair/dro.hpp"
#include "dropair/eval.hpp"
#include "dropair/losses.hpp"
#include "dropair/model.hpp"
#include "dropair/sweep.hpp"
#include "dropair/verify.hpp"

#include <CLI11.hpp>

#include <array>
#include <chrono>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace dropair::cli {

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw Error(ErrorKind::non_finite, "cannot format value");
  return std::string(buf.data(), ptr);
}

// ---------------------------------------------------------------------------
// Model files: a header line "dropair-model <kind> <D> <d> <H>" followed by
// one parameter per line in EmbeddingModel::params order.
// ---------------------------------------------------------------------------

inline void write_model(std::ostream& os, const EmbeddingModel& model) {
  const Eigen::Index hidden = model.kind == ModelKind::linear ? 0 : model.w1.rows();
  os << "dropair-model " << to_string(model.kind) << ' ' << model.input_dim() << ' ' << model.output_dim() << ' '
     << hidden << '\n';
  const Vector p = model.params();
  for (Eigen::Index k = 0; k < p.size(); ++k) os << format_double(p(k)) << '\n';
}

inline EmbeddingModel read_model(std::istream& is) {
  std::string magic, kind;
  int input_dim = 0, output_dim = 0, hidden = 0;
  if (!(is >> magic >> kind >> input_dim >> output_dim >> hidden) || magic != "dropair-model")
    throw Error(ErrorKind::parse, "line 1: not a dropair model file");
  EmbeddingModel model = EmbeddingModel::make(parse_model_kind(kind), input_dim, output_dim, hidden, 0);
  Vector p(model.param_count());
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    std::string field;
    if (!(is >> field)) throw Error(ErrorKind::parse, "line " + std::to_string(k + 2) + ": missing parameter");
    p(k) = detail::parse_double(field, static_cast<std::size_t>(k + 2));
  }
  model.set_params(p);
  return model;
}

// ---------------------------------------------------------------------------
// Options
// ---------------------------------------------------------------------------

struct Options {
  std::string input;
  std::string out;
  std::string model_out;
  std::string model_in;
  std::string loss = "margin";
  std::string dro = "topk";
  std::string baseline = "none";
  std::string model_kind = "linear";
  TrainConfig train;
  std::vector<int> ks{1, 2, 4, 8};
  std::vector<int> batch_sizes;
  int repeats = 5;
  // synthetic data for sweep/bench when no --input is given
  int classes = 10;
  int per_class = 60;
  int dim = 16;
  double spread = 0.5;

  DroConfig dro_config() const {
    DroConfig cfg = train.dro;
    cfg.variant = parse_dro_variant(dro);
    return cfg;
  }

  TrainConfig train_config() const {
    TrainConfig cfg = train;
    cfg.dro = dro_config();
    cfg.loss_kind = parse_loss_kind(loss);
    cfg.model_kind = parse_model_kind(model_kind);
    if (baseline == "none") cfg.baseline = Baseline::none;
    else if (baseline == "semihard") cfg.baseline = Baseline::semihard;
    else if (baseline == "dws") cfg.baseline = Baseline::dws;
    else cfg.baseline = Baseline::ms_mining;
    return cfg;
  }
};

inline void add_pair_flags(CLI::App* app, Options& o) {
  DroConfig& d = o.train.dro;
  app->add_option("--loss", o.loss, "base pair loss")->check(CLI::IsMember({"margin", "binomial"}))->capture_default_str();
  app->add_option("--dro", o.dro, "uncertainty set")
      ->check(CLI::IsMember({"avg", "max", "topk", "topk-pn", "kl", "chi2", "kl-grouped", "ms", "ms-recovery"}))
      ->capture_default_str();
  app->add_option("--k", d.k, "top-K size")->capture_default_str();
  app->add_option("--gamma", d.gamma, "KL regularization strength")->capture_default_str();
  app->add_option("--gamma-pos", d.gamma_pos, "grouped KL strength, positive side")->capture_default_str();
  app->add_option("--gamma-neg", d.gamma_neg, "grouped KL strength, negative side")->capture_default_str();
  app->add_option("--rho", d.rho, "chi-square radius")->capture_default_str();
  app->add_option("--m", d.margin, "margin")->capture_default_str();
  app->add_option("--lambda", d.lambda, "similarity threshold")->capture_default_str();
  app->add_option("--alpha", d.alpha, "binomial / MS positive scale")->capture_default_str();
  app->add_option("--beta", d.beta, "binomial / MS negative scale")->capture_default_str();
  app->add_option("--c-pos", d.c_pos, "MS-recovery positive threshold")->capture_default_str();
  app->add_option("--c-neg", d.c_neg, "MS-recovery negative threshold")->capture_default_str();
  app->add_flag("--include-self-pairs", o.train.include_self, "also form (i, i) pairs");
  app->add_flag("--keep-zero-loss", o.train.keep_zero_loss, "keep zero-loss pairs in the active set");
  app->add_option("--out", o.out, "output file (default: stdout)");
}

inline void add_train_flags(CLI::App* app, Options& o) {
  TrainConfig& t = o.train;
  app->add_option("--classes-per-batch", t.classes_per_batch, "classes per batch")->capture_default_str();
  app->add_option("--m-per-class", t.m_per_class, "instances per class")->capture_default_str();
  app->add_option("--epochs", t.epochs, "epochs")->capture_default_str();
  app->add_option("--lr", t.learning_rate, "SGD learning rate")->capture_default_str();
  app->add_option("--steps-per-epoch", t.steps_per_epoch, "SGD steps per epoch (0: data size / B)")
      ->capture_default_str();
  app->add_option("--embedding-dim", t.embedding_dim, "embedding width")->capture_default_str();
  app->add_option("--hidden-dim", t.hidden_dim, "hidden width (one-hidden model)")->capture_default_str();
  app->add_option("--model", o.model_kind, "architecture")
      ->check(CLI::IsMember({"linear", "one-hidden"}))
      ->capture_default_str();
  app->add_option("--baseline", o.baseline, "replace the DRO solver by a mining baseline")
      ->check(CLI::IsMember({"none", "semihard", "dws", "ms-mining"}))
      ->capture_default_str();
}

inline void add_synthetic_flags(CLI::App* app, Options& o) {
  app->add_option("--classes", o.classes, "synthetic classes")->capture_default_str();
  app->add_option("--per-class", o.per_class, "synthetic examples per class")->capture_default_str();
  app->add_option("--dim", o.dim, "synthetic feature width")->capture_default_str();
  app->add_option("--spread", o.spread, "synthetic noise scale")->capture_default_str();
}

/// Under --dro ms, fills c+, c-, gamma+ and gamma- from m, lambda, alpha and
/// beta unless they were given explicitly.
inline void tie_ms_defaults(const CLI::App* app, Options& o) {
  if (o.dro != "ms" && o.dro != "ms-recovery") return;
  DroConfig& d = o.train.dro;
  DroConfig tied = d;
  tied.tie_ms_parameters();
  if (app->count("--c-pos") == 0) d.c_pos = tied.c_pos;
  if (app->count("--c-neg") == 0) d.c_neg = tied.c_neg;
  if (app->count("--gamma-pos") == 0) d.gamma_pos = tied.gamma_pos;
  if (app->count("--gamma-neg") == 0) d.gamma_neg = tied.gamma_neg;
}

/// Writes to --out when given, else to `fallback`.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : os_(&fallback) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw Error(ErrorKind::parse, "cannot write '" + path + "'");
      os_ = file_.get();
    }
  }
  std::ostream& operator*() { return *os_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* os_;
};

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int cmd_weights(const Options& o, std::ostream& out, std::ostream& err) {
  const Dataset data = load_dataset(o.input);
  const TrainConfig cfg = o.train_config();
  const EmbeddingBatch batch = EmbeddingBatch::make(data.features, data.features, data.labels);
  const PairSystem pairs = build_pair_system(batch.labels, cfg.include_self);
  const SimilarityMatrix sim = similarity(batch);
  const PairLossMatrix losses = loss_matrix(sim, pairs, cfg.dro, cfg.loss_kind, cfg.keep_zero_loss);
  const WeightAssignment w = solve(losses, pairs, cfg.dro);
  for (const auto& msg : w.warnings) err << "warning: " << msg << '\n';
  Sink sink(o.out, out);
  *sink << "i,j,y,loss,weight\n";
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Pair& p = pairs.pairs[k];
    *sink << p.i << ',' << p.j << ',' << p.y << ',' << format_double(losses.loss[k]) << ','
          << format_double(w.weights[k]) << '\n';
  }
  return 0;
}

inline int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const Dataset data = load_dataset(o.input);
  const TrainResult result = train(data, o.train_config());
  for (const auto& msg : result.warnings) err << "warning: " << msg << '\n';
  {
    Sink sink(o.out, out);
    *sink << "epoch,robust_loss,recall1\n";
    for (const auto& r : result.history)
      *sink << r.epoch << ',' << format_double(r.robust_loss) << ',' << format_double(r.recall1) << '\n';
  }
  if (!o.model_out.empty()) {
    std::ofstream f(o.model_out);
    if (!f) throw Error(ErrorKind::parse, "cannot write '" + o.model_out + "'");
    write_model(f, result.model);
  }
  return 0;
}

inline int cmd_eval(const Options& o, std::ostream& out, std::ostream&) {
  const Dataset data = load_dataset(o.input);
  Matrix emb = data.features;
  if (!o.model_in.empty()) {
    std::ifstream f(o.model_in);
    if (!f) throw Error(ErrorKind::parse, "cannot open '" + o.model_in + "'");
    emb = forward(read_model(f), data.features);
  } else {
    normalize_rows(emb);
  }
  const auto recall = recall_at_k(emb, data.labels, o.ks);
  Sink sink(o.out, out);
  *sink << "k,recall\n";
  for (const auto& [k, r] : recall) *sink << k << ',' << format_double(r) << '\n';
  return 0;
}

inline int cmd_verify(const Options& o, std::ostream& out, std::ostream&) {
  const auto checks = verify::run_all(o.train.seed);
  Sink sink(o.out, out);
  bool ok = true;
  for (const auto& c : checks) {
    ok = ok && c.passed;
    *sink << std::left << std::setw(24) << c.name << (c.passed ? "PASS" : "FAIL") << "  worst=" << format_double(c.worst)
          << " tol=" << format_double(c.tolerance);
    if (!c.detail.empty()) *sink << "  (" << c.detail << ')';
    *sink << '\n';
  }
  return ok ? 0 : 1;
}

inline Dataset sweep_data(const Options& o) {
  if (!o.input.empty()) return load_dataset(o.input);
  return gen_synthetic(o.classes, o.per_class, o.dim, o.spread, o.train.seed);
}

inline int cmd_sweep(const Options& o, std::ostream& out, std::ostream& err) {
  const Dataset data = sweep_data(o);
  std::vector<std::string> warnings;
  const auto sizes = o.batch_sizes.empty() ? std::vector<int>{20, 40, 80} : o.batch_sizes;
  const auto rows = imbalance_sweep(data, o.train_config(), sizes, default_sweep_methods(), &warnings);
  for (const auto& msg : warnings) err << "warning: " << msg << '\n';
  Sink sink(o.out, out);
  *sink << "B,ratio,method,recall1\n";
  for (const auto& r : rows)
    *sink << r.batch_size << ',' << format_double(r.ratio) << ',' << r.method << ',' << format_double(r.recall1)
          << '\n';
  return 0;
}

/// Mean wall time of one solve per method on random unit embeddings with
/// B / 5 classes of 5, K = 2B.
inline int cmd_bench(const Options& o, std::ostream& out, std::ostream&) {
  const auto sizes = o.batch_sizes.empty() ? std::vector<int>{80, 160, 320, 640} : o.batch_sizes;
  const DroVariant methods[] = {DroVariant::avg, DroVariant::max,  DroVariant::topk,       DroVariant::topk_pn,
                                DroVariant::kl,  DroVariant::chi2, DroVariant::kl_grouped, DroVariant::ms_recovery};
  Sink sink(o.out, out);
  *sink << "method,B,millis\n";
  std::mt19937_64 rng(o.train.seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int b : sizes) {
    Matrix emb(b, o.dim);
    for (Eigen::Index c = 0; c < emb.cols(); ++c)
      for (Eigen::Index r = 0; r < emb.rows(); ++r) emb(r, c) = g(rng);
    normalize_rows(emb);
    std::vector<int> labels;
    for (int r = 0; r < b; ++r) labels.push_back(r / 5);
    const PairSystem pairs = build_pair_system(labels);
    DroConfig cfg = o.dro_config();
    cfg.k = 2 * b;
    const PairLossMatrix losses = loss_matrix(similarity(emb), pairs, cfg, parse_loss_kind(o.loss));
    for (DroVariant v : methods) {
      cfg.variant = v;
      if (v == DroVariant::ms_recovery) cfg.tie_ms_parameters();
      double checksum = 0.0;
      const auto start = std::chrono::steady_clock::now();
      for (int r = 0; r < o.repeats; ++r) checksum += solve(losses, pairs, cfg).robust_value;
      const std::chrono::duration<double, std::milli> took = std::chrono::steady_clock::now() - start;
      if (!std::isfinite(checksum)) throw Error(ErrorKind::non_finite, "bench produced a non-finite value");
      *sink << to_string(v) << ',' << b << ',' << format_double(took.count() / o.repeats) << '\n';
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Exit status: 0 success, 1 runtime failure (or a failed verify check),
/// 2 usage error.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Distributionally robust pair weighting for metric learning", "dropair"};
  app.require_subcommand(1);

  auto* weights = app.add_subcommand("weights", "solve for pair weights on a dataset of embeddings");
  weights->add_option("--input", o.input, "CSV rows label,x1,...,xD")->required();
  add_pair_flags(weights, o);

  auto* trn = app.add_subcommand("train", "train an embedding model with SGD");
  trn->add_option("--input", o.input, "CSV rows label,x1,...,xD")->required();
  trn->add_option("--model-out", o.model_out, "write the trained parameters here");
  trn->add_option("--seed", o.train.seed, "random seed")->capture_default_str();
  add_pair_flags(trn, o);
  add_train_flags(trn, o);

  auto* ev = app.add_subcommand("eval", "recall@k of a dataset, optionally through a trained model");
  ev->add_option("--input", o.input, "CSV rows label,x1,...,xD")->required();
  ev->add_option("--model", o.model_in, "model file written by train --model-out");
  ev->add_option("--ks", o.ks, "values of k")->delimiter(',')->capture_default_str();
  ev->add_option("--out", o.out, "output file (default: stdout)");

  auto* ver = app.add_subcommand("verify", "run the numerical self-checks");
  ver->add_option("--seed", o.train.seed, "random seed")->capture_default_str();
  ver->add_option("--out", o.out, "output file (default: stdout)");

  auto* sw = app.add_subcommand("sweep", "held-out recall@1 versus batch size for every method");
  sw->add_option("--input", o.input, "CSV rows label,x1,...,xD (default: synthetic)");
  sw->add_option("--batch-sizes", o.batch_sizes, "batch sizes B")->delimiter(',');
  sw->add_option("--seed", o.train.seed, "random seed")->capture_default_str();
  add_pair_flags(sw, o);
  add_train_flags(sw, o);
  add_synthetic_flags(sw, o);

  auto* bn = app.add_subcommand("bench", "time each solver on random batches");
  bn->add_option("--batch-sizes", o.batch_sizes, "batch sizes B")->delimiter(',');
  bn->add_option("--repeats", o.repeats, "solves per measurement")->capture_default_str();
  bn->add_option("--seed", o.train.seed, "random seed")->capture_default_str();
  bn->add_option("--dim", o.dim, "embedding width")->capture_default_str();
  add_pair_flags(bn, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return 2;
  }

  for (const CLI::App* sub : {weights, trn, sw, bn})
    if (*sub) tie_ms_defaults(sub, o);

  try {
    if (*weights) return cmd_weights(o, out, err);
    if (*trn) return cmd_train(o, out, err);
    if (*ev) return cmd_eval(o, out, err);
    if (*ver) return cmd_verify(o, out, err);
    if (*sw) return cmd_sweep(o, out, err);
    if (*bn) return cmd_bench(o, out, err);
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace dropair::cli
