#pragma once

// Recall versus batch size (and so versus positive/negative pair ratio).

#include "dropair/dataset.hpp"
#include "dropair/eval.hpp"
#include "dropair/model.hpp"

#include <string>
#include <vector>

namespace dropair {

struct SweepRow {
  int batch_size = 0;  // requested B
  double ratio = 0.0;  // P / N of the batches actually drawn
  std::string method;
  double recall1 = 0.0;
};

struct SweepMethod {
  std::string name;
  DroVariant variant = DroVariant::avg;
  Baseline baseline = Baseline::none;
};

inline std::vector<SweepMethod> default_sweep_methods() {
  return {{"avg", DroVariant::avg, Baseline::none},         {"semihard", DroVariant::avg, Baseline::semihard},
          {"dws", DroVariant::avg, Baseline::dws},          {"topk", DroVariant::topk, Baseline::none},
          {"topk-pn", DroVariant::topk_pn, Baseline::none}, {"kl", DroVariant::kl, Baseline::none}};
}

/// Trains every method at every batch size B (classes_per_batch = B / M,
/// K = 2B) and records the final held-out recall@1.
inline std::vector<SweepRow> imbalance_sweep(const Dataset& data, const TrainConfig& base,
                                             const std::vector<int>& batch_sizes,
                                             const std::vector<SweepMethod>& methods = default_sweep_methods(),
                                             std::vector<std::string>* warnings = nullptr) {
  std::vector<SweepRow> rows;
  for (int b : batch_sizes) {
    if (b < 2 * base.m_per_class || b % base.m_per_class != 0)
      throw Error(ErrorKind::configuration,
                  "batch size " + std::to_string(b) + " must be a multiple of M covering at least 2 classes");
    TrainConfig cfg = base;
    cfg.classes_per_batch = b / base.m_per_class;
    cfg.dro.k = 2 * b;

    std::vector<int> drawn;
    for (std::size_t idx : sample_batch(data.labels, cfg, 0).indices) drawn.push_back(data.labels[idx]);
    const double ratio = pair_ratio(build_pair_system(drawn, cfg.include_self));

    for (const auto& method : methods) {
      cfg.dro.variant = method.variant;
      cfg.baseline = method.baseline;
      TrainResult result = train(data, cfg);
      if (warnings != nullptr)
        for (auto& w : result.warnings) warnings->push_back("B=" + std::to_string(b) + " " + method.name + ": " + w);
      const double recall = result.history.empty() ? 0.0 : result.history.back().recall1;
      rows.push_back({b, ratio, method.name, recall});
    }
  }
  return rows;
}

}  // namespace dropair
