#pragma once

#include "dropair/core.hpp"

#include <algorithm>
#include <map>
#include <vector>

namespace dropair {

/// recall@k for each k in `ks`: the fraction of queries whose k most similar
/// other examples (ties broken by lower index) contain a same-class example.
/// Rows of `embeddings` are compared by inner product.
inline std::map<int, double> recall_at_k(const Matrix& embeddings, const std::vector<int>& labels,
                                         const std::vector<int>& ks) {
  const auto n = static_cast<int>(labels.size());
  if (n < 2) throw Error(ErrorKind::invalid_batch, "recall needs at least 2 examples");
  if (embeddings.rows() != n) throw Error(ErrorKind::shape, "one embedding row per label expected");
  int kmax = 0;
  for (int k : ks) {
    if (k < 1 || k >= n) throw Error(ErrorKind::configuration, "k must lie in [1, n)");
    kmax = std::max(kmax, k);
  }
  const Matrix sim = embeddings * embeddings.transpose();
  // first_hit[q] = rank (1-based) of the first same-class neighbor, 0 if none.
  std::vector<int> first_hit(n, 0);
  std::vector<int> order;
  for (int q = 0; q < n; ++q) {
    order.clear();
    for (int j = 0; j < n; ++j)
      if (j != q) order.push_back(j);
    auto closer = [&](int a, int b) { return sim(q, a) > sim(q, b) || (sim(q, a) == sim(q, b) && a < b); };
    std::partial_sort(order.begin(), order.begin() + kmax, order.end(), closer);
    for (int r = 0; r < kmax; ++r) {
      if (labels[order[r]] == labels[q]) {
        first_hit[q] = r + 1;
        break;
      }
    }
  }
  std::map<int, double> out;
  for (int k : ks) {
    int hits = 0;
    for (int q = 0; q < n; ++q) hits += (first_hit[q] > 0 && first_hit[q] <= k) ? 1 : 0;
    out[k] = static_cast<double>(hits) / n;
  }
  return out;
}

inline double recall_at_1(const Matrix& embeddings, const std::vector<int>& labels) {
  return recall_at_k(embeddings, labels, {1}).at(1);
}

/// Positive-to-negative pair ratio P / N.
inline double pair_ratio(const PairSystem& pairs) {
  const std::size_t neg = pairs.count_negative();
  if (neg == 0) throw Error(ErrorKind::undefined_ratio, "the batch has no negative pair");
  return static_cast<double>(pairs.count_positive()) / static_cast<double>(neg);
}

}  // namespace dropair
