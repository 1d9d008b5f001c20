#include "peel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace peel {

TopKMetrics ScoreRanking(std::span<const ItemId> ranked, std::span<const ItemId> truth,
                         std::size_t k) {
  TopKMetrics m;
  if (truth.empty()) return m;
  std::vector<ItemId> sorted_truth(truth.begin(), truth.end());
  std::sort(sorted_truth.begin(), sorted_truth.end());
  const std::size_t limit = std::min(k, ranked.size());
  double dcg = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < limit; ++r) {
    if (std::binary_search(sorted_truth.begin(), sorted_truth.end(), ranked[r])) {
      ++hits;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, sorted_truth.size()); ++r) {
    idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  m.recall = static_cast<double>(hits) / static_cast<double>(sorted_truth.size());
  m.ndcg = idcg > 0.0 ? dcg / idcg : 0.0;
  return m;
}

std::vector<ItemId> TopKByScore(std::span<const double> scores, const std::vector<bool>& excluded,
                                std::size_t k) {
  std::vector<ItemId> ids;
  ids.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i >= excluded.size() || !excluded[i]) ids.push_back(static_cast<ItemId>(i));
  }
  auto better = [&](ItemId a, ItemId b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  };
  const std::size_t limit = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(limit), ids.end(), better);
  ids.resize(limit);
  return ids;
}

}  // namespace peel
