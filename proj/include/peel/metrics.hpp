#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "peel/types.hpp"

namespace peel {

struct TopKMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
};

// `ranked` lists candidates best-first (only the first k are read).
// Recall@k = hits / |truth|; NDCG@k uses binary gains and log2(rank + 1)
// discounts, normalized by the ideal DCG over min(k, |truth|) hits.
TopKMetrics ScoreRanking(std::span<const ItemId> ranked, std::span<const ItemId> truth,
                         std::size_t k);

// Indices of the k largest scores among non-excluded items, best first,
// ties broken by ascending id.
std::vector<ItemId> TopKByScore(std::span<const double> scores, const std::vector<bool>& excluded,
                                std::size_t k);

}  // namespace peel
