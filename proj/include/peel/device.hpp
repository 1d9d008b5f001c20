#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "peel/deploy.hpp"
#include "peel/metrics.hpp"
#include "peel/types.hpp"

namespace peel {

struct RankingResult {
  std::vector<ItemId> ordered_items;  // score descending, ties by ascending id
  std::vector<double> scores;         // indexed by item id
  double latency_micros = 0.0;
};

// Parameter-free scoring on the device:
//   r_j = (maxS / |S_j|) * sum_{n in S_j} sum_m (u block m) . e_n^j
// where maxS is the largest selected-set size over the package's groups.
std::vector<double> ScoreItems(const PeePackage& package);
RankingResult RankItems(const PeePackage& package);

// Ranks the package's user against every item not seen in train or
// validation. Returns nullopt when the user has no test items.
std::optional<TopKMetrics> EvaluatePackage(const PeePackage& package, const InteractionLog& log,
                                           std::size_t k);
// Same, reusing a precomputed ranking and per-user role lists.
std::optional<TopKMetrics> EvaluateRanking(const RankingResult& ranking,
                                           const std::vector<ItemId>& seen,
                                           const std::vector<ItemId>& truth, std::size_t num_items,
                                           std::size_t k);

struct TimelineRow {
  std::uint64_t budget_bytes = 0;
  std::optional<TopKMetrics> metrics;
  double shrink_micros = 0.0;
  double rank_micros = 0.0;
  std::uint64_t param_count = 0;
  std::size_t shrink_ops = 0;  // blocks removed at this step
};

// Shrinks the package through strictly decreasing budgets, re-ranking and
// evaluating after each. Every budget is validated before any mutation, and
// the optimizer step counter must not move while the timeline runs.
std::vector<TimelineRow> SimulateBudgetTimeline(PeePackage& package, const InteractionLog& log,
                                                const std::vector<std::uint64_t>& budgets,
                                                std::size_t k);

// budgetMB,recallAtK,ndcgAtK,shrinkMicros,rankMicros,paramCount
std::string TimelineCsv(const std::vector<TimelineRow>& rows);

}  // namespace peel
