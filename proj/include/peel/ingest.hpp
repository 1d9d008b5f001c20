#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "peel/config.hpp"
#include "peel/rng.hpp"
#include "peel/types.hpp"

namespace peel {

struct BprTriple {
  UserId user = 0;
  ItemId positive = 0;
  ItemId negative = 0;
};

// Parses `user<TAB>item[<TAB>timestamp]` records, deduplicates (user, item)
// pairs, then removes users and items with fewer than `min_interactions`
// interactions until no more removals happen. Ids are densified in sorted
// order of their original spelling, so the result does not depend on line
// order. All roles are kUnassigned.
InteractionLog FilterInteractionsText(const std::string& text, std::size_t min_interactions);
InteractionLog LoadAndFilter(const std::string& path, std::size_t min_interactions);

// Assigns train/validation/test roles. Per user: validation and test counts
// are round(n * ratio); train takes the rest and never drops below one.
// Timestamped logs are split chronologically instead of shuffled. Any
// validation/test interaction whose item has no train interaction is moved
// to train so every evaluated item has a trained embedding.
InteractionLog SplitRoles(InteractionLog log, const std::array<double, 3>& ratios,
                          std::uint64_t seed, SplitMode mode = SplitMode::kPerUser);

// Items by train popularity descending (ties: ascending id), cut into
// `num_groups` contiguous near-equal segments (remainder to earliest).
GroupingPlan SegmentItemsByPopularity(const InteractionLog& log, std::size_t num_groups);
// Ablation variant: seeded random order, same segment sizes.
GroupingPlan SegmentItemsRandomly(const InteractionLog& log, std::size_t num_groups,
                                  std::uint64_t seed);

// Uniform positive sampling over a fixed list of (user, item) pairs with
// uniform negatives drawn by rejection from items outside each user's
// exclusion set.
class BprSampler {
 public:
  BprSampler(std::vector<std::pair<UserId, ItemId>> positives,
             std::vector<std::vector<ItemId>> exclusions, std::size_t num_items);

  // Train triples of the log; negatives avoid train adjacency.
  static BprSampler ForTrain(const InteractionLog& log);
  // Positives with `role` for the listed users. Negatives avoid the user's
  // train items, and also validation items when `role` is not kTrain.
  static BprSampler ForUsers(const InteractionLog& log, const std::vector<UserId>& users,
                             Role role);

  std::vector<BprTriple> Sample(std::size_t batch_size, Rng& rng) const;
  std::size_t num_positives() const noexcept { return positives_.size(); }
  const std::vector<std::pair<UserId, ItemId>>& positives() const noexcept { return positives_; }

 private:
  std::vector<std::pair<UserId, ItemId>> positives_;
  std::vector<std::vector<ItemId>> exclusions_;  // sorted, indexed by user
  std::size_t num_items_;
};

std::vector<BprTriple> SampleBprBatch(const InteractionLog& log, std::size_t batch_size,
                                      std::uint64_t seed);

// Binary snapshot ("PLOG") of a split log, including original id names.
void SaveLogSnapshot(const InteractionLog& log, const std::string& path);
InteractionLog LoadLogSnapshot(const std::string& path);
std::string LogStatsSummary(const InteractionLog& log);

}  // namespace peel
