#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "peel/finetune.hpp"
#include "peel/matrix.hpp"
#include "peel/types.hpp"

namespace peel {

// Decimal megabytes (1 MB = 1e6 bytes), rounded to the nearest byte.
std::uint64_t BudgetBytesFromMb(double megabytes);
double BudgetMbFromBytes(std::uint64_t bytes);

// Parameter-count bookkeeping for one deployment shape.
struct BudgetLayout {
  std::size_t blocks_per_item = 0;
  std::size_t block_dim = 0;
  std::size_t bytes_per_parameter = 4;
  std::size_t user_params = 0;            // D
  std::vector<std::size_t> group_sizes;   // items per item group

  std::size_t num_groups() const { return group_sizes.size(); }
  std::uint64_t BlockParams(std::size_t group) const { return group_sizes[group] * block_dim; }
  std::uint64_t CapacityParams(std::uint64_t budget_bytes) const {
    return budget_bytes / bytes_per_parameter;
  }
  // User embedding plus one block per item group.
  std::uint64_t MinimalParams() const;
  std::uint64_t MinimalBytes() const { return MinimalParams() * bytes_per_parameter; }
  std::uint64_t FullParams() const;
};

// C = floor((M - user bytes) / per-block bytes). With unequal groups the
// smallest block is used, so C is an upper bound. Throws kBudgetInfeasible
// when M cannot hold the user embedding plus one block per group.
std::size_t MaxBlocksForBudget(std::uint64_t budget_bytes, const BudgetLayout& layout);

// Selected block indices per item group, ascending.
using Selection = std::vector<std::vector<std::uint32_t>>;

struct BlockRef {
  std::uint32_t group = 0;
  std::uint32_t block = 0;
  friend bool operator==(const BlockRef&, const BlockRef&) = default;
};

// Selection order derived from alpha (layout G*n + g): `floor` holds each
// group's argmax block (ties to the lowest block), `ranked` every other pair
// by alpha descending, ties to the lower group and then the lower block.
struct SelectionOrder {
  std::vector<BlockRef> floor;
  std::vector<BlockRef> ranked;
};
SelectionOrder RankBlocks(std::span<const float> alpha, std::size_t blocks_per_item,
                          std::size_t item_groups);

// Per-group argmax plus the top (C - G) remaining blocks by alpha.
Selection SelectBlocks(std::span<const float> alpha, std::size_t blocks_per_item,
                       std::size_t item_groups, std::size_t max_blocks);

// Byte-exact variant: the floor plus the longest prefix of the ranked list
// whose cumulative parameter cost fits the budget. Equals SelectBlocks with
// C from MaxBlocksForBudget when groups are equal-sized.
Selection SelectBlocksForBudget(std::span<const float> alpha, const BudgetLayout& layout,
                                std::uint64_t budget_bytes);

std::uint64_t SelectionParams(const Selection& selection, const BudgetLayout& layout);

struct PeePackage {
  UserId user_id = 0;
  std::size_t blocks_per_item = 0;
  std::size_t block_dim = 0;
  std::size_t num_items = 0;
  std::size_t bytes_per_parameter = 4;
  std::uint64_t budget_bytes = 0;
  std::vector<float> user_embedding;             // D
  std::vector<std::vector<ItemId>> item_groups;  // row order of each group's blocks
  std::vector<std::uint16_t> selection;          // bitmask per item group
  std::vector<Matrix> blocks;                    // G*N, empty when unselected
  std::vector<float> alpha;                      // snapshot used for selection

  std::size_t num_groups() const { return item_groups.size(); }
  std::size_t full_dim() const { return blocks_per_item * block_dim; }
  bool selected(std::size_t group, std::size_t n) const { return (selection[group] >> n) & 1u; }
  const Matrix& block(std::size_t group, std::size_t n) const {
    return blocks[group * blocks_per_item + n];
  }
  std::size_t SelectedCount(std::size_t group) const;
  Selection GetSelection() const;
  BudgetLayout Layout() const;
  // Embedding parameters only: user embedding plus selected blocks.
  std::uint64_t ParamCount() const;
  std::uint64_t ByteSize() const { return ParamCount() * bytes_per_parameter; }

  friend bool operator==(const PeePackage&, const PeePackage&) = default;
};

// Builds a user's package from a frozen group model. Blocks are stored after
// inference-mode normalization. `selection_alpha`, when given, replaces the
// model's alpha for selection (used by the random-weight ablation).
PeePackage BuildPackage(const GroupModel& model, UserId user, std::uint64_t budget_bytes,
                        std::size_t bytes_per_parameter,
                        std::span<const float> selection_alpha = {});

// Removes non-floor blocks in reverse selection order until the package fits
// `budget_bytes`. Touches only the package. Returns the number of removed
// blocks.
std::size_t ShrinkPackage(PeePackage& package, std::uint64_t budget_bytes);

// Random importance weights on the simplex, for the importance-weight ablation.
std::vector<float> RandomSelectionAlpha(std::size_t size, std::uint64_t seed);

// Bit-exact package codec. Layout: "PEE1", u16 version, u32 N, d, G, |V|,
// userId, a u16 bitmask per group, selected blocks in (group, block) order as
// row-major float32, the user embedding, alpha, then a trailer with u32
// bytes-per-parameter, u64 budget bytes and |V| u32 item ids in group order.
std::vector<std::uint8_t> SerializePackage(const PeePackage& package);
PeePackage DeserializePackage(std::span<const std::uint8_t> bytes);
void SavePackage(const std::string& path, const PeePackage& package);
PeePackage LoadPackage(const std::string& path);

}  // namespace peel
