#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "peel/matrix.hpp"

namespace peel {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

enum class Role : std::uint8_t { kUnassigned = 0, kTrain = 1, kValidation = 2, kTest = 3 };

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  Role role = Role::kUnassigned;
  std::int64_t timestamp = 0;
};

// Implicit-feedback log with dense ids. Original ids are kept in the name
// tables. Adjacency reflects train-role interactions only and must be rebuilt
// with RebuildAdjacency() after roles change.
class InteractionLog {
 public:
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  bool has_timestamps = false;
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;
  std::vector<Interaction> interactions;

  void RebuildAdjacency();

  const std::vector<ItemId>& UserTrainItems(UserId user) const { return user_adjacency_[user]; }
  const std::vector<UserId>& ItemTrainUsers(ItemId item) const { return item_adjacency_[item]; }
  bool IsTrainPair(UserId user, ItemId item) const;

  // Per-user item lists for one role, sorted ascending.
  std::vector<std::vector<ItemId>> ItemsByUser(Role role) const;
  std::size_t CountRole(Role role) const;
  std::vector<std::size_t> TrainPopularity() const;

 private:
  std::vector<std::vector<ItemId>> user_adjacency_;
  std::vector<std::vector<UserId>> item_adjacency_;
};

struct ItemSlot {
  std::uint32_t group = 0;
  std::uint32_t row = 0;
  friend bool operator==(const ItemSlot&, const ItemSlot&) = default;
};

// Sizes of `num_groups` contiguous segments over `num_items`; the first
// (num_items % num_groups) segments get one extra item.
std::vector<std::size_t> EqualSegmentSizes(std::size_t num_items, std::size_t num_groups);

// Item embedding table stored as item groups x blocks, each block an
// (items in group) x block_dim matrix.
class BlockGrid {
 public:
  BlockGrid() = default;
  BlockGrid(std::size_t blocks_per_item, std::size_t block_dim,
            std::vector<std::vector<ItemId>> group_items, std::size_t num_items);

  // Splits a |V| x (N*d) table into blocks.
  static BlockGrid FromTable(const Matrix& table, std::size_t blocks_per_item,
                             std::vector<std::vector<ItemId>> group_items);

  std::size_t num_groups() const noexcept { return group_items_.size(); }
  std::size_t blocks_per_item() const noexcept { return blocks_per_item_; }
  std::size_t block_dim() const noexcept { return block_dim_; }
  std::size_t full_dim() const noexcept { return blocks_per_item_ * block_dim_; }
  std::size_t num_items() const noexcept { return membership_.size(); }

  const std::vector<ItemId>& group_items(std::size_t group) const { return group_items_[group]; }
  const std::vector<std::vector<ItemId>>& all_group_items() const { return group_items_; }
  bool contains(ItemId item) const;
  ItemSlot slot(ItemId item) const;

  Matrix& block(std::size_t group, std::size_t n) { return blocks_[group * blocks_per_item_ + n]; }
  const Matrix& block(std::size_t group, std::size_t n) const {
    return blocks_[group * blocks_per_item_ + n];
  }

  std::vector<float> FullEmbedding(ItemId item) const;
  Matrix ToTable() const;

  friend bool operator==(const BlockGrid&, const BlockGrid&) = default;

 private:
  std::size_t blocks_per_item_ = 0;
  std::size_t block_dim_ = 0;
  std::vector<std::vector<ItemId>> group_items_;
  std::vector<ItemSlot> membership_;
  std::vector<Matrix> blocks_;
};

// |U| x D user embeddings.
struct UserEmbeddingTable {
  Matrix rows;
};

struct GroupingPlan {
  std::vector<std::vector<UserId>> user_groups;
  std::vector<std::vector<ItemId>> item_groups;
  std::vector<std::size_t> popularity;

  // groupIndex per user; requires user_groups to partition [0, num_users).
  std::vector<std::uint32_t> UserGroupIndex(std::size_t num_users) const;
};

}  // namespace peel
