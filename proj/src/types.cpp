#include "peel/types.hpp"

#include <algorithm>
#include <string>

#include "peel/error.hpp"

namespace peel {

void InteractionLog::RebuildAdjacency() {
  user_adjacency_.assign(num_users, {});
  item_adjacency_.assign(num_items, {});
  for (const Interaction& x : interactions) {
    if (x.role != Role::kTrain) continue;
    user_adjacency_[x.user].push_back(x.item);
    item_adjacency_[x.item].push_back(x.user);
  }
  for (auto& items : user_adjacency_) std::sort(items.begin(), items.end());
  for (auto& users : item_adjacency_) std::sort(users.begin(), users.end());
}

bool InteractionLog::IsTrainPair(UserId user, ItemId item) const {
  const auto& items = user_adjacency_[user];
  return std::binary_search(items.begin(), items.end(), item);
}

std::vector<std::vector<ItemId>> InteractionLog::ItemsByUser(Role role) const {
  std::vector<std::vector<ItemId>> out(num_users);
  for (const Interaction& x : interactions) {
    if (x.role == role) out[x.user].push_back(x.item);
  }
  for (auto& items : out) std::sort(items.begin(), items.end());
  return out;
}

std::size_t InteractionLog::CountRole(Role role) const {
  return static_cast<std::size_t>(std::count_if(
      interactions.begin(), interactions.end(),
      [role](const Interaction& x) { return x.role == role; }));
}

std::vector<std::size_t> InteractionLog::TrainPopularity() const {
  std::vector<std::size_t> counts(num_items, 0);
  for (const Interaction& x : interactions) {
    if (x.role == Role::kTrain) ++counts[x.item];
  }
  return counts;
}

std::vector<std::size_t> EqualSegmentSizes(std::size_t num_items, std::size_t num_groups) {
  Require(num_groups > 0, ErrorKind::kConfig, "number of groups must be positive");
  std::vector<std::size_t> sizes(num_groups, num_items / num_groups);
  for (std::size_t g = 0; g < num_items % num_groups; ++g) ++sizes[g];
  return sizes;
}

BlockGrid::BlockGrid(std::size_t blocks_per_item, std::size_t block_dim,
                     std::vector<std::vector<ItemId>> group_items, std::size_t num_items)
    : blocks_per_item_(blocks_per_item),
      block_dim_(block_dim),
      group_items_(std::move(group_items)),
      membership_(num_items) {
  Require(blocks_per_item > 0 && block_dim > 0, ErrorKind::kConfig,
          "block grid needs positive N and d");
  std::vector<bool> seen(num_items, false);
  for (std::size_t g = 0; g < group_items_.size(); ++g) {
    for (std::size_t r = 0; r < group_items_[g].size(); ++r) {
      const ItemId item = group_items_[g][r];
      Require(item < num_items && !seen[item], ErrorKind::kConfig,
              "item groups must partition the item set");
      seen[item] = true;
      membership_[item] = {static_cast<std::uint32_t>(g), static_cast<std::uint32_t>(r)};
    }
  }
  Require(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }), ErrorKind::kConfig,
          "item groups must cover every item");
  blocks_.reserve(group_items_.size() * blocks_per_item_);
  for (const auto& items : group_items_) {
    for (std::size_t n = 0; n < blocks_per_item_; ++n) {
      blocks_.emplace_back(items.size(), block_dim_);
    }
  }
}

BlockGrid BlockGrid::FromTable(const Matrix& table, std::size_t blocks_per_item,
                               std::vector<std::vector<ItemId>> group_items) {
  Require(blocks_per_item > 0 && table.cols() % blocks_per_item == 0, ErrorKind::kConfig,
          "table width must be a multiple of the block count");
  const std::size_t d = table.cols() / blocks_per_item;
  BlockGrid grid(blocks_per_item, d, std::move(group_items), table.rows());
  for (std::size_t g = 0; g < grid.num_groups(); ++g) {
    const auto& items = grid.group_items(g);
    for (std::size_t r = 0; r < items.size(); ++r) {
      const auto src = table.row(items[r]);
      for (std::size_t n = 0; n < blocks_per_item; ++n) {
        std::copy_n(src.begin() + n * d, d, grid.block(g, n).row(r).begin());
      }
    }
  }
  return grid;
}

bool BlockGrid::contains(ItemId item) const { return item < membership_.size(); }

ItemSlot BlockGrid::slot(ItemId item) const {
  if (!contains(item)) Fail(ErrorKind::kNotFound, "unknown item id " + std::to_string(item));
  return membership_[item];
}

std::vector<float> BlockGrid::FullEmbedding(ItemId item) const {
  const ItemSlot s = slot(item);
  std::vector<float> out;
  out.reserve(full_dim());
  for (std::size_t n = 0; n < blocks_per_item_; ++n) {
    const auto r = block(s.group, n).row(s.row);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

Matrix BlockGrid::ToTable() const {
  Matrix table(num_items(), full_dim());
  for (ItemId item = 0; item < num_items(); ++item) {
    const auto full = FullEmbedding(item);
    std::copy(full.begin(), full.end(), table.row(item).begin());
  }
  return table;
}

std::vector<std::uint32_t> GroupingPlan::UserGroupIndex(std::size_t num_users) const {
  std::vector<std::uint32_t> index(num_users, 0);
  std::vector<bool> seen(num_users, false);
  for (std::size_t g = 0; g < user_groups.size(); ++g) {
    for (UserId u : user_groups[g]) {
      Require(u < num_users && !seen[u], ErrorKind::kConfig, "user groups must partition users");
      seen[u] = true;
      index[u] = static_cast<std::uint32_t>(g);
    }
  }
  Require(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }), ErrorKind::kConfig,
          "user groups must cover every user");
  return index;
}

}  // namespace peel
