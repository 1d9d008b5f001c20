#include "peel/deploy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "peel/binary_io.hpp"
#include "peel/error.hpp"
#include "peel/rng.hpp"

namespace peel {
namespace {

constexpr std::uint16_t kPackageVersion = 1;
constexpr std::size_t kMaxBlocks = 16;  // selection bitmask width

void CheckAlpha(std::span<const float> alpha, std::size_t blocks_per_item, std::size_t item_groups) {
  Require(blocks_per_item >= 1 && blocks_per_item <= kMaxBlocks, ErrorKind::kConfig,
          "blocks per item must be in [1, 16]");
  Require(item_groups >= 1, ErrorKind::kConfig, "need at least one item group");
  Require(alpha.size() == blocks_per_item * item_groups, ErrorKind::kConfig,
          "alpha size does not match N * G");
  for (float a : alpha) {
    Require(std::isfinite(a), ErrorKind::kNumerical, "non-finite importance weight");
  }
}

std::string InfeasibleMessage(std::uint64_t budget_bytes, const BudgetLayout& layout) {
  std::ostringstream msg;
  msg << "budget of " << budget_bytes << " bytes cannot hold the user embedding plus one block "
      << "per item group; minimal feasible budget is " << layout.MinimalBytes() << " bytes ("
      << BudgetMbFromBytes(layout.MinimalBytes()) << " MB)";
  return msg.str();
}

void CheckFeasible(std::uint64_t budget_bytes, const BudgetLayout& layout) {
  if (layout.CapacityParams(budget_bytes) < layout.MinimalParams()) {
    Fail(ErrorKind::kBudgetInfeasible, InfeasibleMessage(budget_bytes, layout));
  }
}

Selection FromRefs(const std::vector<BlockRef>& refs, std::size_t item_groups) {
  Selection out(item_groups);
  for (const auto& r : refs) out[r.group].push_back(r.block);
  for (auto& s : out) std::sort(s.begin(), s.end());
  return out;
}

}  // namespace

std::uint64_t BudgetBytesFromMb(double megabytes) {
  Require(std::isfinite(megabytes) && megabytes > 0.0, ErrorKind::kConfig,
          "memory budget must be a positive number of MB");
  return static_cast<std::uint64_t>(std::llround(megabytes * 1e6));
}

double BudgetMbFromBytes(std::uint64_t bytes) { return static_cast<double>(bytes) / 1e6; }

std::uint64_t BudgetLayout::MinimalParams() const {
  std::uint64_t total = user_params;
  for (std::size_t g = 0; g < group_sizes.size(); ++g) total += BlockParams(g);
  return total;
}

std::uint64_t BudgetLayout::FullParams() const {
  return user_params + (MinimalParams() - user_params) * blocks_per_item;
}

std::size_t MaxBlocksForBudget(std::uint64_t budget_bytes, const BudgetLayout& layout) {
  Require(layout.num_groups() >= 1 && layout.block_dim >= 1 && layout.bytes_per_parameter >= 1,
          ErrorKind::kConfig, "degenerate budget layout");
  CheckFeasible(budget_bytes, layout);
  std::uint64_t smallest = layout.BlockParams(0);
  for (std::size_t g = 1; g < layout.num_groups(); ++g) {
    smallest = std::min(smallest, layout.BlockParams(g));
  }
  Require(smallest > 0, ErrorKind::kConfig, "empty item group");
  const std::uint64_t per_block_bytes = smallest * layout.bytes_per_parameter;
  const std::uint64_t user_bytes = layout.user_params * layout.bytes_per_parameter;
  return static_cast<std::size_t>((budget_bytes - user_bytes) / per_block_bytes);
}

SelectionOrder RankBlocks(std::span<const float> alpha, std::size_t blocks_per_item,
                          std::size_t item_groups) {
  CheckAlpha(alpha, blocks_per_item, item_groups);
  auto at = [&](const BlockRef& r) { return alpha[item_groups * r.block + r.group]; };
  SelectionOrder order;
  for (std::uint32_t g = 0; g < item_groups; ++g) {
    BlockRef best{g, 0};
    for (std::uint32_t n = 1; n < blocks_per_item; ++n) {
      if (at({g, n}) > at(best)) best = {g, n};
    }
    order.floor.push_back(best);
    for (std::uint32_t n = 0; n < blocks_per_item; ++n) {
      if (n != best.block) order.ranked.push_back({g, n});
    }
  }
  std::stable_sort(order.ranked.begin(), order.ranked.end(), [&](const BlockRef& a, const BlockRef& b) {
    if (at(a) != at(b)) return at(a) > at(b);
    if (a.group != b.group) return a.group < b.group;
    return a.block < b.block;
  });
  return order;
}

Selection SelectBlocks(std::span<const float> alpha, std::size_t blocks_per_item,
                       std::size_t item_groups, std::size_t max_blocks) {
  if (max_blocks < item_groups) {
    Fail(ErrorKind::kBudgetInfeasible, "C = " + std::to_string(max_blocks) +
                                           " is below the per-group floor of " +
                                           std::to_string(item_groups) + " blocks");
  }
  SelectionOrder order = RankBlocks(alpha, blocks_per_item, item_groups);
  const std::size_t extra = std::min(max_blocks - item_groups, order.ranked.size());
  std::vector<BlockRef> chosen = order.floor;
  chosen.insert(chosen.end(), order.ranked.begin(), order.ranked.begin() + extra);
  return FromRefs(chosen, item_groups);
}

Selection SelectBlocksForBudget(std::span<const float> alpha, const BudgetLayout& layout,
                                std::uint64_t budget_bytes) {
  CheckFeasible(budget_bytes, layout);
  SelectionOrder order = RankBlocks(alpha, layout.blocks_per_item, layout.num_groups());
  const std::uint64_t capacity = layout.CapacityParams(budget_bytes);
  std::uint64_t used = layout.MinimalParams();
  std::vector<BlockRef> chosen = order.floor;
  for (const auto& r : order.ranked) {
    const std::uint64_t cost = layout.BlockParams(r.group);
    if (used + cost > capacity) break;
    used += cost;
    chosen.push_back(r);
  }
  return FromRefs(chosen, layout.num_groups());
}

std::uint64_t SelectionParams(const Selection& selection, const BudgetLayout& layout) {
  std::uint64_t total = layout.user_params;
  for (std::size_t g = 0; g < selection.size(); ++g) total += selection[g].size() * layout.BlockParams(g);
  return total;
}

std::size_t PeePackage::SelectedCount(std::size_t group) const {
  return static_cast<std::size_t>(std::popcount(selection[group]));
}

Selection PeePackage::GetSelection() const {
  Selection out(num_groups());
  for (std::size_t g = 0; g < num_groups(); ++g) {
    for (std::uint32_t n = 0; n < blocks_per_item; ++n) {
      if (selected(g, n)) out[g].push_back(n);
    }
  }
  return out;
}

BudgetLayout PeePackage::Layout() const {
  BudgetLayout layout;
  layout.blocks_per_item = blocks_per_item;
  layout.block_dim = block_dim;
  layout.bytes_per_parameter = bytes_per_parameter;
  layout.user_params = full_dim();
  for (const auto& items : item_groups) layout.group_sizes.push_back(items.size());
  return layout;
}

std::uint64_t PeePackage::ParamCount() const { return SelectionParams(GetSelection(), Layout()); }

PeePackage BuildPackage(const GroupModel& model, UserId user, std::uint64_t budget_bytes,
                        std::size_t bytes_per_parameter, std::span<const float> selection_alpha) {
  const GroupContext& ctx = model.context;
  Require(bytes_per_parameter >= 1, ErrorKind::kConfig, "bytes per parameter must be positive");
  PeePackage pkg;
  pkg.user_id = user;
  pkg.blocks_per_item = ctx.blocks_per_item;
  pkg.block_dim = ctx.block_dim;
  pkg.num_items = ctx.item_group_of.size();
  pkg.bytes_per_parameter = bytes_per_parameter;
  pkg.budget_bytes = budget_bytes;
  pkg.item_groups = model.item_groups;
  const auto u = model.UserRow(user);
  pkg.user_embedding.assign(u.begin(), u.end());
  pkg.alpha = selection_alpha.empty() ? model.alpha
                                      : std::vector<float>(selection_alpha.begin(), selection_alpha.end());

  const Selection sel = SelectBlocksForBudget(pkg.alpha, pkg.Layout(), budget_bytes);
  pkg.selection.assign(pkg.num_groups(), 0);
  pkg.blocks.assign(pkg.num_groups() * pkg.blocks_per_item, Matrix());
  const std::size_t d = ctx.block_dim;
  for (std::size_t g = 0; g < pkg.num_groups(); ++g) {
    const auto& items = pkg.item_groups[g];
    for (std::uint32_t n : sel[g]) {
      pkg.selection[g] |= static_cast<std::uint16_t>(1u << n);
      Matrix block(items.size(), d);
      for (std::size_t r = 0; r < items.size(); ++r) {
        for (std::size_t k = 0; k < d; ++k) {
          const double x = model.weights.items(items[r], n * d + k);
          const double z = (x - model.norm.mean(n, k)) /
                           std::sqrt(static_cast<double>(model.norm.var(n, k)) + model.norm.epsilon);
          block(r, k) = static_cast<float>(std::tanh(z));
        }
      }
      pkg.blocks[g * pkg.blocks_per_item + n] = std::move(block);
    }
  }
  return pkg;
}

std::size_t ShrinkPackage(PeePackage& package, std::uint64_t budget_bytes) {
  const BudgetLayout layout = package.Layout();
  CheckFeasible(budget_bytes, layout);
  Require(budget_bytes <= package.budget_bytes, ErrorKind::kConfig,
          "shrink cannot grow a package's budget");
  const SelectionOrder order = RankBlocks(package.alpha, package.blocks_per_item, package.num_groups());
  const std::uint64_t capacity = layout.CapacityParams(budget_bytes);
  std::uint64_t used = package.ParamCount();
  std::size_t removed = 0;
  for (auto it = order.ranked.rbegin(); it != order.ranked.rend() && used > capacity; ++it) {
    if (!package.selected(it->group, it->block)) continue;
    package.selection[it->group] &= static_cast<std::uint16_t>(~(1u << it->block));
    package.blocks[it->group * package.blocks_per_item + it->block] = Matrix();
    used -= layout.BlockParams(it->group);
    ++removed;
  }
  package.budget_bytes = budget_bytes;
  return removed;
}

std::vector<float> RandomSelectionAlpha(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> raw(size);
  double total = 0.0;
  for (auto& x : raw) total += (x = rng.Uniform01() + 1e-12);
  std::vector<float> out(size);
  for (std::size_t i = 0; i < size; ++i) out[i] = static_cast<float>(raw[i] / total);
  return out;
}

std::vector<std::uint8_t> SerializePackage(const PeePackage& p) {
  Require(p.blocks_per_item <= kMaxBlocks, ErrorKind::kFormat, "package N exceeds bitmask width");
  const auto sizes = EqualSegmentSizes(p.num_items, p.num_groups());
  for (std::size_t g = 0; g < p.num_groups(); ++g) {
    Require(p.item_groups[g].size() == sizes[g], ErrorKind::kFormat,
            "package item groups must be equal contiguous segments");
  }
  ByteWriter w;
  w.Magic("PEE1");
  w.U16(kPackageVersion);
  w.U32(static_cast<std::uint32_t>(p.blocks_per_item));
  w.U32(static_cast<std::uint32_t>(p.block_dim));
  w.U32(static_cast<std::uint32_t>(p.num_groups()));
  w.U32(static_cast<std::uint32_t>(p.num_items));
  w.U32(p.user_id);
  for (auto mask : p.selection) w.U16(mask);
  for (std::size_t g = 0; g < p.num_groups(); ++g) {
    for (std::size_t n = 0; n < p.blocks_per_item; ++n) {
      if (p.selected(g, n)) w.F32s(p.block(g, n).flat());
    }
  }
  w.F32s(p.user_embedding);
  w.F32s(p.alpha);
  w.U32(static_cast<std::uint32_t>(p.bytes_per_parameter));
  w.U64(p.budget_bytes);
  for (const auto& items : p.item_groups) {
    for (ItemId v : items) w.U32(v);
  }
  return w.Take();
}

PeePackage DeserializePackage(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.ExpectMagic("PEE1");
  Require(r.U16() == kPackageVersion, ErrorKind::kFormat, "unsupported package version");
  PeePackage p;
  p.blocks_per_item = r.U32();
  p.block_dim = r.U32();
  const std::size_t groups = r.U32();
  p.num_items = r.U32();
  p.user_id = r.U32();
  Require(p.blocks_per_item >= 1 && p.blocks_per_item <= kMaxBlocks && p.block_dim >= 1 &&
              groups >= 1 && groups <= p.num_items,
          ErrorKind::kFormat, "invalid package header");
  const auto sizes = EqualSegmentSizes(p.num_items, groups);
  p.selection.resize(groups);
  for (auto& mask : p.selection) {
    mask = r.U16();
    Require(mask != 0 && (mask >> p.blocks_per_item) == 0, ErrorKind::kFormat,
            "invalid selection bitmask");
  }
  p.blocks.assign(groups * p.blocks_per_item, Matrix());
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t n = 0; n < p.blocks_per_item; ++n) {
      if (!p.selected(g, n)) continue;
      Matrix block(sizes[g], p.block_dim);
      r.F32s(block.flat());
      p.blocks[g * p.blocks_per_item + n] = std::move(block);
    }
  }
  p.user_embedding.resize(p.full_dim());
  r.F32s(p.user_embedding);
  p.alpha.resize(p.blocks_per_item * groups);
  r.F32s(p.alpha);
  p.bytes_per_parameter = r.U32();
  p.budget_bytes = r.U64();
  p.item_groups.resize(groups);
  std::vector<bool> seen(p.num_items, false);
  for (std::size_t g = 0; g < groups; ++g) {
    p.item_groups[g].resize(sizes[g]);
    for (auto& v : p.item_groups[g]) {
      v = r.U32();
      Require(v < p.num_items && !seen[v], ErrorKind::kFormat, "invalid item order in package");
      seen[v] = true;
    }
  }
  Require(r.AtEnd(), ErrorKind::kFormat, "trailing bytes in package");
  return p;
}

void SavePackage(const std::string& path, const PeePackage& package) {
  WriteFileBytes(path, SerializePackage(package));
}

PeePackage LoadPackage(const std::string& path) { return DeserializePackage(ReadFileBytes(path)); }

}  // namespace peel
