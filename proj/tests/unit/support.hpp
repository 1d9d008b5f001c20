#pragma once

// Fixtures and reference helpers shared by the unit tests.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "peel/finetune.hpp"
#include "peel/rng.hpp"
#include "peel/types.hpp"

namespace peel::test {

inline InteractionLog MakeLog(std::size_t users, std::size_t items,
                              const std::vector<std::tuple<UserId, ItemId, Role>>& rows) {
  InteractionLog log;
  log.num_users = users;
  log.num_items = items;
  for (std::size_t u = 0; u < users; ++u) log.user_names.push_back("u" + std::to_string(u));
  for (std::size_t v = 0; v < items; ++v) log.item_names.push_back("i" + std::to_string(v));
  for (const auto& [u, v, role] : rows) log.interactions.push_back({u, v, role, 0});
  log.RebuildAdjacency();
  return log;
}

template <class T>
void FillNormal(MatrixT<T>& m, Rng& rng, double stddev) {
  for (auto& x : m.flat()) x = static_cast<T>(rng.Normal(0.0, stddev));
}

// |a - b|_2 / max(|a|_2, |b|_2), zero when both vanish.
inline double RelativeError(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

// Central differences of `f` over every entry of `x`, restoring each entry.
template <class F>
std::vector<double> CentralDifference(std::span<double> x, F&& f, double h = 1e-3) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

// A group model with random weights over `num_items` items cut into
// `item_groups` contiguous groups. Users 0..num_users-1 all belong to it.
inline GroupModel RandomGroupModel(std::uint64_t seed, std::size_t num_users,
                                   std::size_t num_items, std::size_t item_groups,
                                   std::size_t blocks_per_item, std::size_t block_dim) {
  Rng rng(seed);
  GroupModel m;
  GroupContext& ctx = m.context;
  ctx.blocks_per_item = blocks_per_item;
  ctx.block_dim = block_dim;
  ctx.item_groups = item_groups;
  const auto sizes = EqualSegmentSizes(num_items, item_groups);
  ItemId next = 0;
  for (std::size_t g = 0; g < item_groups; ++g) {
    m.item_groups.emplace_back();
    for (std::size_t r = 0; r < sizes[g]; ++r) {
      m.item_groups[g].push_back(next);
      ctx.item_group_of.push_back(static_cast<std::uint32_t>(g));
      ++next;
    }
  }
  for (std::size_t u = 0; u < num_users; ++u) {
    ctx.users.push_back(static_cast<UserId>(u));
    ctx.local_user.push_back(static_cast<std::int64_t>(u));
  }
  ctx.popularity.assign(item_groups, 1.0 / static_cast<double>(item_groups));
  const std::size_t dim = blocks_per_item * block_dim;
  m.weights.items = Matrix(num_items, dim);
  m.weights.users = Matrix(num_users, dim);
  FillNormal(m.weights.items, rng, 1.0);
  FillNormal(m.weights.users, rng, 1.0);
  m.weights.scorer = Mlp<float>(2 * dim, {4}, 1);
  m.weights.scorer.InitGlorot(rng);
  m.controller = Mlp<float>(item_groups + 1, {3}, ctx.alpha_size());
  m.controller.InitGlorot(rng);
  m.norm = NormStats::Identity(blocks_per_item, block_dim, 1e-5, 0.9);
  for (std::size_t n = 0; n < blocks_per_item; ++n) {
    for (std::size_t k = 0; k < block_dim; ++k) {
      m.norm.mean(n, k) = static_cast<float>(rng.Normal(0.0, 0.3));
      m.norm.var(n, k) = static_cast<float>(0.5 + rng.Uniform01());
    }
  }
  m.alpha.resize(ctx.alpha_size());
  double total = 0.0;
  for (auto& a : m.alpha) {
    a = static_cast<float>(-std::log(1.0 - rng.Uniform01()));
    total += a;
  }
  for (auto& a : m.alpha) a = static_cast<float>(a / total);
  return m;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path ScratchDir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("peel_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace peel::test
