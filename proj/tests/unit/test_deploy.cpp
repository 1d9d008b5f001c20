#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>

#include "peel/deploy.hpp"
#include "peel/optim.hpp"
#include "support.hpp"

using namespace peel;

namespace {

BudgetLayout EqualLayout(std::size_t items, std::size_t groups, std::size_t n, std::size_t d,
                         std::size_t user_params) {
  BudgetLayout layout;
  layout.blocks_per_item = n;
  layout.block_dim = d;
  layout.bytes_per_parameter = 4;
  layout.user_params = user_params;
  layout.group_sizes = EqualSegmentSizes(items, groups);
  return layout;
}

std::vector<float> RandomAlpha(std::size_t size, Rng& rng) {
  std::vector<float> a(size);
  for (auto& x : a) x = static_cast<float>(rng.Uniform01());
  return a;
}

double SelectedAlpha(const Selection& s, std::span<const float> alpha, std::size_t groups) {
  double total = 0.0;
  for (std::size_t g = 0; g < s.size(); ++g) {
    for (std::uint32_t n : s[g]) total += alpha[groups * n + g];
  }
  return total;
}

// Best sum of alpha per selected-count over every subset of the N*G blocks
// that keeps at least one block in each group; best[c] covers counts <= c.
std::vector<double> BruteForceBest(std::span<const float> alpha, std::size_t n, std::size_t groups) {
  const std::size_t bits = n * groups;
  std::vector<std::uint32_t> group_mask(groups, 0);
  for (std::size_t b = 0; b < bits; ++b) group_mask[b % groups] |= 1u << b;  // bit b = G*n + g
  std::vector<double> sum(std::size_t{1} << bits, 0.0);
  std::vector<double> best(bits + 1, -1.0);
  for (std::uint32_t mask = 1; mask < (1u << bits); ++mask) {
    const int low = std::countr_zero(mask);
    sum[mask] = sum[mask & (mask - 1)] + alpha[low];
    bool feasible = true;
    for (std::uint32_t gm : group_mask) feasible &= (mask & gm) != 0;
    if (!feasible) continue;
    const std::size_t count = static_cast<std::size_t>(std::popcount(mask));
    best[count] = std::max(best[count], sum[mask]);
  }
  for (std::size_t c = 1; c <= bits; ++c) best[c] = std::max(best[c], best[c - 1]);
  return best;
}

}  // namespace

TEST_CASE("ten megabytes hold sixty-two blocks") {
  const BudgetLayout layout = EqualLayout(50000, 20, 8, 16, 0);
  CHECK(layout.BlockParams(0) * 4 == 160000);  // 0.16 MB per block
  CHECK(MaxBlocksForBudget(BudgetBytesFromMb(10.0), layout) == 62);
}

TEST_CASE("budget at the floor boundary and below it") {
  const BudgetLayout layout = EqualLayout(100, 4, 4, 2, 8);
  const std::uint64_t exact = (8 + 4 * 25 * 2) * 4;
  CHECK(layout.MinimalBytes() == exact);
  CHECK(MaxBlocksForBudget(exact, layout) == 4);
  CHECK(MaxBlocksForBudget(exact + 3, layout) == 4);
  try {
    MaxBlocksForBudget(exact - 1, layout);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kBudgetInfeasible);
    CHECK(std::string(e.what()).find(std::to_string(exact)) != std::string::npos);
  }
}

TEST_CASE("megabytes are decimal") {
  CHECK(BudgetBytesFromMb(1.5) == 1500000);
  CHECK(BudgetMbFromBytes(2500000) == 2.5);
  CHECK_THROWS_AS(BudgetBytesFromMb(0.0), Error);
}

TEST_CASE("worked selection example") {
  // alpha index G*n + g: g1 = (0.4, 0.1), g2 = (0.3, 0.2).
  const std::vector<float> alpha = {0.4f, 0.3f, 0.1f, 0.2f};
  const Selection s = SelectBlocks(alpha, 2, 2, 3);
  CHECK(s == Selection{{0}, {0, 1}});
  CHECK(SelectBlocks(alpha, 2, 2, 2) == Selection{{0}, {0}});
  CHECK(SelectBlocks(alpha, 2, 2, 4) == Selection{{0, 1}, {0, 1}});
  CHECK(SelectBlocks(alpha, 2, 2, 99) == Selection{{0, 1}, {0, 1}});
  CHECK_THROWS_AS(SelectBlocks(alpha, 2, 2, 1), Error);
}

TEST_CASE("floor picks each group's argmax with ties to the lower block") {
  const std::vector<float> alpha = {0.2f, 0.1f, 0.2f, 0.5f};  // g0 tie between n0 and n1
  const SelectionOrder order = RankBlocks(alpha, 2, 2);
  CHECK(order.floor == std::vector<BlockRef>{{0, 0}, {1, 1}});
  CHECK(order.ranked == std::vector<BlockRef>{{0, 1}, {1, 0}});
}

TEST_CASE("greedy selection is optimal under the per-group floor") {
  Rng rng(2024);
  std::size_t checked = 0;
  for (std::size_t n = 1; n <= 16; ++n) {
    for (std::size_t g = 1; n * g <= 16; ++g) {
      for (int draw = 0; draw < 1000; ++draw) {
        const auto alpha = RandomAlpha(n * g, rng);
        const auto best = BruteForceBest(alpha, n, g);
        for (std::size_t c = g; c <= n * g; ++c) {
          const Selection s = SelectBlocks(alpha, n, g, c);
          const double got = SelectedAlpha(s, alpha, g);
          if (std::abs(got - best[c]) > 1e-9) {
            FAIL("suboptimal selection at N=" << n << " G=" << g << " C=" << c);
          }
          ++checked;
        }
      }
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("budget selection equals count selection for equal groups") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.UniformIndex(8), g = 1 + rng.UniformIndex(5);
    const BudgetLayout layout = EqualLayout(g * (1 + rng.UniformIndex(6)), g, n, 2, n * 2);
    const auto alpha = RandomAlpha(n * g, rng);
    const std::uint64_t bytes =
        layout.MinimalBytes() + rng.UniformIndex(static_cast<std::size_t>(layout.FullParams() * 4));
    CHECK(SelectBlocksForBudget(alpha, layout, bytes) ==
          SelectBlocks(alpha, n, g, MaxBlocksForBudget(bytes, layout)));
  }
}

TEST_CASE("parameter count is the user embedding plus selected blocks") {
  const GroupModel m = test::RandomGroupModel(3, 2, 10, 3, 4, 2);  // groups of 4, 3, 3 items
  const PeePackage pkg = BuildPackage(m, 1, 200, 4);
  std::uint64_t expected = 8;
  for (std::size_t g = 0; g < 3; ++g) expected += pkg.SelectedCount(g) * pkg.item_groups[g].size() * 2;
  CHECK(pkg.ParamCount() == expected);
  CHECK(pkg.ByteSize() <= 200);
  for (std::size_t g = 0; g < 3; ++g) {
    CHECK(pkg.SelectedCount(g) >= 1);
    for (std::size_t n = 0; n < 4; ++n) {
      CHECK(pkg.block(g, n).empty() != pkg.selected(g, n));
    }
  }
}

TEST_CASE("package blocks hold inference-normalized values") {
  const GroupModel m = test::RandomGroupModel(8, 2, 6, 2, 2, 3);
  const PeePackage pkg = BuildPackage(m, 0, 1000000, 4);
  for (std::size_t g = 0; g < 2; ++g) {
    for (std::size_t n = 0; n < 2; ++n) {
      REQUIRE(pkg.selected(g, n));
      for (std::size_t r = 0; r < pkg.item_groups[g].size(); ++r) {
        const ItemId v = pkg.item_groups[g][r];
        for (std::size_t k = 0; k < 3; ++k) {
          const double z = (m.weights.items(v, n * 3 + k) - m.norm.mean(n, k)) /
                           std::sqrt(m.norm.var(n, k) + m.norm.epsilon);
          CHECK(pkg.block(g, n)(r, k) == doctest::Approx(std::tanh(z)).epsilon(1e-6));
        }
      }
    }
  }
  CHECK(pkg.user_embedding == std::vector<float>(m.UserRow(0).begin(), m.UserRow(0).end()));
  CHECK_THROWS_AS(BuildPackage(m, 5, 1000000, 4), Error);
}

TEST_CASE("shrinking commutes with building") {
  Rng rng(77);
  const std::uint64_t steps = OptimizerStepCount();
  std::size_t compared = 0;
  for (int fixture = 0; fixture < 60; ++fixture) {
    const std::size_t n = 1 + rng.UniformIndex(6), g = 1 + rng.UniformIndex(4);
    const std::size_t items = g + rng.UniformIndex(12);
    const GroupModel m = test::RandomGroupModel(1000 + fixture, 2, items, g, n, 2);
    const std::size_t bpp = 1 + rng.UniformIndex(4);
    const BudgetLayout layout = BuildPackage(m, 0, 1u << 30, bpp).Layout();
    const std::uint64_t lo = layout.MinimalBytes(), hi = layout.FullParams() * bpp + 2 * bpp;
    for (int draw = 0; draw < 10; ++draw) {
      const std::uint64_t m1 = lo + rng.UniformIndex(static_cast<std::size_t>(hi - lo + 1));
      const PeePackage big = BuildPackage(m, 1, m1, bpp);
      const std::uint64_t step = (m1 - lo) / 15 + 1;
      std::vector<std::uint64_t> budgets;
      for (std::uint64_t m2 = m1; m2 > lo; m2 = m2 > lo + step ? m2 - step : lo) budgets.push_back(m2);
      budgets.push_back(lo);
      for (const std::uint64_t m2 : budgets) {
        PeePackage shrunk = big;
        ShrinkPackage(shrunk, m2);
        const PeePackage direct = BuildPackage(m, 1, m2, bpp);
        CHECK(shrunk == direct);
        CHECK(shrunk.ByteSize() <= m2);
        ++compared;
      }
    }
  }
  CHECK(compared > 500);
  CHECK(OptimizerStepCount() == steps);
}

TEST_CASE("shrink coherence over random weight draws") {
  const GroupModel base = test::RandomGroupModel(5, 1, 13, 3, 4, 2);
  Rng rng(6);
  for (int draw = 0; draw < 1000; ++draw) {
    const auto alpha = RandomSelectionAlpha(base.alpha_size(), rng.engine()());
    const PeePackage full = BuildPackage(base, 0, 1u << 20, 4, alpha);
    const BudgetLayout layout = full.Layout();
    const std::uint64_t m2 =
        layout.MinimalBytes() + rng.UniformIndex(static_cast<std::size_t>(full.ByteSize() - layout.MinimalBytes() + 1));
    PeePackage shrunk = full;
    ShrinkPackage(shrunk, m2);
    const Selection expected = SelectBlocksForBudget(alpha, layout, m2);
    if (shrunk.GetSelection() != expected) FAIL("selection mismatch at draw " << draw);
  }
}

TEST_CASE("shrink no-op, floor and error cases") {
  const GroupModel m = test::RandomGroupModel(9, 1, 12, 3, 4, 2);
  PeePackage pkg = BuildPackage(m, 0, 300, 4);
  const PeePackage before = pkg;
  CHECK(ShrinkPackage(pkg, 300) == 0);
  CHECK(pkg == before);

  const std::uint64_t minimal = pkg.Layout().MinimalBytes();
  ShrinkPackage(pkg, minimal);
  const SelectionOrder order = RankBlocks(m.alpha, 4, 3);
  for (const BlockRef& r : order.floor) CHECK(pkg.selected(r.group, r.block));
  for (std::size_t g = 0; g < 3; ++g) CHECK(pkg.SelectedCount(g) == 1);

  PeePackage again = before;
  try {
    ShrinkPackage(again, minimal - 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kBudgetInfeasible);
  }
  CHECK(again == before);
  CHECK_THROWS_AS(ShrinkPackage(again, 301), Error);
}

TEST_CASE("random selection weights lie on the simplex and depend on the seed") {
  const auto a = RandomSelectionAlpha(12, 1);
  const auto b = RandomSelectionAlpha(12, 1);
  const auto c = RandomSelectionAlpha(12, 2);
  CHECK(a == b);
  CHECK(a != c);
  double sum = 0.0;
  for (float x : a) {
    CHECK(x > 0.0f);
    sum += x;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("package codec is bit exact") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const GroupModel m = test::RandomGroupModel(seed, 3, 7 + seed, 1 + seed % 4, 1 + seed % 5, 2);
    const PeePackage pkg = BuildPackage(m, static_cast<UserId>(seed % 3), 120 + 20 * seed, 4);
    const auto bytes = SerializePackage(pkg);
    const PeePackage back = DeserializePackage(bytes);
    CHECK(back == pkg);
    CHECK(SerializePackage(back) == bytes);
  }
  const GroupModel m = test::RandomGroupModel(3, 1, 8, 2, 2, 2);
  const PeePackage pkg = BuildPackage(m, 0, 500, 4);
  const auto path = (test::ScratchDir("package") / "p.pee").string();
  SavePackage(path, pkg);
  CHECK(LoadPackage(path) == pkg);

  auto bytes = SerializePackage(pkg);
  bytes.resize(bytes.size() - 3);
  CHECK_THROWS_AS(DeserializePackage(bytes), Error);
  bytes = SerializePackage(pkg);
  bytes[0] = 'X';
  CHECK_THROWS_AS(DeserializePackage(bytes), Error);
}
