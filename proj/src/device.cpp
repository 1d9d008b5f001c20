#include "peel/device.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "peel/error.hpp"
#include "peel/optim.hpp"

namespace peel {
namespace {

using Clock = std::chrono::steady_clock;

double MicrosSince(Clock::time_point start) {
  return std::chrono::duration<double, std::micro>(Clock::now() - start).count();
}

std::string Num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

}  // namespace

std::vector<double> ScoreItems(const PeePackage& p) {
  const std::size_t d = p.block_dim;
  Require(p.user_embedding.size() == p.full_dim(), ErrorKind::kFormat,
          "user embedding width does not match the package");
  // u^T repeat(e) equals (sum of the user's N blocks) . e.
  std::vector<double> folded(d, 0.0);
  for (std::size_t m = 0; m < p.blocks_per_item; ++m) {
    for (std::size_t k = 0; k < d; ++k) folded[k] += p.user_embedding[m * d + k];
  }
  std::size_t max_selected = 0;
  for (std::size_t g = 0; g < p.num_groups(); ++g) max_selected = std::max(max_selected, p.SelectedCount(g));

  std::vector<double> scores(p.num_items, 0.0);
  for (std::size_t g = 0; g < p.num_groups(); ++g) {
    const auto& items = p.item_groups[g];
    const std::size_t count = p.SelectedCount(g);
    if (count == 0) continue;
    const double scale = static_cast<double>(max_selected) / static_cast<double>(count);
    for (std::size_t n = 0; n < p.blocks_per_item; ++n) {
      if (!p.selected(g, n)) continue;
      const Matrix& block = p.block(g, n);
      for (std::size_t r = 0; r < items.size(); ++r) {
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += folded[k] * block(r, k);
        scores[items[r]] += dot;
      }
    }
    for (ItemId v : items) scores[v] *= scale;
  }
  return scores;
}

RankingResult RankItems(const PeePackage& package) {
  const auto start = Clock::now();
  RankingResult out;
  out.scores = ScoreItems(package);
  out.ordered_items.resize(out.scores.size());
  std::iota(out.ordered_items.begin(), out.ordered_items.end(), 0u);
  std::sort(out.ordered_items.begin(), out.ordered_items.end(), [&](ItemId a, ItemId b) {
    if (out.scores[a] != out.scores[b]) return out.scores[a] > out.scores[b];
    return a < b;
  });
  out.latency_micros = MicrosSince(start);
  return out;
}

std::optional<TopKMetrics> EvaluateRanking(const RankingResult& ranking,
                                           const std::vector<ItemId>& seen,
                                           const std::vector<ItemId>& truth, std::size_t num_items,
                                           std::size_t k) {
  if (truth.empty()) return std::nullopt;
  std::vector<bool> excluded(num_items, false);
  for (ItemId v : seen) excluded.at(v) = true;
  std::vector<ItemId> top;
  top.reserve(k);
  for (ItemId v : ranking.ordered_items) {
    if (top.size() == k) break;
    if (!excluded[v]) top.push_back(v);
  }
  return ScoreRanking(top, truth, k);
}

namespace {

struct UserItems {
  std::vector<ItemId> seen;   // train and validation
  std::vector<ItemId> truth;  // test
};

UserItems CollectUserItems(const PeePackage& package, const InteractionLog& log) {
  Require(package.user_id < log.num_users, ErrorKind::kNotFound,
          "package user " + std::to_string(package.user_id) + " is not in the log");
  Require(package.num_items == log.num_items, ErrorKind::kSchemaMismatch,
          "package item count does not match the log");
  UserItems out;
  for (const auto& x : log.interactions) {
    if (x.user != package.user_id) continue;
    if (x.role == Role::kTest) {
      out.truth.push_back(x.item);
    } else if (x.role == Role::kTrain || x.role == Role::kValidation) {
      out.seen.push_back(x.item);
    }
  }
  return out;
}

}  // namespace

std::optional<TopKMetrics> EvaluatePackage(const PeePackage& package, const InteractionLog& log,
                                           std::size_t k) {
  const UserItems items = CollectUserItems(package, log);
  return EvaluateRanking(RankItems(package), items.seen, items.truth, log.num_items, k);
}

std::vector<TimelineRow> SimulateBudgetTimeline(PeePackage& package, const InteractionLog& log,
                                                const std::vector<std::uint64_t>& budgets,
                                                std::size_t k) {
  Require(!budgets.empty(), ErrorKind::kConfig, "budget timeline is empty");
  const BudgetLayout layout = package.Layout();
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    if (i == 0) {
      Require(budgets[0] <= package.budget_bytes, ErrorKind::kConfig,
              "first timeline budget exceeds the package's build budget");
    } else {
      Require(budgets[i] < budgets[i - 1], ErrorKind::kConfig,
              "timeline budgets must be strictly decreasing");
    }
    if (layout.CapacityParams(budgets[i]) < layout.MinimalParams()) {
      Fail(ErrorKind::kBudgetInfeasible,
           "timeline budget " + std::to_string(budgets[i]) + " bytes is below the minimal " +
               std::to_string(layout.MinimalBytes()) + " bytes");
    }
  }
  const UserItems items = CollectUserItems(package, log);
  const std::uint64_t steps_before = OptimizerStepCount();
  std::vector<TimelineRow> rows;
  for (std::uint64_t budget : budgets) {
    TimelineRow row;
    row.budget_bytes = budget;
    const auto start = Clock::now();
    row.shrink_ops = ShrinkPackage(package, budget);
    row.shrink_micros = MicrosSince(start);
    const RankingResult ranking = RankItems(package);
    row.rank_micros = ranking.latency_micros;
    row.metrics = EvaluateRanking(ranking, items.seen, items.truth, log.num_items, k);
    row.param_count = package.ParamCount();
    rows.push_back(row);
  }
  if (OptimizerStepCount() != steps_before) {
    Fail(ErrorKind::kNumerical, "optimizer ran during a shrink timeline");
  }
  return rows;
}

std::string TimelineCsv(const std::vector<TimelineRow>& rows) {
  std::ostringstream out;
  out << "budgetMB,recallAtK,ndcgAtK,shrinkMicros,rankMicros,paramCount\n";
  for (const auto& r : rows) {
    out << Num(BudgetMbFromBytes(r.budget_bytes)) << ','
        << (r.metrics ? Num(r.metrics->recall) : "NA") << ','
        << (r.metrics ? Num(r.metrics->ndcg) : "NA") << ',' << Num(r.shrink_micros) << ','
        << Num(r.rank_micros) << ',' << r.param_count << '\n';
  }
  return out.str();
}

}  // namespace peel
