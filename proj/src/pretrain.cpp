#include "peel/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "peel/binary_io.hpp"
#include "peel/log.hpp"
#include "peel/metrics.hpp"
#include "peel/rng.hpp"

namespace peel {

PropagationGraph PropagationGraph::Build(const InteractionLog& log, std::size_t layers) {
  std::vector<std::pair<UserId, ItemId>> edges;
  for (const auto& x : log.interactions) {
    if (x.role == Role::kTrain) edges.emplace_back(x.user, x.item);
  }
  return FromEdges(log.num_users, log.num_items, edges, layers);
}

PropagationGraph PropagationGraph::FromEdges(std::size_t num_users, std::size_t num_items,
                                             const std::vector<std::pair<UserId, ItemId>>& edges,
                                             std::size_t layers) {
  std::vector<std::pair<UserId, ItemId>> sorted = edges;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  PropagationGraph g;
  g.layers_ = layers;
  std::vector<std::size_t> user_deg(num_users, 0), item_deg(num_items, 0);
  for (const auto& [u, v] : sorted) {
    Require(u < num_users && v < num_items, ErrorKind::kConfig, "edge id out of range");
    ++user_deg[u];
    ++item_deg[v];
  }
  g.user_offsets_.assign(num_users + 1, 0);
  g.item_offsets_.assign(num_items + 1, 0);
  for (std::size_t u = 0; u < num_users; ++u) g.user_offsets_[u + 1] = g.user_offsets_[u] + user_deg[u];
  for (std::size_t v = 0; v < num_items; ++v) g.item_offsets_[v + 1] = g.item_offsets_[v] + item_deg[v];
  g.user_neighbors_.resize(sorted.size());
  g.user_eta_.resize(sorted.size());
  g.item_neighbors_.resize(sorted.size());
  g.item_eta_.resize(sorted.size());
  std::vector<std::size_t> ucur(g.user_offsets_.begin(), g.user_offsets_.end() - 1);
  std::vector<std::size_t> icur(g.item_offsets_.begin(), g.item_offsets_.end() - 1);
  for (const auto& [u, v] : sorted) {
    const double eta =
        1.0 / std::sqrt(static_cast<double>(user_deg[u]) * static_cast<double>(item_deg[v]));
    g.user_neighbors_[ucur[u]] = v;
    g.user_eta_[ucur[u]++] = eta;
    g.item_neighbors_[icur[v]] = u;
    g.item_eta_[icur[v]++] = eta;
  }
  // Item-side neighbor lists arrive ordered by user because edges are sorted.
  return g;
}

double PropagationGraph::eta_from_user(UserId u, ItemId v) const {
  const auto first = user_neighbors_.begin() + static_cast<std::ptrdiff_t>(user_offsets_[u]);
  const auto last = user_neighbors_.begin() + static_cast<std::ptrdiff_t>(user_offsets_[u + 1]);
  const auto it = std::lower_bound(first, last, v);
  if (it == last || *it != v) return 0.0;
  return user_eta_[static_cast<std::size_t>(it - user_neighbors_.begin())];
}

double PropagationGraph::eta_from_item(ItemId v, UserId u) const {
  const auto first = item_neighbors_.begin() + static_cast<std::ptrdiff_t>(item_offsets_[v]);
  const auto last = item_neighbors_.begin() + static_cast<std::ptrdiff_t>(item_offsets_[v + 1]);
  const auto it = std::lower_bound(first, last, u);
  if (it == last || *it != u) return 0.0;
  return item_eta_[static_cast<std::size_t>(it - item_neighbors_.begin())];
}

double DiversityRegularizer(const BlockGrid& grid) {
  return DiversityRegularizer(grid.ToTable(), grid.blocks_per_item());
}

double PretrainLoss(std::span<const BprTriple> batch, const Matrix& users, const BlockGrid& items,
                    double lambda) {
  const Matrix table = items.ToTable();
  Require(users.cols() == table.cols(), ErrorKind::kConfig, "user/item dimension mismatch");
  double bpr = 0.0;
  for (const BprTriple& t : batch) {
    const auto u = users.row(t.user);
    const double diff = Dot(u, table.row(t.positive)) - Dot(u, table.row(t.negative));
    bpr -= detail::LogSigmoid(diff);
  }
  return bpr - lambda * DiversityRegularizer(table, items.blocks_per_item());
}

PretrainTrainer::PretrainTrainer(const PropagationGraph& graph, PretrainParams<float> init,
                                 PretrainHyper hyper, double learning_rate)
    : graph_(&graph), params_(std::move(init)), hyper_(hyper), adam_(learning_rate) {}

PretrainTerms PretrainTrainer::Step(std::span<const BprTriple> batch) {
  PretrainParams<float> grad;
  const PretrainTerms terms = PretrainObjective(*graph_, params_, batch, hyper_, &grad);
  auto finite = [](std::span<const float> xs) {
    return std::all_of(xs.begin(), xs.end(), [](float x) { return std::isfinite(x); });
  };
  if (!std::isfinite(terms.total) || !finite(grad.users.flat()) || !finite(grad.items.flat())) {
    std::ostringstream msg;
    msg << "pretrain diverged: bpr=" << terms.bpr << " diversity=" << terms.diversity
        << " decay=" << terms.decay;
    Fail(ErrorKind::kNumerical, msg.str());
  }
  adam_.Step({params_.users.flat(), params_.items.flat()},
             {std::as_const(grad.users).flat(), std::as_const(grad.items).flat()});
  return terms;
}

PretrainParams<float> InitPretrainParams(std::size_t num_users, std::size_t num_items,
                                         std::size_t full_dim, double stddev, std::uint64_t seed) {
  PretrainParams<float> p{Matrix(num_users, full_dim), Matrix(num_items, full_dim)};
  Rng user_rng = Rng(seed).Split(1);
  Rng item_rng = Rng(seed).Split(2);
  for (auto& x : p.users.flat()) x = static_cast<float>(user_rng.Normal(0.0, stddev));
  for (auto& x : p.items.flat()) x = static_cast<float>(item_rng.Normal(0.0, stddev));
  return p;
}

double ValidationRecallDot(const InteractionLog& log, const Matrix& users, const Matrix& items,
                           std::size_t k, Role role) {
  const auto truth = log.ItemsByUser(role);
  const auto validation = log.ItemsByUser(Role::kValidation);
  std::vector<double> scores(log.num_items);
  std::vector<bool> excluded(log.num_items);
  double total = 0.0;
  std::size_t counted = 0;
  for (UserId u = 0; u < log.num_users; ++u) {
    if (truth[u].empty()) continue;
    const auto urow = users.row(u);
    for (ItemId v = 0; v < log.num_items; ++v) scores[v] = Dot(urow, items.row(v));
    std::fill(excluded.begin(), excluded.end(), false);
    for (ItemId v : log.UserTrainItems(u)) excluded[v] = true;
    if (role == Role::kTest) {
      for (ItemId v : validation[u]) excluded[v] = true;
    }
    const auto top = TopKByScore(scores, excluded, k);
    total += ScoreRanking(top, truth[u], k).recall;
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

PretrainResult RunPretrain(const InteractionLog& log, const GroupingPlan& grouping,
                           const PipelineConfig& config) {
  config.Validate();
  const PropagationGraph graph = PropagationGraph::Build(log, config.propagation_layers);
  const PretrainHyper hyper{config.blocks_per_item, config.lambda, config.weight_decay,
                            config.final_layer_only};
  PretrainTrainer trainer(graph,
                          InitPretrainParams(log.num_users, log.num_items, config.full_dim(),
                                             config.init_std, config.seed),
                          hyper, config.pretrain_lr);
  const BprSampler sampler = BprSampler::ForTrain(log);
  const std::size_t steps_per_epoch =
      (sampler.num_positives() + config.pretrain_batch - 1) / config.pretrain_batch;
  const bool has_validation = log.CountRole(Role::kValidation) > 0;

  PretrainResult result;
  PretrainParams<float> best = trainer.params();
  double best_recall = -1.0;
  std::size_t stale = 0;
  const Rng root = Rng(config.seed).Split(100);
  for (std::size_t epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
    Rng rng = root.Split(epoch);
    double loss = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const auto batch = sampler.Sample(config.pretrain_batch, rng);
      loss += trainer.Step(batch).total;
    }
    result.epoch_loss.push_back(loss / static_cast<double>(std::max<std::size_t>(steps_per_epoch, 1)));
    ++result.epochs_run;
    if (!has_validation) {
      best = trainer.params();
      continue;
    }
    const auto [u, v] =
        graph.Propagate(trainer.params().users, trainer.params().items, config.final_layer_only);
    const double recall = ValidationRecallDot(log, u, v, config.eval_k);
    result.validation_recall.push_back(recall);
    std::ostringstream msg;
    msg << "pretrain epoch " << epoch << " loss " << result.epoch_loss.back() << " val recall@"
        << config.eval_k << " " << recall;
    LogInfo(msg.str());
    if (recall > best_recall) {
      best_recall = recall;
      best = trainer.params();
      stale = 0;
    } else if (++stale >= config.pretrain_patience) {
      break;
    }
  }
  result.layer0 = best;
  auto [users, items] = graph.Propagate(best.users, best.items, config.final_layer_only);
  result.users.rows = std::move(users);
  result.items = BlockGrid::FromTable(items, config.blocks_per_item, grouping.item_groups);
  return result;
}

void SaveCheckpoint(const std::string& path, const BlockGrid& items,
                    const UserEmbeddingTable& users) {
  ByteWriter w;
  w.Magic("PEEL");
  w.U32(1);
  w.U32(static_cast<std::uint32_t>(users.rows.rows()));
  w.U32(static_cast<std::uint32_t>(items.num_items()));
  w.U32(static_cast<std::uint32_t>(items.blocks_per_item()));
  w.U32(static_cast<std::uint32_t>(items.block_dim()));
  w.U32(static_cast<std::uint32_t>(items.num_groups()));
  for (std::size_t g = 0; g < items.num_groups(); ++g) {
    w.U32(static_cast<std::uint32_t>(items.group_items(g).size()));
    for (ItemId v : items.group_items(g)) w.U32(v);
  }
  w.F32s(users.rows.flat());
  for (std::size_t g = 0; g < items.num_groups(); ++g) {
    for (std::size_t n = 0; n < items.blocks_per_item(); ++n) w.F32s(items.block(g, n).flat());
  }
  WriteFileBytes(path, w.bytes());
}

std::pair<BlockGrid, UserEmbeddingTable> LoadCheckpoint(const std::string& path) {
  const auto bytes = ReadFileBytes(path);
  ByteReader r(bytes);
  r.ExpectMagic("PEEL");
  Require(r.U32() == 1, ErrorKind::kFormat, "unsupported checkpoint version");
  const std::size_t num_users = r.U32();
  const std::size_t num_items = r.U32();
  const std::size_t n_blocks = r.U32();
  const std::size_t d = r.U32();
  const std::size_t groups = r.U32();
  std::vector<std::vector<ItemId>> group_items(groups);
  for (auto& items : group_items) {
    items.resize(r.U32());
    for (auto& v : items) v = r.U32();
  }
  BlockGrid grid(n_blocks, d, std::move(group_items), num_items);
  UserEmbeddingTable users{Matrix(num_users, n_blocks * d)};
  r.F32s(users.rows.flat());
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t n = 0; n < n_blocks; ++n) r.F32s(grid.block(g, n).flat());
  }
  Require(r.AtEnd(), ErrorKind::kFormat, "trailing bytes in checkpoint");
  return {std::move(grid), std::move(users)};
}

}  // namespace peel
