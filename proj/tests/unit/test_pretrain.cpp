#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "peel/ingest.hpp"
#include "peel/pretrain.hpp"
#include "peel/synthetic.hpp"
#include "support.hpp"

using namespace peel;

namespace {

using Edges = std::vector<std::pair<UserId, ItemId>>;

Edges RandomEdges(std::size_t users, std::size_t items, double p, Rng& rng) {
  Edges edges;
  for (UserId u = 0; u < users; ++u) {
    for (ItemId v = 0; v < items; ++v) {
      if (rng.Uniform01() < p) edges.emplace_back(u, v);
    }
  }
  return edges;
}

// Dense (|U|+|V|)^2 propagation operator. Isolated nodes keep a unit
// self-loop so they pass through unchanged.
MatrixT<double> DenseOperator(std::size_t users, std::size_t items, const Edges& edges) {
  const std::size_t n = users + items;
  std::vector<double> deg(n, 0.0);
  for (const auto& [u, v] : edges) {
    deg[u] += 1;
    deg[users + v] += 1;
  }
  MatrixT<double> p(n, n);
  for (const auto& [u, v] : edges) {
    const double w = 1.0 / std::sqrt(deg[u] * deg[users + v]);
    p(u, users + v) = w;
    p(users + v, u) = w;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (deg[i] == 0) p(i, i) = 1.0;
  }
  return p;
}

MatrixT<double> MatMul(const MatrixT<double>& a, const MatrixT<double>& b) {
  MatrixT<double> c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += a(i, k) * b(k, j);
    }
  }
  return c;
}

// sum over pairs n1 < n2 of squared Frobenius distance, entry by entry.
double PairwiseDiversity(const MatrixT<double>& items, std::size_t blocks) {
  const std::size_t d = items.cols() / blocks;
  double total = 0.0;
  for (std::size_t a = 0; a < blocks; ++a) {
    for (std::size_t b = a + 1; b < blocks; ++b) {
      for (std::size_t r = 0; r < items.rows(); ++r) {
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = items(r, a * d + k) - items(r, b * d + k);
          total += diff * diff;
        }
      }
    }
  }
  return total;
}

std::vector<double> Flat(std::span<const double> s) { return {s.begin(), s.end()}; }

std::vector<BprTriple> RandomTriples(const Edges& edges, std::size_t items, std::size_t count,
                                     Rng& rng) {
  std::vector<BprTriple> out;
  for (std::size_t k = 0; k < count; ++k) {
    const auto [u, v] = edges[rng.UniformIndex(edges.size())];
    out.push_back({u, v, static_cast<ItemId>(rng.UniformIndex(items))});
  }
  return out;
}

}  // namespace

TEST_CASE("edge weight from degrees") {
  // User 0 has four items, item 0 has one user.
  const auto graph =
      PropagationGraph::FromEdges(2, 5, {{0, 0}, {0, 1}, {0, 2}, {0, 3}, {1, 1}, {1, 4}}, 1);
  CHECK(graph.eta_from_user(0, 0) == doctest::Approx(0.5));
  CHECK(graph.eta_from_item(0, 0) == doctest::Approx(0.5));
  CHECK(graph.eta_from_user(1, 0) == 0.0);
}

TEST_CASE("edge weights are symmetric") {
  Rng rng(5);
  const Edges edges = RandomEdges(8, 9, 0.4, rng);
  const auto graph = PropagationGraph::FromEdges(8, 9, edges, 1);
  for (const auto& [u, v] : edges) CHECK(graph.eta_from_user(u, v) == graph.eta_from_item(v, u));
}

TEST_CASE("propagation matches a dense matrix-power oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Edges edges = RandomEdges(5, 5, 0.45, rng);
    const auto graph = PropagationGraph::FromEdges(5, 5, edges, 2);
    MatrixT<double> users(5, 3), items(5, 3);
    test::FillNormal(users, rng, 1.0);
    test::FillNormal(items, rng, 1.0);

    MatrixT<double> stacked(10, 3);
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        stacked(r, c) = users(r, c);
        stacked(5 + r, c) = items(r, c);
      }
    }
    const MatrixT<double> p = DenseOperator(5, 5, edges);
    const MatrixT<double> expected = MatMul(p, MatMul(p, stacked));
    const auto [pu, pv] = graph.Propagate(users, items);
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(pu(r, c) == doctest::Approx(expected(r, c)).epsilon(1e-6));
        CHECK(pv(r, c) == doctest::Approx(expected(5 + r, c)).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("one-edge graph swaps the two embeddings") {
  const auto graph = PropagationGraph::FromEdges(1, 1, {{0, 0}}, 1);
  Matrix u(1, 2), v(1, 2);
  u(0, 0) = 1, u(0, 1) = 2;
  v(0, 0) = 3, v(0, 1) = 4;
  const auto [pu, pv] = graph.Propagate(u, v);
  CHECK(pu == v);
  CHECK(pv == u);
}

TEST_CASE("isolated nodes pass through unchanged") {
  const auto graph = PropagationGraph::FromEdges(2, 2, {{0, 0}}, 2);
  Matrix u(2, 2, 1.0f), v(2, 2, 2.0f);
  u(1, 0) = 7.0f;
  v(1, 1) = -3.0f;
  const auto [pu, pv] = graph.Propagate(u, v);
  CHECK(pu(1, 0) == 7.0f);
  CHECK(pv(1, 1) == -3.0f);
}

TEST_CASE("equal scores give ln 2 per triple") {
  const BlockGrid items = BlockGrid::FromTable(Matrix(3, 4, 0.5f), 2, {{0, 1, 2}});
  const Matrix users(2, 4, 1.0f);
  const std::vector<BprTriple> batch = {{0, 0, 1}, {1, 2, 0}, {0, 1, 2}};
  CHECK(PretrainLoss(batch, users, items, 0.0) == doctest::Approx(3 * std::log(2.0)));
}

TEST_CASE("identical block collections contribute no diversity") {
  Matrix table(4, 6);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t n = 0; n < 3; ++n) {
      table(r, n * 2) = static_cast<float>(r);
      table(r, n * 2 + 1) = -1.0f;
    }
  }
  CHECK(DiversityRegularizer(table, 3) == 0.0);
}

TEST_CASE("diversity of an all-ones block against an all-zeros block") {
  Matrix table(3, 4, 0.0f);
  for (std::size_t r = 0; r < 3; ++r) table(r, 0) = table(r, 1) = 1.0f;
  const BlockGrid grid = BlockGrid::FromTable(table, 2, {{0, 1, 2}});
  CHECK(DiversityRegularizer(grid) == doctest::Approx(6.0));
  // With lambda = 1 the term enters the loss with a minus sign.
  CHECK(PretrainLoss({}, Matrix(1, 4), grid, 1.0) == doctest::Approx(-6.0));
  CHECK(PairwiseDiversity(table.cast<double>(), 2) == doctest::Approx(6.0));
}

TEST_CASE("diversity identity matches the pairwise sum") {
  Rng rng(12);
  for (std::size_t blocks : {2u, 3u, 5u}) {
    MatrixT<double> table(7, blocks * 3);
    test::FillNormal(table, rng, 1.0);
    CHECK(DiversityRegularizer(table, blocks) ==
          doctest::Approx(PairwiseDiversity(table, blocks)).epsilon(1e-12));
  }
}

TEST_CASE("pretrain gradients match central differences") {
  struct Shape {
    std::size_t users, items, layers;
    bool final_only;
  };
  const Shape shapes[] = {{3, 4, 1, true}, {5, 8, 2, true}, {5, 8, 2, false}, {4, 6, 0, true}};
  Rng rng(99);
  for (const Shape& s : shapes) {
    CAPTURE(s.users);
    CAPTURE(s.layers);
    Edges edges = RandomEdges(s.users, s.items, 0.5, rng);
    if (edges.empty()) edges.emplace_back(0, 0);
    const auto graph = PropagationGraph::FromEdges(s.users, s.items, edges, s.layers);
    PretrainParams<double> params{MatrixT<double>(s.users, 4), MatrixT<double>(s.items, 4)};
    test::FillNormal(params.users, rng, 0.5);
    test::FillNormal(params.items, rng, 0.5);
    const auto batch = RandomTriples(edges, s.items, 6, rng);
    const PretrainHyper hyper{2, 0.05, 0.01, s.final_only};

    PretrainParams<double> grad;
    PretrainObjective(graph, params, batch, hyper, &grad);
    auto f = [&] { return PretrainObjective(graph, params, batch, hyper).total; };
    const auto fd_users = test::CentralDifference(params.users.flat(), f);
    const auto fd_items = test::CentralDifference(params.items.flat(), f);
    CHECK(test::RelativeError(Flat(grad.users.flat()), fd_users) < 1e-4);
    CHECK(test::RelativeError(Flat(grad.items.flat()), fd_items) < 1e-4);
  }
}

TEST_CASE("one step raises the positive score over the negative") {
  const Edges edges = {{0, 0}, {0, 1}, {1, 1}, {1, 2}};
  const auto graph = PropagationGraph::FromEdges(2, 3, edges, 1);
  const auto init = InitPretrainParams(2, 3, 4, 0.1, 8);
  const std::vector<BprTriple> batch = {{0, 0, 2}};
  auto margin = [&](const PretrainParams<float>& p) {
    const auto [u, v] = graph.Propagate(p.users, p.items);
    return Dot(u.row(0), v.row(0)) - Dot(u.row(0), v.row(2));
  };
  PretrainTrainer trainer(graph, init, {2, 0.0, 0.0, true}, 1e-3);
  const double before = margin(trainer.params());
  const std::uint64_t steps = OptimizerStepCount();
  trainer.Step(batch);
  CHECK(OptimizerStepCount() == steps + 1);
  CHECK(margin(trainer.params()) > before);
}

TEST_CASE("non-finite loss aborts without touching parameters") {
  const auto graph = PropagationGraph::FromEdges(1, 2, {{0, 0}}, 1);
  auto init = InitPretrainParams(1, 2, 2, 0.1, 1);
  init.items(1, 0) = std::numeric_limits<float>::infinity();
  PretrainTrainer trainer(graph, init, {1, 0.0, 0.0, true}, 1e-3);
  try {
    trainer.Step(std::vector<BprTriple>{{0, 0, 1}});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumerical);
  }
  CHECK(trainer.params().users == init.users);
}

namespace {

struct Planted {
  InteractionLog log;
  GroupingPlan grouping;
  PipelineConfig config;
};

Planted PlantedFixture() {
  Planted p;
  p.config.block_dim = 4;
  p.config.blocks_per_item = 8;
  p.config.item_groups = 4;
  p.config.pretrain_lr = 1e-2;
  p.config.pretrain_epochs = 30;
  p.config.pretrain_batch = 256;
  p.config.eval_k = 10;
  p.config.seed = 1;
  p.log = SplitRoles(FilterInteractionsText(MakePlantedInteractions({}).text, 10),
                     p.config.split_ratios, p.config.seed);
  p.grouping = SegmentItemsByPopularity(p.log, p.config.item_groups);
  return p;
}

}  // namespace

TEST_CASE("zero epochs return the initialization") {
  Planted p = PlantedFixture();
  p.config.pretrain_epochs = 0;
  const PretrainResult r = RunPretrain(p.log, p.grouping, p.config);
  const auto init = InitPretrainParams(p.log.num_users, p.log.num_items, p.config.full_dim(),
                                       p.config.init_std, p.config.seed);
  CHECK(r.epochs_run == 0);
  CHECK(r.layer0.users == init.users);
  CHECK(r.layer0.items == init.items);
}

TEST_CASE("planted communities are learned and training is deterministic") {
  Planted p = PlantedFixture();
  const PretrainResult a = RunPretrain(p.log, p.grouping, p.config);
  const double baseline = 10.0 / static_cast<double>(p.log.num_items);
  const double best = *std::max_element(a.validation_recall.begin(), a.validation_recall.end());
  CAPTURE(best);
  CHECK(best >= 5.0 * baseline);

  p.config.pretrain_epochs = 3;
  const PretrainResult b = RunPretrain(p.log, p.grouping, p.config);
  const PretrainResult c = RunPretrain(p.log, p.grouping, p.config);
  CHECK(b.users.rows == c.users.rows);
  CHECK(b.items == c.items);
}

TEST_CASE("checkpoints round-trip") {
  Rng rng(4);
  Matrix table(5, 6);
  test::FillNormal(table, rng, 1.0);
  const BlockGrid grid = BlockGrid::FromTable(table, 3, {{4, 0}, {1, 2, 3}});
  UserEmbeddingTable users{Matrix(3, 6)};
  test::FillNormal(users.rows, rng, 1.0);
  const auto path = (test::ScratchDir("checkpoint") / "c.peel").string();
  SaveCheckpoint(path, grid, users);
  const auto [g2, u2] = LoadCheckpoint(path);
  CHECK(g2 == grid);
  CHECK(u2.rows == users.rows);
}

namespace {

double MeanPairwiseDistance(const Matrix& items, std::size_t blocks) {
  const double pairs = static_cast<double>(blocks * (blocks - 1) / 2);
  return DiversityRegularizer(items, blocks) / pairs;
}

}  // namespace

TEST_CASE("the regularizer spreads nearly identical blocks apart") {
  const Planted p = PlantedFixture();
  const std::size_t n = p.config.blocks_per_item, d = p.config.block_dim;
  const auto graph = PropagationGraph::Build(p.log, p.config.propagation_layers);
  // Every block of an item starts as the same row plus tiny noise.
  PretrainParams<float> init = InitPretrainParams(p.log.num_users, p.log.num_items, n * d, 0.1, 3);
  Rng noise(4);
  for (std::size_t v = 0; v < p.log.num_items; ++v) {
    for (std::size_t b = 1; b < n; ++b) {
      for (std::size_t k = 0; k < d; ++k) {
        init.items(v, b * d + k) = init.items(v, k) + static_cast<float>(noise.Normal(0.0, 1e-4));
      }
    }
  }
  auto final_items = [&](const PretrainParams<float>& params) {
    return graph.Propagate(params.users, params.items).second;
  };
  const double before = MeanPairwiseDistance(final_items(init), n);

  const BprSampler sampler = BprSampler::ForTrain(p.log);
  auto one_epoch = [&](double lambda) {
    PretrainTrainer trainer(graph, init, {n, lambda, 0.0, true}, 1e-2);
    Rng rng(9);
    for (std::size_t s = 0; s * 256 < sampler.num_positives(); ++s) trainer.Step(sampler.Sample(256, rng));
    return MeanPairwiseDistance(final_items(trainer.params()), n);
  };
  const double control = one_epoch(0.0);
  const double spread = one_epoch(0.05);
  CAPTURE(before);
  CAPTURE(control);
  CAPTURE(spread);
  CHECK(spread > before);
  CHECK(spread > control);
}

TEST_CASE("block diversity does not fall as lambda grows") {
  Planted p = PlantedFixture();
  p.config.pretrain_epochs = 10;
  std::vector<double> distances;
  for (double lambda : {0.0, 1e-4, 1e-2}) {
    p.config.lambda = lambda;
    const PretrainResult r = RunPretrain(p.log, p.grouping, p.config);
    distances.push_back(MeanPairwiseDistance(r.items.ToTable(), p.config.blocks_per_item));
  }
  CAPTURE(distances[0]);
  CAPTURE(distances[1]);
  CAPTURE(distances[2]);
  CHECK(distances[1] >= distances[0]);
  CHECK(distances[2] >= distances[1]);
}
