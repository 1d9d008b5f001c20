#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "peel/config.hpp"
#include "peel/error.hpp"
#include "peel/ingest.hpp"
#include "peel/matrix.hpp"
#include "peel/optim.hpp"
#include "peel/types.hpp"

namespace peel {

// Normalized user-item bipartite graph over train interactions.
// Edge weight eta(u, v) = 1 / sqrt(deg(u) * deg(v)).
class PropagationGraph {
 public:
  static PropagationGraph Build(const InteractionLog& log, std::size_t layers);
  static PropagationGraph FromEdges(std::size_t num_users, std::size_t num_items,
                                    const std::vector<std::pair<UserId, ItemId>>& edges,
                                    std::size_t layers);

  std::size_t num_users() const noexcept { return user_offsets_.size() - 1; }
  std::size_t num_items() const noexcept { return item_offsets_.size() - 1; }
  std::size_t layers() const noexcept { return layers_; }
  std::size_t user_degree(UserId u) const { return user_offsets_[u + 1] - user_offsets_[u]; }
  std::size_t item_degree(ItemId v) const { return item_offsets_[v + 1] - item_offsets_[v]; }
  // 0 when (u, v) is not an edge.
  double eta_from_user(UserId u, ItemId v) const;
  double eta_from_item(ItemId v, UserId u) const;

  // One layer: items gather from users and users gather from items, both from
  // the previous layer. Isolated nodes copy their previous embedding.
  template <class T>
  void Step(const MatrixT<T>& users, const MatrixT<T>& items, MatrixT<T>& users_out,
            MatrixT<T>& items_out) const;

  // Layer-L readout (or mean over layers 0..L when final_only is false).
  template <class T>
  std::pair<MatrixT<T>, MatrixT<T>> Propagate(const MatrixT<T>& users, const MatrixT<T>& items,
                                              bool final_only = true) const;

  // Gradient of the readout w.r.t. layer-0 tables. The propagation operator
  // is symmetric, so this reuses Step.
  template <class T>
  std::pair<MatrixT<T>, MatrixT<T>> Backward(const MatrixT<T>& user_grad,
                                             const MatrixT<T>& item_grad,
                                             bool final_only = true) const;

 private:
  std::size_t layers_ = 0;
  std::vector<std::size_t> user_offsets_{0}, item_offsets_{0};
  std::vector<ItemId> user_neighbors_;
  std::vector<UserId> item_neighbors_;
  std::vector<double> user_eta_, item_eta_;
};

// sum_{n1<n2} ||E^{n1} - E^{n2}||_F^2 over a |V| x (N*d) table, using the
// per-row identity N * sum_n |e_n|^2 - |sum_n e_n|^2.
template <class T>
double DiversityRegularizer(const MatrixT<T>& items, std::size_t blocks_per_item,
                            MatrixT<T>* grad = nullptr, double grad_scale = 1.0);
double DiversityRegularizer(const BlockGrid& grid);

// -sum ln sigmoid(u.v_pos - u.v_neg) - lambda * diversity, on final-layer
// tables with dot-product scores.
double PretrainLoss(std::span<const BprTriple> batch, const Matrix& users, const BlockGrid& items,
                    double lambda);

template <class T>
struct PretrainParams {
  MatrixT<T> users;  // layer 0, |U| x D
  MatrixT<T> items;  // layer 0, |V| x D

  template <class U>
  PretrainParams<U> cast() const {
    return {users.template cast<U>(), items.template cast<U>()};
  }
};

struct PretrainTerms {
  double bpr = 0.0;
  double diversity = 0.0;  // unscaled regularizer value
  double decay = 0.0;      // unscaled sum of squared layer-0 weights
  double total = 0.0;      // bpr - lambda*diversity + weight_decay*decay
};

struct PretrainHyper {
  std::size_t blocks_per_item = 1;
  double lambda = 0.0;
  double weight_decay = 0.0;
  bool final_layer_only = true;
};

// Full pretraining objective through propagation. Fills `grad` (same shapes
// as params) with the analytic gradient when non-null.
template <class T>
PretrainTerms PretrainObjective(const PropagationGraph& graph, const PretrainParams<T>& params,
                                std::span<const BprTriple> batch, const PretrainHyper& hyper,
                                PretrainParams<T>* grad = nullptr);

// One Adam step per call on the layer-0 tables. Non-finite loss or gradient
// throws Error(kNumerical) and leaves the parameters untouched.
class PretrainTrainer {
 public:
  PretrainTrainer(const PropagationGraph& graph, PretrainParams<float> init, PretrainHyper hyper,
                  double learning_rate);

  PretrainTerms Step(std::span<const BprTriple> batch);
  const PretrainParams<float>& params() const noexcept { return params_; }

 private:
  const PropagationGraph* graph_;
  PretrainParams<float> params_;
  PretrainHyper hyper_;
  Adam adam_;
};

struct PretrainResult {
  BlockGrid items;            // final-layer item table in block layout
  UserEmbeddingTable users;   // final-layer user table
  PretrainParams<float> layer0;
  std::size_t epochs_run = 0;
  std::vector<double> validation_recall;
  std::vector<double> epoch_loss;
};

PretrainParams<float> InitPretrainParams(std::size_t num_users, std::size_t num_items,
                                         std::size_t full_dim, double stddev, std::uint64_t seed);

// Mean Recall@k over users with validation items, dot-product scores on
// final-layer tables, train items excluded from candidates.
double ValidationRecallDot(const InteractionLog& log, const Matrix& users, const Matrix& items,
                           std::size_t k, Role role = Role::kValidation);

PretrainResult RunPretrain(const InteractionLog& log, const GroupingPlan& grouping,
                           const PipelineConfig& config);

// Checkpoint: magic "PEEL", u32 version, u32 |U|, |V|, N, d, G_v#, then per
// group u32 size and item ids, then the user table and blocks (group asc,
// block asc), all little-endian float32 row-major.
void SaveCheckpoint(const std::string& path, const BlockGrid& items,
                    const UserEmbeddingTable& users);
std::pair<BlockGrid, UserEmbeddingTable> LoadCheckpoint(const std::string& path);

// ---------------------------------------------------------------------------

template <class T>
void PropagationGraph::Step(const MatrixT<T>& users, const MatrixT<T>& items,
                            MatrixT<T>& users_out, MatrixT<T>& items_out) const {
  const std::size_t dim = users.cols();
  users_out = MatrixT<T>(users.rows(), dim);
  items_out = MatrixT<T>(items.rows(), dim);
  for (std::size_t u = 0; u < num_users(); ++u) {
    auto out = users_out.row(u);
    if (user_offsets_[u] == user_offsets_[u + 1]) {
      std::copy(users.row(u).begin(), users.row(u).end(), out.begin());
      continue;
    }
    for (std::size_t e = user_offsets_[u]; e < user_offsets_[u + 1]; ++e) {
      const T w = static_cast<T>(user_eta_[e]);
      const auto src = items.row(user_neighbors_[e]);
      for (std::size_t c = 0; c < dim; ++c) out[c] += w * src[c];
    }
  }
  for (std::size_t v = 0; v < num_items(); ++v) {
    auto out = items_out.row(v);
    if (item_offsets_[v] == item_offsets_[v + 1]) {
      std::copy(items.row(v).begin(), items.row(v).end(), out.begin());
      continue;
    }
    for (std::size_t e = item_offsets_[v]; e < item_offsets_[v + 1]; ++e) {
      const T w = static_cast<T>(item_eta_[e]);
      const auto src = users.row(item_neighbors_[e]);
      for (std::size_t c = 0; c < dim; ++c) out[c] += w * src[c];
    }
  }
}

template <class T>
std::pair<MatrixT<T>, MatrixT<T>> PropagationGraph::Propagate(const MatrixT<T>& users,
                                                              const MatrixT<T>& items,
                                                              bool final_only) const {
  MatrixT<T> u = users, v = items, u_next, v_next;
  MatrixT<T> u_sum = users, v_sum = items;
  for (std::size_t l = 0; l < layers_; ++l) {
    Step(u, v, u_next, v_next);
    u = std::move(u_next);
    v = std::move(v_next);
    if (!final_only) {
      for (std::size_t i = 0; i < u.size(); ++i) u_sum.flat()[i] += u.flat()[i];
      for (std::size_t i = 0; i < v.size(); ++i) v_sum.flat()[i] += v.flat()[i];
    }
  }
  if (final_only) return {std::move(u), std::move(v)};
  const T scale = T(1) / static_cast<T>(layers_ + 1);
  for (auto& x : u_sum.flat()) x *= scale;
  for (auto& x : v_sum.flat()) x *= scale;
  return {std::move(u_sum), std::move(v_sum)};
}

template <class T>
std::pair<MatrixT<T>, MatrixT<T>> PropagationGraph::Backward(const MatrixT<T>& user_grad,
                                                             const MatrixT<T>& item_grad,
                                                             bool final_only) const {
  MatrixT<T> u = user_grad, v = item_grad, u_next, v_next;
  for (std::size_t l = 0; l < layers_; ++l) {
    Step(u, v, u_next, v_next);
    u = std::move(u_next);
    v = std::move(v_next);
    if (!final_only) {
      // Horner form of sum_l P^l g.
      for (std::size_t i = 0; i < u.size(); ++i) u.flat()[i] += user_grad.flat()[i];
      for (std::size_t i = 0; i < v.size(); ++i) v.flat()[i] += item_grad.flat()[i];
    }
  }
  if (!final_only) {
    const T scale = T(1) / static_cast<T>(layers_ + 1);
    for (auto& x : u.flat()) x *= scale;
    for (auto& x : v.flat()) x *= scale;
  }
  return {std::move(u), std::move(v)};
}

template <class T>
double DiversityRegularizer(const MatrixT<T>& items, std::size_t blocks_per_item,
                            MatrixT<T>* grad, double grad_scale) {
  const std::size_t n_blocks = blocks_per_item;
  const std::size_t d = items.cols() / n_blocks;
  double total = 0.0;
  std::vector<double> block_sum(d);
  for (std::size_t r = 0; r < items.rows(); ++r) {
    const auto row = items.row(r);
    std::fill(block_sum.begin(), block_sum.end(), 0.0);
    double sq = 0.0;
    for (std::size_t n = 0; n < n_blocks; ++n) {
      for (std::size_t c = 0; c < d; ++c) {
        const double x = static_cast<double>(row[n * d + c]);
        block_sum[c] += x;
        sq += x * x;
      }
    }
    double sum_sq = 0.0;
    for (double s : block_sum) sum_sq += s * s;
    total += static_cast<double>(n_blocks) * sq - sum_sq;
    if (grad != nullptr) {
      auto g = grad->row(r);
      for (std::size_t n = 0; n < n_blocks; ++n) {
        for (std::size_t c = 0; c < d; ++c) {
          const double x = static_cast<double>(row[n * d + c]);
          g[n * d + c] += static_cast<T>(
              grad_scale * 2.0 * (static_cast<double>(n_blocks) * x - block_sum[c]));
        }
      }
    }
  }
  return total;
}

namespace detail {
inline double LogSigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}
inline double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace detail

template <class T>
PretrainTerms PretrainObjective(const PropagationGraph& graph, const PretrainParams<T>& params,
                                std::span<const BprTriple> batch, const PretrainHyper& hyper,
                                PretrainParams<T>* grad) {
  const auto [users, items] =
      graph.Propagate(params.users, params.items, hyper.final_layer_only);
  const std::size_t dim = users.cols();
  MatrixT<T> g_users, g_items;
  if (grad != nullptr) {
    g_users = MatrixT<T>(users.rows(), dim);
    g_items = MatrixT<T>(items.rows(), dim);
  }
  PretrainTerms terms;
  for (const BprTriple& t : batch) {
    const auto u = users.row(t.user);
    const auto vp = items.row(t.positive);
    const auto vn = items.row(t.negative);
    double diff = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      diff += static_cast<double>(u[c]) * (static_cast<double>(vp[c]) - static_cast<double>(vn[c]));
    }
    terms.bpr -= detail::LogSigmoid(diff);
    if (grad != nullptr) {
      const T coeff = static_cast<T>(-detail::Sigmoid(-diff));
      auto gu = g_users.row(t.user);
      auto gp = g_items.row(t.positive);
      auto gn = g_items.row(t.negative);
      for (std::size_t c = 0; c < dim; ++c) {
        gu[c] += coeff * (vp[c] - vn[c]);
        gp[c] += coeff * u[c];
        gn[c] -= coeff * u[c];
      }
    }
  }
  terms.diversity = DiversityRegularizer(items, hyper.blocks_per_item,
                                         grad != nullptr ? &g_items : nullptr, -hyper.lambda);
  for (const T x : params.users.flat()) terms.decay += static_cast<double>(x) * x;
  for (const T x : params.items.flat()) terms.decay += static_cast<double>(x) * x;
  terms.total = terms.bpr - hyper.lambda * terms.diversity + hyper.weight_decay * terms.decay;
  if (grad != nullptr) {
    auto [gu0, gv0] = graph.Backward(g_users, g_items, hyper.final_layer_only);
    const T wd2 = static_cast<T>(2.0 * hyper.weight_decay);
    for (std::size_t i = 0; i < gu0.size(); ++i) gu0.flat()[i] += wd2 * params.users.flat()[i];
    for (std::size_t i = 0; i < gv0.size(); ++i) gv0.flat()[i] += wd2 * params.items.flat()[i];
    grad->users = std::move(gu0);
    grad->items = std::move(gv0);
  }
  return terms;
}

}  // namespace peel
