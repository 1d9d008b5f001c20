#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "peel/config.hpp"
#include "peel/error.hpp"
#include "peel/ingest.hpp"
#include "peel/matrix.hpp"
#include "peel/mlp.hpp"
#include "peel/pretrain.hpp"
#include "peel/types.hpp"

namespace peel {

enum class NormMode { kTrain, kInference };

// Per-block, per-feature batch-norm statistics (N x d each).
struct NormStats {
  Matrix mean;
  Matrix var;
  double epsilon = 1e-5;
  double momentum = 0.9;

  static NormStats Identity(std::size_t blocks_per_item, std::size_t block_dim, double epsilon,
                            double momentum) {
    return {Matrix(blocks_per_item, block_dim, 0.0f), Matrix(blocks_per_item, block_dim, 1.0f),
            epsilon, momentum};
  }
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

// tanh((e - mu) / sqrt(var + eps)) per block over an m x (N*d) batch. Train
// mode uses batch statistics and folds them into the running stats with the
// configured momentum; a single-row batch falls back to running stats.
Matrix NormalizeBlocks(const Matrix& rows, NormStats& stats, NormMode mode);

// Constant, per-group description of the fine-tuning problem.
struct GroupContext {
  std::size_t blocks_per_item = 0;
  std::size_t block_dim = 0;
  std::size_t item_groups = 0;
  std::vector<std::uint32_t> item_group_of;  // |V|
  std::vector<UserId> users;                 // local row -> global user id
  std::vector<std::int64_t> local_user;      // global user id -> local row or -1
  std::vector<double> popularity;            // p_1..p_{G_v#}
  double lambda = 0.0;
  double weight_decay = 0.0;
  double epsilon = 1e-5;

  std::size_t full_dim() const { return blocks_per_item * block_dim; }
  std::size_t alpha_size() const { return blocks_per_item * item_groups; }
  // alpha index of (block n, item group g): block-major flattening.
  std::size_t alpha_index(std::size_t n, std::size_t g) const { return item_groups * n + g; }
  std::size_t LocalRow(UserId user) const;
};

// Trainable fine-tuning weights W: the group's item table (|V| x D, block
// layout per row), the group's user rows, and the MLP scorer.
template <class T>
struct FinetuneWeights {
  MatrixT<T> items;
  MatrixT<T> users;
  Mlp<T> scorer;

  FinetuneWeights ZerosLike() const {
    return {MatrixT<T>(items.rows(), items.cols()), MatrixT<T>(users.rows(), users.cols()),
            scorer.ZerosLike()};
  }
  template <class U>
  FinetuneWeights<U> cast() const {
    return {items.template cast<U>(), users.template cast<U>(), scorer.template cast<U>()};
  }
  std::vector<std::span<T>> tensors() {
    std::vector<std::span<T>> out{items.flat(), users.flat()};
    scorer.AppendTensors(out);
    return out;
  }
  std::vector<std::span<const T>> tensors() const {
    std::vector<std::span<const T>> out{items.flat(), users.flat()};
    scorer.AppendTensors(out);
    return out;
  }
  friend bool operator==(const FinetuneWeights&, const FinetuneWeights&) = default;
};

template <class T>
std::vector<std::span<T>> Tensors(Mlp<T>& net) {
  std::vector<std::span<T>> out;
  net.AppendTensors(out);
  return out;
}
template <class T>
std::vector<std::span<const T>> Tensors(const Mlp<T>& net) {
  std::vector<std::span<const T>> out;
  net.AppendTensors(out);
  return out;
}

// a += scale * b over matching tensor lists.
template <class T>
void Axpy(const std::vector<std::span<T>>& a, double scale, const std::vector<std::span<const T>>& b) {
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].size(); ++i) a[k][i] += static_cast<T>(scale * b[k][i]);
  }
}
template <class T>
double SquaredNorm(const std::vector<std::span<const T>>& a) {
  double acc = 0.0;
  for (const auto& t : a) {
    for (const T x : t) acc += static_cast<double>(x) * static_cast<double>(x);
  }
  return acc;
}

template <class T>
struct ControllerTape {
  MlpTape<T> mlp;
  std::vector<T> alpha;
};

// h0 = [p_1..p_{G_v#}, loss_value] -> tanh layers -> softmax over N*G_v#.
template <class T>
std::vector<T> ControllerForward(const Mlp<T>& net, std::span<const double> popularity,
                                 double loss_value, ControllerTape<T>* tape = nullptr);
// Accumulates into `grad` the controller gradient given d(loss)/d(alpha).
template <class T>
void ControllerBackward(const Mlp<T>& net, const ControllerTape<T>& tape,
                        std::span<const T> d_alpha, Mlp<T>& grad);

struct ScorerPass {
  NormMode mode = NormMode::kTrain;
  NormStats* stats = nullptr;  // running stats: read in inference mode
  bool update_stats = false;   // train mode only
};

// Sum over the batch of -ln sigmoid(y_pos - y_neg), y from the MLP scorer on
// [u, alpha-weighted normalized blocks]. Gradients are accumulated when the
// output pointers are non-null.
template <class T>
double GroupBprLoss(const GroupContext& ctx, const FinetuneWeights<T>& w, std::span<const T> alpha,
                    std::span<const BprTriple> batch, const ScorerPass& pass,
                    FinetuneWeights<T>* grad_w = nullptr, std::vector<T>* grad_alpha = nullptr);

struct GroupLossTerms {
  double bpr = 0.0;
  double diversity = 0.0;
  double decay = 0.0;
  double total = 0.0;  // bpr - lambda*diversity + weight_decay*decay
};

// Training objective: BPR over the scorer minus the diversity regularizer on
// the group's item table, plus weight decay on item and user rows.
template <class T>
GroupLossTerms GroupTrainLoss(const GroupContext& ctx, const FinetuneWeights<T>& w,
                              std::span<const T> alpha, std::span<const BprTriple> batch,
                              const ScorerPass& pass, FinetuneWeights<T>* grad_w = nullptr,
                              std::vector<T>* grad_alpha = nullptr);

// Single prediction in (0,1) with inference-mode normalization.
double ScoreInteraction(const GroupContext& ctx, const FinetuneWeights<float>& w,
                        const NormStats& stats, UserId user, ItemId item,
                        std::span<const float> alpha);

template <class T>
struct ControllerGradient {
  double val_loss = 0.0;  // L_val at the lookahead weights
  Mlp<T> grad;
};

// Gradient of V -> L_val(W - xi * grad_W L_train(W, V), V). The mixed
// second-order term uses a central difference of grad_V L_train at
// W +/- r * grad_W' L_val with r = 0.01 / |grad_W' L_val|. xi == 0 skips it,
// reducing exactly to the first-order gradient.
template <class T>
ControllerGradient<T> ControllerHypergradient(const GroupContext& ctx, const FinetuneWeights<T>& w,
                                              const Mlp<T>& controller, NormStats& stats,
                                              double loss_input,
                                              std::span<const BprTriple> train_batch,
                                              std::span<const BprTriple> val_batch, double xi);

// grad_V L_val(W, V).
template <class T>
ControllerGradient<T> FirstOrderControllerGradient(const GroupContext& ctx,
                                                   const FinetuneWeights<T>& w,
                                                   const Mlp<T>& controller, NormStats& stats,
                                                   double loss_input,
                                                   std::span<const BprTriple> val_batch);

struct GroupModel {
  std::uint32_t group_index = 0;
  GroupContext context;
  std::vector<std::vector<ItemId>> item_groups;
  FinetuneWeights<float> weights;
  Mlp<float> controller;
  NormStats norm;
  std::vector<float> alpha;  // frozen, alpha_index(n, g) layout
  double last_loss = 0.0;    // controller loss input at freeze

  BlockGrid block_grid() const;
  std::span<const float> UserRow(UserId user) const;
  std::size_t alpha_size() const { return context.alpha_size(); }
  float alpha_at(std::size_t n, std::size_t g) const { return alpha[context.alpha_index(n, g)]; }
};

// p_g = (group train interactions on item group g) / (group train interactions).
std::vector<double> GroupPopularityVector(const InteractionLog& log,
                                          const std::vector<std::uint32_t>& item_group_of,
                                          std::size_t item_groups,
                                          const std::vector<UserId>& users);

GroupModel InitGroupModel(const InteractionLog& log, const BlockGrid& pretrained_items,
                          const UserEmbeddingTable& pretrained_users,
                          const std::vector<UserId>& users, std::uint32_t group_index,
                          const PipelineConfig& config);

struct FinetuneTrace {
  std::vector<double> epoch_train_loss;   // mean per-triple BPR of W steps
  std::vector<double> epoch_val_loss;     // mean per-triple validation BPR
  std::vector<Role> controller_batch_roles;
  std::vector<Role> weight_batch_roles;
  std::size_t controller_updates = 0;
  std::size_t weight_updates = 0;
  std::size_t epochs_run = 0;
};

// Algorithm-1 loop: per iteration, a controller step on a validation batch
// through the one-step lookahead, then a weight step on a training batch.
// alpha is frozen as the mean controller output over the last epoch.
GroupModel OptimizeGroup(GroupModel model, const InteractionLog& log, const PipelineConfig& config,
                         FinetuneTrace* trace = nullptr);

// Fine-tunes every user group on a worker pool of `config.threads`.
std::vector<GroupModel> OptimizeAllGroups(const InteractionLog& log, const BlockGrid& items,
                                          const UserEmbeddingTable& users,
                                          const std::vector<std::vector<UserId>>& user_groups,
                                          const PipelineConfig& config,
                                          const std::vector<std::uint32_t>& only = {});

// "PEGM" group model file: header, frozen alpha (N*G_v# float32), running
// norm stats, item grid, user rows, then scorer/controller weights.
void SaveGroupModel(const std::string& path, const GroupModel& model);
GroupModel LoadGroupModel(const std::string& path);

}  // namespace peel

#include "peel/finetune_impl.hpp"
