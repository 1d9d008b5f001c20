#include "peel/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "peel/binary_io.hpp"
#include "peel/log.hpp"
#include "peel/optim.hpp"
#include "peel/rng.hpp"

namespace peel {
namespace {

bool AllFinite(const std::vector<std::span<const float>>& tensors) {
  for (const auto& t : tensors) {
    for (float x : t) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

void WriteMlp(ByteWriter& w, const Mlp<float>& net) {
  w.U32(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& layer : net.layers()) {
    w.Mat(layer.weight);
    w.F32s(layer.bias);
  }
}

Mlp<float> ReadMlp(ByteReader& r) {
  Mlp<float> net;
  const std::uint32_t count = r.U32();
  for (std::uint32_t l = 0; l < count; ++l) {
    DenseLayer<float> layer;
    layer.weight = r.Mat();
    layer.bias.resize(layer.weight.rows());
    r.F32s(layer.bias);
    net.layers().push_back(std::move(layer));
  }
  return net;
}

}  // namespace

Matrix NormalizeBlocks(const Matrix& rows, NormStats& stats, NormMode mode) {
  const std::size_t m = rows.rows();
  const std::size_t dim = rows.cols();
  const std::size_t d = stats.mean.cols();
  Require(stats.mean.rows() * d == dim, ErrorKind::kConfig,
          "normalization stats do not match the embedding width");
  Matrix out(m, dim);
  const bool batch_stats = mode == NormMode::kTrain && m >= 2;
  for (std::size_t c = 0; c < dim; ++c) {
    float& running_mean = stats.mean(c / d, c % d);
    float& running_var = stats.var(c / d, c % d);
    double mean = running_mean, var = running_var;
    if (batch_stats) {
      mean = 0.0;
      for (std::size_t r = 0; r < m; ++r) mean += rows(r, c);
      mean /= static_cast<double>(m);
      var = 0.0;
      for (std::size_t r = 0; r < m; ++r) var += (rows(r, c) - mean) * (rows(r, c) - mean);
      var /= static_cast<double>(m);
      running_mean = static_cast<float>(stats.momentum * running_mean + (1.0 - stats.momentum) * mean);
      running_var = static_cast<float>(stats.momentum * running_var + (1.0 - stats.momentum) * var);
    }
    const double inv = 1.0 / std::sqrt(var + stats.epsilon);
    for (std::size_t r = 0; r < m; ++r) {
      out(r, c) = static_cast<float>(std::tanh((rows(r, c) - mean) * inv));
    }
  }
  return out;
}

std::size_t GroupContext::LocalRow(UserId user) const {
  if (user >= local_user.size() || local_user[user] < 0) {
    Fail(ErrorKind::kNotFound, "user " + std::to_string(user) + " is not in this group");
  }
  return static_cast<std::size_t>(local_user[user]);
}

double ScoreInteraction(const GroupContext& ctx, const FinetuneWeights<float>& w,
                        const NormStats& stats, UserId user, ItemId item,
                        std::span<const float> alpha) {
  Require(item < w.items.rows(), ErrorKind::kNotFound, "unknown item id " + std::to_string(item));
  const std::size_t dim = ctx.full_dim();
  const std::size_t d = ctx.block_dim;
  MatrixT<float> h0(1, 2 * dim);
  const auto u = w.users.row(ctx.LocalRow(user));
  std::copy(u.begin(), u.end(), h0.row(0).begin());
  const std::size_t g = ctx.item_group_of[item];
  for (std::size_t c = 0; c < dim; ++c) {
    const double xh = (w.items(item, c) - stats.mean(c / d, c % d)) /
                      std::sqrt(static_cast<double>(stats.var(c / d, c % d)) + ctx.epsilon);
    h0(0, dim + c) = alpha[ctx.alpha_index(c / d, g)] * static_cast<float>(std::tanh(xh));
  }
  const auto logits = w.scorer.Forward(h0);
  return detail::Sigmoid(logits(0, 0));
}

BlockGrid GroupModel::block_grid() const {
  return BlockGrid::FromTable(weights.items, context.blocks_per_item, item_groups);
}

std::span<const float> GroupModel::UserRow(UserId user) const {
  return weights.users.row(context.LocalRow(user));
}

std::vector<double> GroupPopularityVector(const InteractionLog& log,
                                          const std::vector<std::uint32_t>& item_group_of,
                                          std::size_t item_groups,
                                          const std::vector<UserId>& users) {
  std::vector<bool> member(log.num_users, false);
  for (UserId u : users) member.at(u) = true;
  std::vector<double> counts(item_groups, 0.0);
  double total = 0.0;
  for (const auto& x : log.interactions) {
    if (x.role != Role::kTrain || !member[x.user]) continue;
    counts[item_group_of[x.item]] += 1.0;
    total += 1.0;
  }
  Require(total > 0.0, ErrorKind::kConfig, "user group has no train interactions");
  for (auto& c : counts) c /= total;
  return counts;
}

GroupModel InitGroupModel(const InteractionLog& log, const BlockGrid& pretrained_items,
                          const UserEmbeddingTable& pretrained_users,
                          const std::vector<UserId>& users, std::uint32_t group_index,
                          const PipelineConfig& config) {
  Require(!users.empty(), ErrorKind::kConfig, "user group is empty");
  GroupModel model;
  model.group_index = group_index;
  model.item_groups = pretrained_items.all_group_items();

  GroupContext& ctx = model.context;
  ctx.blocks_per_item = pretrained_items.blocks_per_item();
  ctx.block_dim = pretrained_items.block_dim();
  ctx.item_groups = pretrained_items.num_groups();
  ctx.item_group_of.resize(pretrained_items.num_items());
  for (ItemId v = 0; v < pretrained_items.num_items(); ++v) {
    ctx.item_group_of[v] = pretrained_items.slot(v).group;
  }
  ctx.users = users;
  std::sort(ctx.users.begin(), ctx.users.end());
  ctx.local_user.assign(log.num_users, -1);
  for (std::size_t r = 0; r < ctx.users.size(); ++r) {
    ctx.local_user.at(ctx.users[r]) = static_cast<std::int64_t>(r);
  }
  ctx.popularity = GroupPopularityVector(log, ctx.item_group_of, ctx.item_groups, ctx.users);
  ctx.lambda = config.lambda;
  ctx.weight_decay = config.weight_decay;
  ctx.epsilon = config.epsilon;

  const std::size_t dim = ctx.full_dim();
  model.weights.items = pretrained_items.ToTable();
  model.weights.users = Matrix(ctx.users.size(), dim);
  for (std::size_t r = 0; r < ctx.users.size(); ++r) {
    const auto src = pretrained_users.rows.row(ctx.users[r]);
    std::copy(src.begin(), src.end(), model.weights.users.row(r).begin());
  }
  Rng rng = Rng(config.seed).Split(5000 + group_index);
  Rng scorer_rng = rng.Split(1), controller_rng = rng.Split(2);
  model.weights.scorer = Mlp<float>(2 * dim, config.scorer_hidden, 1);
  model.weights.scorer.InitGlorot(scorer_rng);
  model.controller = Mlp<float>(ctx.item_groups + 1, config.controller_hidden, ctx.alpha_size());
  model.controller.InitGlorot(controller_rng);

  // Running stats start from the pretrained table's per-column statistics.
  model.norm = NormStats::Identity(ctx.blocks_per_item, ctx.block_dim, config.epsilon,
                                   config.norm_momentum);
  const Matrix& table = model.weights.items;
  for (std::size_t c = 0; c < dim; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < table.rows(); ++r) mean += table(r, c);
    mean /= static_cast<double>(table.rows());
    for (std::size_t r = 0; r < table.rows(); ++r) var += (table(r, c) - mean) * (table(r, c) - mean);
    var /= static_cast<double>(table.rows());
    model.norm.mean(c / ctx.block_dim, c % ctx.block_dim) = static_cast<float>(mean);
    model.norm.var(c / ctx.block_dim, c % ctx.block_dim) = static_cast<float>(var);
  }
  model.alpha.assign(ctx.alpha_size(), 1.0f / static_cast<float>(ctx.alpha_size()));
  model.last_loss = std::log(2.0);
  return model;
}

GroupModel OptimizeGroup(GroupModel model, const InteractionLog& log, const PipelineConfig& config,
                         FinetuneTrace* trace) {
  config.Validate();
  const GroupContext& ctx = model.context;
  const BprSampler train_sampler = BprSampler::ForUsers(log, ctx.users, Role::kTrain);
  const BprSampler val_sampler = BprSampler::ForUsers(log, ctx.users, Role::kValidation);
  const std::string tag = "group " + std::to_string(model.group_index);
  Require(val_sampler.num_positives() > 0, ErrorKind::kConfig,
          tag + " has no validation interactions");
  Require(train_sampler.num_positives() > 0, ErrorKind::kConfig,
          tag + " has no train interactions");

  const std::size_t batch = config.finetune_batch;
  const std::size_t iterations = (train_sampler.num_positives() + batch - 1) / batch;
  const double xi = config.xi();
  const std::vector<float> uniform(ctx.alpha_size(), 1.0f / static_cast<float>(ctx.alpha_size()));
  Adam weight_opt(config.finetune_lr);
  Adam controller_opt(config.controller_lr);
  double loss_input = model.last_loss;
  const Rng root = Rng(config.seed).Split(9000 + model.group_index);
  FinetuneTrace local_trace;
  FinetuneTrace& tr = trace != nullptr ? *trace : local_trace;

  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < config.finetune_epochs; ++epoch) {
    Rng rng = root.Split(epoch);
    std::vector<double> alpha_sum(ctx.alpha_size(), 0.0);
    double train_sum = 0.0, val_sum = 0.0;
    for (std::size_t it = 0; it < iterations; ++it) {
      const auto val_batch = val_sampler.Sample(batch, rng);
      const auto train_batch = train_sampler.Sample(batch, rng);
      std::ostringstream where;
      where << tag << " epoch " << epoch << " iteration " << it;

      if (config.use_controller) {
        const auto step = ControllerHypergradient<float>(ctx, model.weights, model.controller,
                                                         model.norm, loss_input, train_batch,
                                                         val_batch, xi);
        if (!std::isfinite(step.val_loss) || !AllFinite(Tensors(step.grad))) {
          Fail(ErrorKind::kNumerical, "non-finite controller gradient at " + where.str());
        }
        controller_opt.Step(Tensors(model.controller), Tensors(step.grad));
        tr.controller_batch_roles.push_back(Role::kValidation);
        ++tr.controller_updates;
        val_sum += step.val_loss / static_cast<double>(batch);
      } else {
        const ScorerPass pass{NormMode::kTrain, &model.norm, false};
        val_sum += GroupBprLoss<float>(ctx, model.weights, uniform, val_batch, pass) /
                   static_cast<double>(batch);
      }

      const std::vector<float> alpha =
          config.use_controller ? ControllerForward(model.controller, ctx.popularity, loss_input)
                                : uniform;
      for (std::size_t i = 0; i < alpha.size(); ++i) alpha_sum[i] += alpha[i];

      FinetuneWeights<float> grad = model.weights.ZerosLike();
      const ScorerPass pass{NormMode::kTrain, &model.norm, true};
      const GroupLossTerms terms =
          GroupTrainLoss<float>(ctx, model.weights, alpha, train_batch, pass, &grad);
      if (!std::isfinite(terms.total) || !AllFinite(std::as_const(grad).tensors())) {
        Fail(ErrorKind::kNumerical, "non-finite weight gradient at " + where.str());
      }
      weight_opt.Step(model.weights.tensors(), std::as_const(grad).tensors());
      tr.weight_batch_roles.push_back(Role::kTrain);
      ++tr.weight_updates;
      loss_input = terms.bpr / static_cast<double>(batch);
      train_sum += loss_input;
    }
    for (std::size_t i = 0; i < alpha_sum.size(); ++i) {
      model.alpha[i] = static_cast<float>(alpha_sum[i] / static_cast<double>(iterations));
    }
    tr.epoch_train_loss.push_back(train_sum / static_cast<double>(iterations));
    tr.epoch_val_loss.push_back(val_sum / static_cast<double>(iterations));
    ++tr.epochs_run;
    std::ostringstream msg;
    msg << tag << " epoch " << epoch << " train " << tr.epoch_train_loss.back() << " val "
        << tr.epoch_val_loss.back();
    LogInfo(msg.str());
    if (tr.epoch_val_loss.back() < best_val) {
      best_val = tr.epoch_val_loss.back();
      stale = 0;
    } else if (config.finetune_patience > 0 && ++stale >= config.finetune_patience) {
      break;
    }
  }
  // Renormalize the averaged softmax outputs against float drift.
  const double total = std::accumulate(model.alpha.begin(), model.alpha.end(), 0.0);
  for (auto& a : model.alpha) a = static_cast<float>(a / total);
  model.last_loss = loss_input;
  return model;
}

std::vector<GroupModel> OptimizeAllGroups(const InteractionLog& log, const BlockGrid& items,
                                          const UserEmbeddingTable& users,
                                          const std::vector<std::vector<UserId>>& user_groups,
                                          const PipelineConfig& config,
                                          const std::vector<std::uint32_t>& only) {
  std::vector<std::uint32_t> selected = only;
  if (selected.empty()) {
    selected.resize(user_groups.size());
    std::iota(selected.begin(), selected.end(), 0u);
  }
  for (auto g : selected) {
    Require(g < user_groups.size(), ErrorKind::kConfig, "group index " + std::to_string(g) + " out of range");
  }
  std::vector<GroupModel> models(selected.size());
  std::vector<std::exception_ptr> errors(selected.size());
  auto job = [&](std::size_t k) {
    try {
      const std::uint32_t g = selected[k];
      models[k] = OptimizeGroup(InitGroupModel(log, items, users, user_groups[g], g, config), log,
                                config);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(std::max<std::size_t>(config.threads, 1), selected.size());
  if (workers <= 1) {
    for (std::size_t k = 0; k < selected.size(); ++k) job(k);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < selected.size(); k += workers) job(k);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return models;
}

void SaveGroupModel(const std::string& path, const GroupModel& model) {
  const GroupContext& ctx = model.context;
  ByteWriter w;
  w.Magic("PEGM");
  w.U32(1);
  w.U32(model.group_index);
  w.U32(static_cast<std::uint32_t>(ctx.blocks_per_item));
  w.U32(static_cast<std::uint32_t>(ctx.block_dim));
  w.U32(static_cast<std::uint32_t>(ctx.item_groups));
  w.U32(static_cast<std::uint32_t>(ctx.item_group_of.size()));
  w.U32(static_cast<std::uint32_t>(ctx.local_user.size()));
  w.F32s(model.alpha);
  w.F32s(model.norm.mean.flat());
  w.F32s(model.norm.var.flat());
  w.F64(model.norm.epsilon);
  w.F64(model.norm.momentum);
  for (const auto& items : model.item_groups) {
    w.U32(static_cast<std::uint32_t>(items.size()));
    for (ItemId v : items) w.U32(v);
  }
  const BlockGrid grid = model.block_grid();
  for (std::size_t g = 0; g < grid.num_groups(); ++g) {
    for (std::size_t n = 0; n < grid.blocks_per_item(); ++n) w.F32s(grid.block(g, n).flat());
  }
  w.U32(static_cast<std::uint32_t>(ctx.users.size()));
  for (UserId u : ctx.users) w.U32(u);
  w.F32s(model.weights.users.flat());
  for (double p : ctx.popularity) w.F64(p);
  w.F64(ctx.lambda);
  w.F64(ctx.weight_decay);
  w.F64(ctx.epsilon);
  w.F64(model.last_loss);
  WriteMlp(w, model.weights.scorer);
  WriteMlp(w, model.controller);
  WriteFileBytes(path, w.bytes());
}

GroupModel LoadGroupModel(const std::string& path) {
  const auto bytes = ReadFileBytes(path);
  ByteReader r(bytes);
  r.ExpectMagic("PEGM");
  Require(r.U32() == 1, ErrorKind::kFormat, "unsupported group model version");
  GroupModel model;
  GroupContext& ctx = model.context;
  model.group_index = r.U32();
  ctx.blocks_per_item = r.U32();
  ctx.block_dim = r.U32();
  ctx.item_groups = r.U32();
  const std::size_t num_items = r.U32();
  const std::size_t num_users = r.U32();
  model.alpha.resize(ctx.alpha_size());
  r.F32s(model.alpha);
  model.norm.mean = Matrix(ctx.blocks_per_item, ctx.block_dim);
  model.norm.var = Matrix(ctx.blocks_per_item, ctx.block_dim);
  r.F32s(model.norm.mean.flat());
  r.F32s(model.norm.var.flat());
  model.norm.epsilon = r.F64();
  model.norm.momentum = r.F64();
  model.item_groups.resize(ctx.item_groups);
  for (auto& items : model.item_groups) {
    items.resize(r.U32());
    for (auto& v : items) v = r.U32();
  }
  BlockGrid grid(ctx.blocks_per_item, ctx.block_dim, model.item_groups, num_items);
  for (std::size_t g = 0; g < grid.num_groups(); ++g) {
    for (std::size_t n = 0; n < grid.blocks_per_item(); ++n) r.F32s(grid.block(g, n).flat());
  }
  model.weights.items = grid.ToTable();
  ctx.item_group_of.resize(num_items);
  for (ItemId v = 0; v < num_items; ++v) ctx.item_group_of[v] = grid.slot(v).group;
  ctx.users.resize(r.U32());
  for (auto& u : ctx.users) u = r.U32();
  ctx.local_user.assign(num_users, -1);
  for (std::size_t k = 0; k < ctx.users.size(); ++k) {
    Require(ctx.users[k] < num_users, ErrorKind::kFormat, "user id out of range in group model");
    ctx.local_user[ctx.users[k]] = static_cast<std::int64_t>(k);
  }
  model.weights.users = Matrix(ctx.users.size(), ctx.full_dim());
  r.F32s(model.weights.users.flat());
  ctx.popularity.resize(ctx.item_groups);
  for (auto& p : ctx.popularity) p = r.F64();
  ctx.lambda = r.F64();
  ctx.weight_decay = r.F64();
  ctx.epsilon = r.F64();
  model.last_loss = r.F64();
  model.weights.scorer = ReadMlp(r);
  model.controller = ReadMlp(r);
  Require(r.AtEnd(), ErrorKind::kFormat, "trailing bytes in group model");
  return model;
}

}  // namespace peel
