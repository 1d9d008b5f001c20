#pragma once

// Template definitions for finetune.hpp.

#include <algorithm>
#include <cmath>
#include <vector>

namespace peel {

template <class T>
std::vector<T> ControllerForward(const Mlp<T>& net, std::span<const double> popularity,
                                 double loss_value, ControllerTape<T>* tape) {
  MatrixT<T> input(1, popularity.size() + 1);
  for (std::size_t g = 0; g < popularity.size(); ++g) input(0, g) = static_cast<T>(popularity[g]);
  input(0, popularity.size()) = static_cast<T>(loss_value);
  const MatrixT<T> logits = net.Forward(input, tape != nullptr ? &tape->mlp : nullptr);
  const auto z = logits.row(0);
  T peak = z[0];
  for (const T v : z) peak = std::max(peak, v);
  std::vector<T> alpha(z.size());
  T total = T(0);
  for (std::size_t i = 0; i < z.size(); ++i) {
    alpha[i] = std::exp(z[i] - peak);
    total += alpha[i];
  }
  for (auto& a : alpha) a /= total;
  if (tape != nullptr) tape->alpha = alpha;
  return alpha;
}

template <class T>
void ControllerBackward(const Mlp<T>& net, const ControllerTape<T>& tape,
                        std::span<const T> d_alpha, Mlp<T>& grad) {
  const auto& alpha = tape.alpha;
  T inner = T(0);
  for (std::size_t i = 0; i < alpha.size(); ++i) inner += alpha[i] * d_alpha[i];
  MatrixT<T> d_logits(1, alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) d_logits(0, i) = alpha[i] * (d_alpha[i] - inner);
  net.Backward(tape.mlp, d_logits, grad);
}

template <class T>
double GroupBprLoss(const GroupContext& ctx, const FinetuneWeights<T>& w, std::span<const T> alpha,
                    std::span<const BprTriple> batch, const ScorerPass& pass,
                    FinetuneWeights<T>* grad_w, std::vector<T>* grad_alpha) {
  const std::size_t batch_size = batch.size();
  if (batch_size == 0) return 0.0;
  const std::size_t m = 2 * batch_size;
  const std::size_t dim = ctx.full_dim();
  const std::size_t d = ctx.block_dim;
  Require(alpha.size() == ctx.alpha_size(), ErrorKind::kConfig, "alpha has the wrong size");

  std::vector<ItemId> row_item(m);
  std::vector<std::size_t> row_user(m);
  for (std::size_t b = 0; b < batch_size; ++b) {
    row_item[b] = batch[b].positive;
    row_item[batch_size + b] = batch[b].negative;
    row_user[b] = row_user[batch_size + b] = ctx.LocalRow(batch[b].user);
  }

  // Block normalization.
  MatrixT<T> xhat(m, dim), ehat(m, dim);
  std::vector<T> inv(dim);
  const bool batch_stats = pass.mode == NormMode::kTrain && m > 1;
  for (std::size_t c = 0; c < dim; ++c) {
    double mean = 0.0, var = 0.0;
    if (batch_stats) {
      for (std::size_t r = 0; r < m; ++r) mean += static_cast<double>(w.items(row_item[r], c));
      mean /= static_cast<double>(m);
      for (std::size_t r = 0; r < m; ++r) {
        const double diff = static_cast<double>(w.items(row_item[r], c)) - mean;
        var += diff * diff;
      }
      var /= static_cast<double>(m);
      if (pass.update_stats && pass.stats != nullptr) {
        const double mom = pass.stats->momentum;
        float& rm = pass.stats->mean(c / d, c % d);
        float& rv = pass.stats->var(c / d, c % d);
        rm = static_cast<float>(mom * rm + (1.0 - mom) * mean);
        rv = static_cast<float>(mom * rv + (1.0 - mom) * var);
      }
    } else {
      Require(pass.stats != nullptr, ErrorKind::kConfig, "inference normalization needs stats");
      mean = pass.stats->mean(c / d, c % d);
      var = pass.stats->var(c / d, c % d);
    }
    inv[c] = static_cast<T>(1.0 / std::sqrt(var + ctx.epsilon));
    const T mu = static_cast<T>(mean);
    for (std::size_t r = 0; r < m; ++r) {
      const T xh = (w.items(row_item[r], c) - mu) * inv[c];
      xhat(r, c) = xh;
      ehat(r, c) = std::tanh(xh);
    }
  }

  // h0 = [u, alpha-weighted normalized blocks].
  MatrixT<T> h0(m, 2 * dim);
  for (std::size_t r = 0; r < m; ++r) {
    const auto u = w.users.row(row_user[r]);
    std::copy(u.begin(), u.end(), h0.row(r).begin());
    const std::size_t g = ctx.item_group_of[row_item[r]];
    for (std::size_t n = 0; n < ctx.blocks_per_item; ++n) {
      const T a = alpha[ctx.alpha_index(n, g)];
      for (std::size_t k = 0; k < d; ++k) h0(r, dim + n * d + k) = a * ehat(r, n * d + k);
    }
  }
  MlpTape<T> tape;
  const MatrixT<T> logits = w.scorer.Forward(h0, &tape);

  std::vector<double> y(m);
  for (std::size_t r = 0; r < m; ++r) y[r] = detail::Sigmoid(static_cast<double>(logits(r, 0)));
  double loss = 0.0;
  MatrixT<T> d_logits(m, 1);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const double diff = y[b] - y[batch_size + b];
    loss -= detail::LogSigmoid(diff);
    const double dy = -detail::Sigmoid(-diff);
    d_logits(b, 0) = static_cast<T>(dy * y[b] * (1.0 - y[b]));
    const double yn = y[batch_size + b];
    d_logits(batch_size + b, 0) = static_cast<T>(-dy * yn * (1.0 - yn));
  }
  if (grad_w == nullptr && grad_alpha == nullptr) return loss;

  Mlp<T> scratch;
  Mlp<T>& scorer_grad = grad_w != nullptr ? grad_w->scorer : (scratch = w.scorer.ZerosLike());
  const MatrixT<T> dh0 = w.scorer.Backward(tape, d_logits, scorer_grad);

  if (grad_alpha != nullptr && grad_alpha->size() != alpha.size()) {
    grad_alpha->assign(alpha.size(), T(0));
  }
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t g = ctx.item_group_of[row_item[r]];
    if (grad_w != nullptr) {
      auto gu = grad_w->users.row(row_user[r]);
      for (std::size_t c = 0; c < dim; ++c) gu[c] += dh0(r, c);
    }
    if (grad_alpha != nullptr) {
      for (std::size_t n = 0; n < ctx.blocks_per_item; ++n) {
        T acc = T(0);
        for (std::size_t k = 0; k < d; ++k) acc += dh0(r, dim + n * d + k) * ehat(r, n * d + k);
        (*grad_alpha)[ctx.alpha_index(n, g)] += acc;
      }
    }
  }
  if (grad_w == nullptr) return loss;

  // Back through alpha scaling, tanh and the normalization.
  MatrixT<T> dxhat(m, dim);
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t g = ctx.item_group_of[row_item[r]];
    for (std::size_t c = 0; c < dim; ++c) {
      const T a = alpha[ctx.alpha_index(c / d, g)];
      const T e = ehat(r, c);
      dxhat(r, c) = a * dh0(r, dim + c) * (T(1) - e * e);
    }
  }
  for (std::size_t c = 0; c < dim; ++c) {
    T mean_d = T(0), mean_dx = T(0);
    if (batch_stats) {
      for (std::size_t r = 0; r < m; ++r) {
        mean_d += dxhat(r, c);
        mean_dx += dxhat(r, c) * xhat(r, c);
      }
      mean_d /= static_cast<T>(m);
      mean_dx /= static_cast<T>(m);
    }
    for (std::size_t r = 0; r < m; ++r) {
      const T dx = inv[c] * (dxhat(r, c) - mean_d - xhat(r, c) * mean_dx);
      grad_w->items(row_item[r], c) += dx;
    }
  }
  return loss;
}

template <class T>
GroupLossTerms GroupTrainLoss(const GroupContext& ctx, const FinetuneWeights<T>& w,
                              std::span<const T> alpha, std::span<const BprTriple> batch,
                              const ScorerPass& pass, FinetuneWeights<T>* grad_w,
                              std::vector<T>* grad_alpha) {
  GroupLossTerms terms;
  terms.bpr = GroupBprLoss(ctx, w, alpha, batch, pass, grad_w, grad_alpha);
  terms.diversity = DiversityRegularizer(w.items, ctx.blocks_per_item,
                                         grad_w != nullptr ? &grad_w->items : nullptr, -ctx.lambda);
  for (const T x : w.items.flat()) terms.decay += static_cast<double>(x) * x;
  for (const T x : w.users.flat()) terms.decay += static_cast<double>(x) * x;
  if (grad_w != nullptr && ctx.weight_decay != 0.0) {
    const T wd2 = static_cast<T>(2.0 * ctx.weight_decay);
    for (std::size_t i = 0; i < w.items.size(); ++i) grad_w->items.flat()[i] += wd2 * w.items.flat()[i];
    for (std::size_t i = 0; i < w.users.size(); ++i) grad_w->users.flat()[i] += wd2 * w.users.flat()[i];
  }
  terms.total = terms.bpr - ctx.lambda * terms.diversity + ctx.weight_decay * terms.decay;
  return terms;
}

template <class T>
ControllerGradient<T> FirstOrderControllerGradient(const GroupContext& ctx,
                                                   const FinetuneWeights<T>& w,
                                                   const Mlp<T>& controller, NormStats& stats,
                                                   double loss_input,
                                                   std::span<const BprTriple> val_batch) {
  ControllerTape<T> tape;
  const std::vector<T> alpha = ControllerForward(controller, ctx.popularity, loss_input, &tape);
  const ScorerPass pass{NormMode::kTrain, &stats, false};
  FinetuneWeights<T> grad_val = w.ZerosLike();
  std::vector<T> d_alpha(alpha.size(), T(0));
  ControllerGradient<T> out;
  out.val_loss = GroupBprLoss<T>(ctx, w, alpha, val_batch, pass, &grad_val, &d_alpha);
  out.grad = controller.ZerosLike();
  ControllerBackward<T>(controller, tape, d_alpha, out.grad);
  return out;
}

template <class T>
ControllerGradient<T> ControllerHypergradient(const GroupContext& ctx, const FinetuneWeights<T>& w,
                                              const Mlp<T>& controller, NormStats& stats,
                                              double loss_input,
                                              std::span<const BprTriple> train_batch,
                                              std::span<const BprTriple> val_batch, double xi) {
  ControllerTape<T> tape;
  const std::vector<T> alpha = ControllerForward(controller, ctx.popularity, loss_input, &tape);
  const ScorerPass pass{NormMode::kTrain, &stats, false};

  // One-step lookahead W' = W - xi * grad_W L_train(W, V).
  FinetuneWeights<T> lookahead = w;
  if (xi != 0.0) {
    FinetuneWeights<T> grad_train = w.ZerosLike();
    GroupTrainLoss<T>(ctx, w, alpha, train_batch, pass, &grad_train, nullptr);
    Axpy(lookahead.tensors(), -xi, std::as_const(grad_train).tensors());
  }

  FinetuneWeights<T> grad_val = w.ZerosLike();
  std::vector<T> d_alpha(alpha.size(), T(0));
  ControllerGradient<T> out;
  out.val_loss = GroupBprLoss<T>(ctx, lookahead, alpha, val_batch, pass, &grad_val, &d_alpha);

  if (xi != 0.0) {
    const double norm = std::sqrt(SquaredNorm(std::as_const(grad_val).tensors()));
    if (norm > 0.0) {
      const double r = 0.01 / norm;
      FinetuneWeights<T> plus = w, minus = w;
      Axpy(plus.tensors(), r, std::as_const(grad_val).tensors());
      Axpy(minus.tensors(), -r, std::as_const(grad_val).tensors());
      std::vector<T> d_plus(alpha.size(), T(0)), d_minus(alpha.size(), T(0));
      GroupBprLoss<T>(ctx, plus, alpha, train_batch, pass, nullptr, &d_plus);
      GroupBprLoss<T>(ctx, minus, alpha, train_batch, pass, nullptr, &d_minus);
      for (std::size_t i = 0; i < d_alpha.size(); ++i) {
        d_alpha[i] -= static_cast<T>(xi * (static_cast<double>(d_plus[i]) - d_minus[i]) / (2.0 * r));
      }
    }
  }
  out.grad = controller.ZerosLike();
  ControllerBackward<T>(controller, tape, d_alpha, out.grad);
  return out;
}

}  // namespace peel
