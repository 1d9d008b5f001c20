#include "peel/optim.hpp"

#include <atomic>
#include <cmath>

#include "peel/error.hpp"

namespace peel {
namespace {
std::atomic<std::uint64_t> g_optimizer_steps{0};
}

std::uint64_t OptimizerStepCount() { return g_optimizer_steps.load(); }

void Adam::Step(const std::vector<std::span<float>>& params,
                const std::vector<std::span<const float>>& grads) {
  Require(params.size() == grads.size(), ErrorKind::kConfig, "adam: param/grad count mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0f);
      v_.emplace_back(p.size(), 0.0f);
    }
  }
  Require(m_.size() == params.size(), ErrorKind::kConfig, "adam: parameter set changed");
  ++t_;
  ++g_optimizer_steps;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float step = static_cast<float>(lr_ * std::sqrt(c2) / c1);
  const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const float eps = static_cast<float>(eps_ * std::sqrt(c2));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    const auto g = grads[k];
    Require(p.size() == g.size() && p.size() == m_[k].size(), ErrorKind::kConfig,
            "adam: tensor size mismatch");
    float* m = m_[k].data();
    float* v = v_[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      p[i] -= step * m[i] / (std::sqrt(v[i]) + eps);
    }
  }
}

}  // namespace peel
