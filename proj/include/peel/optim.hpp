#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace peel {

// Counts optimizer steps process-wide. The on-device paths (shrink, rank,
// timeline simulation) must never move this counter.
std::uint64_t OptimizerStepCount();

class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  // params[i] and grads[i] must keep the same sizes across calls.
  void Step(const std::vector<std::span<float>>& params,
            const std::vector<std::span<const float>>& grads);

  double learning_rate() const noexcept { return lr_; }
  std::size_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace peel
