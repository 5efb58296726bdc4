#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace utrl::grpo {

inline constexpr double kDefaultEpsilon = 1e-8;

struct AdvantageSet {
  std::vector<double> advantages;
  double group_mean = 0.0;
  double group_std = 0.0;  // population standard deviation
  bool degenerate = false;
};

/// A_i = (r_i - mean) / std with the population std. A group whose std falls
/// below `epsilon` is degenerate: every advantage is zero.
AdvantageSet group_advantages(std::span<const double> rewards, double epsilon = kDefaultEpsilon);

/// Mean of min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A).
double clipped_surrogate(std::span<const double> ratios, std::span<const double> advantages, double clip_eps);

/// Categorical policy over a finite action set, pi = softmax(logits / temperature).
struct ToyPolicy {
  std::vector<double> logits;
  double step_size = 0.1;
  double temperature = 1.0;

  std::vector<double> probabilities() const;

  friend bool operator==(const ToyPolicy&, const ToyPolicy&) = default;
};

/// n i.i.d. draws, reproducible under `seed`.
std::vector<std::size_t> toy_policy_sample(const ToyPolicy& policy, std::size_t n, std::uint64_t seed);

/// logits += step_size * sum_i A_i * grad_logits log pi(a_i).
ToyPolicy toy_policy_update(ToyPolicy policy, std::span<const std::size_t> actions, std::span<const double> advantages);

}  // namespace utrl::grpo
