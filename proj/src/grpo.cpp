#include "utrl/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "utrl/errors.hpp"

namespace utrl::grpo {

AdvantageSet group_advantages(std::span<const double> rewards, double epsilon) {
  if (rewards.size() < 2) throw Error("group_advantages needs at least 2 rewards");
  const auto g = static_cast<double>(rewards.size());
  AdvantageSet out;
  double sum = 0.0;
  for (double r : rewards) {
    if (!std::isfinite(r)) throw Error("group_advantages: non-finite reward");
    sum += r;
  }
  out.group_mean = sum / g;
  double sq = 0.0;
  for (double r : rewards) sq += (r - out.group_mean) * (r - out.group_mean);
  out.group_std = std::sqrt(sq / g);
  out.advantages.assign(rewards.size(), 0.0);
  if (out.group_std < epsilon) {
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out.advantages[i] = (rewards[i] - out.group_mean) / out.group_std;
  }
  return out;
}

double clipped_surrogate(std::span<const double> ratios, std::span<const double> advantages, double clip_eps) {
  if (ratios.size() != advantages.size()) throw Error("clipped_surrogate: length mismatch");
  if (ratios.empty()) throw Error("clipped_surrogate: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double clipped = std::clamp(ratios[i], 1.0 - clip_eps, 1.0 + clip_eps);
    sum += std::min(ratios[i] * advantages[i], clipped * advantages[i]);
  }
  return sum / static_cast<double>(ratios.size());
}

std::vector<double> ToyPolicy::probabilities() const {
  std::vector<double> p(logits.size());
  if (p.empty()) return p;
  double max_scaled = -INFINITY;
  for (double l : logits) max_scaled = std::max(max_scaled, l / temperature);
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] / temperature - max_scaled);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<std::size_t> toy_policy_sample(const ToyPolicy& policy, std::size_t n, std::uint64_t seed) {
  const auto probs = policy.probabilities();
  if (probs.empty()) throw Error("toy_policy_sample: empty action set");
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> dist(probs.begin(), probs.end());
  std::vector<std::size_t> out(n);
  for (auto& a : out) a = dist(rng);
  return out;
}

ToyPolicy toy_policy_update(ToyPolicy policy, std::span<const std::size_t> actions, std::span<const double> advantages) {
  if (actions.size() != advantages.size()) throw Error("toy_policy_update: length mismatch");
  const auto probs = policy.probabilities();
  std::vector<double> grad(probs.size(), 0.0);
  // d/d logit_k log softmax(l/T)_a = (1[k == a] - p_k) / T
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (advantages[i] == 0.0) continue;
    for (std::size_t k = 0; k < probs.size(); ++k) {
      grad[k] += advantages[i] * ((k == actions[i] ? 1.0 : 0.0) - probs[k]) / policy.temperature;
    }
  }
  for (std::size_t k = 0; k < grad.size(); ++k) policy.logits[k] += policy.step_size * grad[k];
  return policy;
}

}  // namespace utrl::grpo
