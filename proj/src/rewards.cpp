#include "utrl/rewards.hpp"

#include <algorithm>

#include "utrl/errors.hpp"

namespace utrl::rewards {

void RewardConfig::validate() const {
  if (tau < 1) throw ConfigError("tau", "must be >= 1");
  if (!(lambda_weight >= 0.0 && lambda_weight <= 1.0)) throw ConfigError("lambda_weight", "must lie in [0, 1]");
  if (m_samples < 1) throw ConfigError("m_samples", "must be >= 1");
}

std::vector<std::size_t> valid_indices(const std::vector<bool>& gt_passes) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < gt_passes.size(); ++i)
    if (gt_passes[i]) out.push_back(i);
  return out;
}

DiscriminationResult discrimination_reward(const BoolGrid& code_passes) {
  DiscriminationResult result;
  result.detected.reserve(code_passes.size());
  if (code_passes.empty()) return result;
  double sum = 0.0;
  for (const auto& row : code_passes) {
    // 1 - prod_T (1 - F(C_j, T)) with F the failure indicator: 1 iff some case fails
    double escapes = 1.0;
    for (bool passed : row) escapes *= passed ? 1.0 : 0.0;
    const double detected = 1.0 - escapes;
    result.detected.push_back(detected == 1.0);
    sum += detected;
  }
  result.reward = sum / static_cast<double>(code_passes.size());
  return result;
}

double validity_reward(std::size_t n_valid, std::size_t n_total, const RewardConfig& config) {
  if (n_total == 0) return 0.0;
  const std::size_t denom =
      config.clipping_enabled ? std::max(n_total, static_cast<std::size_t>(config.tau)) : n_total;
  return static_cast<double>(n_valid) / static_cast<double>(denom);
}

double combined_ut_reward(double r_disc, double r_valid, double lambda_weight) {
  return lambda_weight * r_disc + (1.0 - lambda_weight) * r_valid;
}

UnitTestReward score_unit_test(const std::vector<bool>& gt_passes, const BoolGrid& code_passes,
                               const RewardConfig& config) {
  UnitTestReward r;
  r.n_total = gt_passes.size();
  const auto valid = valid_indices(gt_passes);
  r.n_valid = valid.size();

  BoolGrid restricted;
  restricted.reserve(code_passes.size());
  for (const auto& row : code_passes) {
    std::vector<bool> sub;
    sub.reserve(valid.size());
    for (std::size_t idx : valid) sub.push_back(row.at(idx));
    restricted.push_back(std::move(sub));
  }
  auto disc = discrimination_reward(restricted);
  r.r_disc = disc.reward;
  r.detected = std::move(disc.detected);
  r.r_valid = validity_reward(r.n_valid, r.n_total, config);
  r.r_combined = config.validity_enabled ? combined_ut_reward(r.r_disc, r.r_valid, config.lambda_weight) : r.r_disc;
  return r;
}

double code_reward(const std::vector<bool>& passes_on_valid) {
  if (passes_on_valid.empty()) throw NoValidTestsError();
  const auto passed = std::count(passes_on_valid.begin(), passes_on_valid.end(), true);
  return static_cast<double>(passed) / static_cast<double>(passes_on_valid.size());
}

UnitTest filter_valid(const UnitTest& ut, const judge::CodeSolution& gt_code, const judge::Judge& judge) {
  const judge::CodeSolution programs[] = {gt_code};
  const auto m = judge.evaluate_matrix(programs, ut.cases);
  UnitTest out;
  for (std::size_t j = 0; j < ut.cases.size(); ++j) {
    if (!m.at(0, j)) continue;
    out.cases.push_back(ut.cases[j]);
    if (ut.has_reasoning()) out.reasoning.push_back(ut.reasoning[j]);
  }
  return out;
}

DiscriminationResult discrimination_reward(const UnitTest& valid_ut, std::span<const judge::CodeSolution> sampled_codes,
                                           const judge::Judge& judge) {
  if (valid_ut.empty()) {
    return {0.0, std::vector<bool>(sampled_codes.size(), false)};
  }
  return discrimination_reward(judge.evaluate_matrix(sampled_codes, valid_ut.cases).bits);
}

double validity_reward(const UnitTest& ut, const judge::CodeSolution& gt_code, const RewardConfig& config,
                       const judge::Judge& judge) {
  if (ut.empty()) return 0.0;
  const judge::CodeSolution programs[] = {gt_code};
  const auto m = judge.evaluate_matrix(programs, ut.cases);
  return validity_reward(valid_indices(m.bits[0]).size(), ut.size(), config);
}

double code_reward(const judge::CodeSolution& code, const UnitTest& valid_ut, const judge::Judge& judge) {
  if (valid_ut.empty()) throw NoValidTestsError();
  const judge::CodeSolution programs[] = {code};
  return code_reward(judge.evaluate_matrix(programs, valid_ut.cases).bits[0]);
}

}  // namespace utrl::rewards
