#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "utrl/corpus.hpp"
#include "utrl/judge.hpp"

namespace utrl::rewards {

struct RewardConfig {
  int tau = 12;               // validity clipping threshold
  double lambda_weight = 0.5; // weight of the discrimination term
  int m_samples = 8;          // sampled codes per task
  bool validity_enabled = true;
  bool clipping_enabled = true;

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

struct DiscriminationResult {
  double reward = 0.0;
  std::vector<bool> detected;
};

struct UnitTestReward {
  double r_disc = 0.0;
  double r_valid = 0.0;
  double r_combined = 0.0;
  std::size_t n_total = 0;
  std::size_t n_valid = 0;
  std::vector<bool> detected;
};

/// Boolean grid indexed [program][test].
using BoolGrid = std::vector<std::vector<bool>>;

// --- Pure forms over precomputed pass/fail bits -----------------------------

/// Indices of the cases the ground-truth solution passes.
std::vector<std::size_t> valid_indices(const std::vector<bool>& gt_passes);

/// Fraction of codes failing at least one valid case. `code_passes` holds
/// one row per sampled code over the valid cases only.
DiscriminationResult discrimination_reward(const BoolGrid& code_passes);

/// n_valid / max(n_total, tau), or n_valid / n_total with clipping disabled.
double validity_reward(std::size_t n_valid, std::size_t n_total, const RewardConfig& config);

double combined_ut_reward(double r_disc, double r_valid, double lambda_weight);

/// Eqs. 1-3 and the weighted sum for one generated unit test, given the
/// ground-truth row over all N cases and the M x N sampled-code grid.
/// With validity disabled the combined reward is r_disc alone.
UnitTestReward score_unit_test(const std::vector<bool>& gt_passes, const BoolGrid& code_passes,
                               const RewardConfig& config);

/// Fraction of valid cases passed. Throws NoValidTestsError on an empty row.
double code_reward(const std::vector<bool>& passes_on_valid);

// --- Judge-backed forms -----------------------------------------------------

UnitTest filter_valid(const UnitTest& ut, const judge::CodeSolution& gt_code, const judge::Judge& judge);

DiscriminationResult discrimination_reward(const UnitTest& valid_ut, std::span<const judge::CodeSolution> sampled_codes,
                                           const judge::Judge& judge);

double validity_reward(const UnitTest& ut, const judge::CodeSolution& gt_code, const RewardConfig& config,
                       const judge::Judge& judge);

double code_reward(const judge::CodeSolution& code, const UnitTest& valid_ut, const judge::Judge& judge);

}  // namespace utrl::rewards
