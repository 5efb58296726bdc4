#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "utrl/corpus.hpp"
#include "utrl/judge.hpp"

namespace utrl::eval {

/// Fraction of ground-truth cases passed.
double code_score(const judge::CodeSolution& code, const UnitTest& gt_ut, const judge::Judge& judge);
/// True iff every ground-truth case passes.
bool code_accuracy(const judge::CodeSolution& code, const UnitTest& gt_ut, const judge::Judge& judge);
double score_of_row(const std::vector<bool>& passes);

struct BestOfNResult {
  std::string task_id;
  std::string source;
  std::size_t n_candidates = 0;
  std::size_t selector_cases = 0;  // valid generated cases used for selection
  std::size_t selected_index = 0;
  double selected_score = 0.0;
  bool selected_accuracy = false;
  double baseline_score = 0.0;
  double baseline_accuracy_rate = 0.0;
  double delta_score = 0.0;
  double delta_accuracy = 0.0;
  bool unselective = false;
};

/// Selection over precomputed rows. `selector_passes[i]` is candidate i over
/// the selector cases; `gt_passes[i]` over the ground-truth cases. With no
/// selector cases the pick falls back to index 0 and the result is flagged.
BestOfNResult select_best(std::string task_id, const std::vector<std::vector<bool>>& selector_passes,
                          const std::vector<std::vector<bool>>& gt_passes);

/// Filters `generated_ut` against C* (unless `filter_selector` is false),
/// picks the candidate passing the largest fraction of what remains, and
/// scores it against the ground-truth tests.
BestOfNResult best_of_n(const ProgrammingTask& task, std::span<const judge::CodeSolution> candidates,
                        const UnitTest& generated_ut, const judge::Judge& judge, bool filter_selector = true);

/// Pearson correlation of average ranks. Throws UndefinedCorrelationError
/// when either side is constant, Error on length mismatch or fewer than 2.
double spearman(std::span<const double> x, std::span<const double> y);

/// Number of values sharing their rank with at least one other value.
std::size_t tied_values(std::span<const double> x);

struct FidelityResult {
  std::string task_id;
  std::string source;
  std::optional<double> rho;  // empty when undefined
  std::size_t n_solutions = 0;
  std::size_t generated_cases = 0;
  std::size_t ties_generated = 0;
  std::size_t ties_ground_truth = 0;
  std::string note;
};

FidelityResult fidelity_from_scores(std::string task_id, std::span<const double> generated_scores,
                                    std::span<const double> gt_scores);

/// Spearman between per-solution pass fractions under the (valid-filtered)
/// generated test and under the ground-truth test.
FidelityResult fidelity(const ProgrammingTask& task, std::span<const judge::CodeSolution> pool,
                        const UnitTest& generated_ut, const judge::Judge& judge, bool filter_valid = true);

struct AggregateRow {
  std::string group;  // "all" or a source name
  std::size_t n_tasks = 0;
  double score = 0.0;
  double acc_pct = 0.0;
  double delta_score = 0.0;
  double delta_acc_pp = 0.0;
  double baseline_score = 0.0;
  double baseline_acc_pct = 0.0;
  std::size_t unselective = 0;
  std::optional<double> mean_rho;
  std::size_t rho_defined = 0;
  std::size_t rho_undefined = 0;
};

struct ReportOptions {
  bool by_source = false;
  std::string config_hash;
  std::string seed;
};

/// Means across tasks, written as report.csv, report.txt and fidelity.csv
/// under `out_dir`. Throws Error when both result lists are empty.
std::vector<AggregateRow> aggregate_report(std::span<const BestOfNResult> best, std::span<const FidelityResult> fid,
                                           const std::filesystem::path& out_dir, const ReportOptions& options = {});

}  // namespace utrl::eval
