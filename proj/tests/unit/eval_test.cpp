#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures/oracles.hpp"
#include "support.hpp"
#include "utrl/errors.hpp"
#include "utrl/eval.hpp"

namespace utrl {
namespace {

using namespace eval;

using testing::oracle_spearman;

using Rows = std::vector<std::vector<bool>>;

TEST(Scores, RowFractions) {
  EXPECT_DOUBLE_EQ(score_of_row(std::vector<bool>(10, true)), 1.0);
  EXPECT_DOUBLE_EQ(score_of_row(std::vector<bool>(10, false)), 0.0);
  std::vector<bool> seven(10, false);
  for (int i = 0; i < 7; ++i) seven[i] = true;
  EXPECT_DOUBLE_EQ(score_of_row(seven), 0.7);
  EXPECT_THROW(score_of_row({}), Error);
}

TEST(Scores, AccuracyIffFullScore) {
  judge::Judge j(testing::quick_judge(8));
  UnitTest gt;
  for (int i = 0; i < 10; ++i) gt.cases.push_back({"1\n" + std::to_string(i) + "\n", std::to_string(i) + "\n"});
  const judge::CodeSolution good{testing::kSumProgram, "python"};
  const judge::CodeSolution nine{"import sys\nv = int(sys.stdin.read().split()[1])\nprint(v if v != 9 else 0)\n", "python"};
  EXPECT_DOUBLE_EQ(code_score(good, gt, j), 1.0);
  EXPECT_TRUE(code_accuracy(good, gt, j));
  EXPECT_DOUBLE_EQ(code_score(nine, gt, j), 0.9);
  EXPECT_FALSE(code_accuracy(nine, gt, j));
}

TEST(BestOfN, HandFixture) {
  // GT scores 0.2, 1.0, 0.5 over 10 cases; the selector ranks candidate 1 highest.
  auto row = [](int passed) {
    std::vector<bool> r(10, false);
    for (int i = 0; i < passed; ++i) r[i] = true;
    return r;
  };
  const Rows gt = {row(2), row(10), row(5)};
  const Rows sel = {{true, false, false}, {true, true, true}, {true, true, false}};
  const auto r = select_best("t", sel, gt);
  EXPECT_EQ(r.selected_index, 1u);
  EXPECT_DOUBLE_EQ(r.selected_score, 1.0);
  EXPECT_NEAR(r.baseline_score, 0.5667, 5e-5);
  EXPECT_NEAR(r.delta_score, 0.4333, 5e-5);
  EXPECT_DOUBLE_EQ(r.delta_score, r.selected_score - r.baseline_score);
  EXPECT_TRUE(r.selected_accuracy);
  EXPECT_NEAR(r.baseline_accuracy_rate, 1.0 / 3.0, 1e-12);
  EXPECT_EQ(r.selector_cases, 3u);
  EXPECT_FALSE(r.unselective);
}

TEST(BestOfN, TiesPickLowestIndexAndIdenticalGivesZeroDelta) {
  const Rows gt = {{true, false}, {true, false}, {true, false}};
  const Rows sel = {{true}, {true}, {true}};
  const auto r = select_best("t", sel, gt);
  EXPECT_EQ(r.selected_index, 0u);
  EXPECT_DOUBLE_EQ(r.delta_score, 0.0);
  EXPECT_DOUBLE_EQ(r.delta_accuracy, 0.0);
  const Rows sel2 = {{false}, {true}, {true}};
  EXPECT_EQ(select_best("t", sel2, {{true}, {false}, {true}}).selected_index, 1u);
}

TEST(BestOfN, NoSelectorCasesIsUnselective) {
  const Rows gt = {{false}, {true}};
  const auto r = select_best("t", {{}, {}}, gt);
  EXPECT_TRUE(r.unselective);
  EXPECT_EQ(r.selected_index, 0u);
  EXPECT_EQ(r.selector_cases, 0u);
}

TEST(BestOfN, GroundTruthSelectorIsUpperBound) {
  std::mt19937_64 rng(21);
  for (int iter = 0; iter < 300; ++iter) {
    const std::size_t n = 2 + rng() % 8, cases = 1 + rng() % 6;
    Rows gt(n, std::vector<bool>(cases));
    for (auto& r : gt)
      for (std::size_t c = 0; c < cases; ++c) r[c] = rng() % 2;
    Rows other(n, std::vector<bool>(1 + rng() % 5));
    for (auto& r : other)
      for (std::size_t c = 0; c < r.size(); ++c) r[c] = rng() % 2;
    const auto with_gt = select_best("t", gt, gt);
    const auto with_other = select_best("t", other, gt);
    EXPECT_GE(with_gt.selected_score, with_other.selected_score);
    EXPECT_DOUBLE_EQ(with_gt.baseline_score, with_other.baseline_score);
  }
}

TEST(BestOfN, JudgedEndToEnd) {
  judge::Judge j(testing::quick_judge(8));
  ProgrammingTask task;
  task.task_id = "sum";
  task.source = "fixture";
  task.ground_truth_code = testing::kSumProgram;
  task.ground_truth_tests.cases = {{"2\n1 2\n", "3\n"}, {"0\n", "0\n"}, {"2\n-1 -1\n", "-2\n"}};
  const std::vector<judge::CodeSolution> cands = {
      {"print(3)\n", "python"},
      {testing::kSumProgram, "python"},
      {"import sys\nd = sys.stdin.read().split()\nprint(sum(abs(int(x)) for x in d[1:]))\n", "python"},
  };
  UnitTest generated;
  generated.cases = {{"2\n5 -5\n", "0\n"}, {"1\n1\n", "99\n"}};  // second case is invalid
  const auto r = best_of_n(task, cands, generated, j);
  EXPECT_EQ(r.selector_cases, 1u);
  EXPECT_EQ(r.selected_index, 1u);
  EXPECT_EQ(r.source, "fixture");
  EXPECT_NEAR(r.baseline_score, (1.0 / 3 + 1.0 + 2.0 / 3) / 3, 1e-12);
  // Unfiltered, the invalid case stays but fails everyone, leaving the ranking intact.
  EXPECT_EQ(best_of_n(task, cands, generated, j, false).selector_cases, 2u);
}

TEST(Spearman, Examples) {
  const std::vector<double> x = {1, 2, 3};
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{10, 20, 30}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{3, 2, 1}), -1.0);
  const std::vector<double> tx = {1, 2, 2, 3}, ty = {1, 3, 2, 4};
  EXPECT_NEAR(spearman(tx, ty), oracle_spearman(tx, ty), 1e-12);
  EXPECT_THROW(spearman(x, std::vector<double>{5, 5, 5}), UndefinedCorrelationError);
  EXPECT_THROW(spearman(x, std::vector<double>{1, 2}), Error);
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), Error);
}

TEST(Spearman, MatchesOracleAndProperties) {
  std::mt19937_64 rng(31);
  for (int iter = 0; iter < 1000; ++iter) {
    const std::size_t n = 2 + rng() % 12;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng() % 5);
      y[i] = static_cast<double>(rng() % 7) / 7.0;
    }
    const bool const_x = std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; });
    const bool const_y = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
    if (const_x || const_y) {
      EXPECT_THROW(spearman(x, y), UndefinedCorrelationError);
      continue;
    }
    const double rho = spearman(x, y);
    EXPECT_NEAR(rho, oracle_spearman(x, y), 1e-12);
    EXPECT_GE(rho, -1.0);
    EXPECT_LE(rho, 1.0);
    EXPECT_DOUBLE_EQ(rho, spearman(y, x));
    std::vector<double> tx(n);
    for (std::size_t i = 0; i < n; ++i) tx[i] = std::exp(x[i]) * 3 - 1;
    EXPECT_NEAR(spearman(tx, y), rho, 1e-12);
    EXPECT_NEAR(spearman(x, x), 1.0, 1e-12);
  }
}

TEST(Spearman, TiedValueCount) {
  EXPECT_EQ(tied_values(std::vector<double>{1, 2, 2, 3, 3, 3}), 5u);
  EXPECT_EQ(tied_values(std::vector<double>{1, 2, 3}), 0u);
}

TEST(Fidelity, FromScores) {
  const std::vector<double> a = {0.1, 0.5, 0.9}, b = {0.2, 0.4, 1.0};
  const auto f = fidelity_from_scores("t", a, b);
  ASSERT_TRUE(f.rho);
  EXPECT_DOUBLE_EQ(*f.rho, 1.0);
  EXPECT_EQ(f.n_solutions, 3u);
  const auto u = fidelity_from_scores("t", std::vector<double>{1, 1, 1}, b);
  EXPECT_FALSE(u.rho);
  EXPECT_FALSE(u.note.empty());
}

TEST(Fidelity, EightSolutionFixtureMatchesOracle) {
  judge::Judge j(testing::quick_judge(8));
  ProgrammingTask task;
  task.task_id = "echo";
  task.ground_truth_code = "import sys\nprint(sys.stdin.read().split()[0])\n";
  // Solution k answers correctly exactly for inputs below k (k = 0..7).
  std::vector<judge::CodeSolution> pool;
  for (int k = 0; k < 8; ++k)
    pool.push_back({"import sys\nv = int(sys.stdin.read().split()[0])\nprint(v if v < " + std::to_string(k) +
                        " else -1)\n",
                    "python"});
  for (int v = 0; v < 8; ++v) task.ground_truth_tests.cases.push_back({std::to_string(v), std::to_string(v)});
  UnitTest generated;
  generated.cases = {{"1", "1"}, {"5", "5"}, {"6", "6"}, {"3", "999"}};
  const auto f = fidelity(task, pool, generated, j);
  ASSERT_TRUE(f.rho);
  EXPECT_EQ(f.generated_cases, 3u);
  std::vector<double> gen_scores, gt_scores;
  for (int k = 0; k < 8; ++k) {
    gen_scores.push_back((1.0 * (1 < k) + (5 < k) + (6 < k)) / 3.0);
    gt_scores.push_back(k / 8.0);
  }
  EXPECT_NEAR(*f.rho, oracle_spearman(gen_scores, gt_scores), 1e-12);
  EXPECT_EQ(f.ties_generated, tied_values(gen_scores));

  const auto identity = fidelity(task, pool, task.ground_truth_tests, j);
  ASSERT_TRUE(identity.rho);
  EXPECT_DOUBLE_EQ(*identity.rho, 1.0);

  UnitTest invalid;
  invalid.cases = {{"1", "2"}};
  const auto none = fidelity(task, pool, invalid, j);
  EXPECT_FALSE(none.rho);
  EXPECT_NE(none.note.find("no valid"), std::string::npos);
}

TEST(Report, SingleTaskEqualsItsValuesAndTwoTaskMeans) {
  testing::TempDir dir;
  BestOfNResult a;
  a.task_id = "a";
  a.source = "x";
  a.selected_score = 1.0;
  a.selected_accuracy = true;
  a.baseline_score = 0.5;
  a.baseline_accuracy_rate = 0.25;
  a.delta_score = 0.5;
  a.delta_accuracy = 0.75;
  BestOfNResult b = a;
  b.task_id = "b";
  b.source = "y";
  b.selected_score = 0.4;
  b.selected_accuracy = false;
  b.baseline_score = 0.3;
  b.baseline_accuracy_rate = 0.0;
  b.delta_score = 0.1;
  b.delta_accuracy = 0.0;
  b.unselective = true;
  FidelityResult fa{"a", "x", 0.8, 8, 3, 0, 0, ""}, fb{"b", "y", std::nullopt, 8, 0, 0, 0, "undefined"};

  const std::vector<BestOfNResult> one = {a};
  const auto rows1 = aggregate_report(one, std::vector<FidelityResult>{fa}, dir / "one");
  ASSERT_EQ(rows1.size(), 1u);
  EXPECT_DOUBLE_EQ(rows1[0].score, 1.0);
  EXPECT_DOUBLE_EQ(rows1[0].acc_pct, 100.0);
  EXPECT_DOUBLE_EQ(rows1[0].delta_acc_pp, 75.0);
  EXPECT_DOUBLE_EQ(*rows1[0].mean_rho, 0.8);

  const std::vector<BestOfNResult> two = {a, b};
  const auto rows = aggregate_report(two, std::vector<FidelityResult>{fa, fb}, dir / "two", {true, "h", "0"});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].group, "all");
  EXPECT_EQ(rows[0].n_tasks, 2u);
  EXPECT_DOUBLE_EQ(rows[0].score, 0.7);
  EXPECT_DOUBLE_EQ(rows[0].acc_pct, 50.0);
  EXPECT_DOUBLE_EQ(rows[0].delta_score, 0.3);
  EXPECT_DOUBLE_EQ(rows[0].baseline_score, 0.4);
  EXPECT_DOUBLE_EQ(rows[0].baseline_acc_pct, 12.5);
  EXPECT_EQ(rows[0].unselective, 1u);
  EXPECT_DOUBLE_EQ(*rows[0].mean_rho, 0.8);
  EXPECT_EQ(rows[0].rho_defined, 1u);
  EXPECT_EQ(rows[0].rho_undefined, 1u);
  EXPECT_EQ(rows[1].group, "source:x");
  EXPECT_EQ(rows[2].group, "source:y");

  const auto csv = testing::read_file(dir / "two" / "report.csv");
  EXPECT_NE(csv.find("config_hash=h"), std::string::npos);
  EXPECT_NE(csv.find("baseline=mean-over-N-candidates"), std::string::npos);
  EXPECT_NE(testing::read_file(dir / "two" / "report.txt").find("Delta baseline"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "two" / "fidelity.csv"));

  EXPECT_THROW(aggregate_report({}, {}, dir / "none"), Error);
}

}  // namespace
}  // namespace utrl
