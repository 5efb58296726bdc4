// One PASS/FAIL line per acceptance criterion. Exit status is the failure count.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures/judge_programs.hpp"
#include "fixtures/oracles.hpp"
#include "support.hpp"
#include "utrl/eval.hpp"
#include "utrl/grpo.hpp"
#include "utrl/harness_config.hpp"
#include "utrl/rewards.hpp"
#include "utrl/testparse.hpp"

namespace {

using namespace utrl;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

// Tolerances and budgets, pinned.
constexpr double kExactTol = 1e-12;
constexpr double kAdvantageTol = 1e-9;
constexpr double kDiscRiseMin = 0.15;
constexpr double kCodeTrendRhoMin = 0.8;
constexpr double kCodeRiseMin = 0.10;
constexpr int kCodeSmoothWindow = 5;
constexpr double kAc1BudgetS = 5.0;
constexpr double kAc2BudgetS = 10.0;
constexpr double kAc6BudgetS = 180.0;
constexpr double kAc7BudgetS = 60.0;
constexpr double kAc10BudgetS = 30.0;
constexpr auto kKillSlack = std::chrono::milliseconds(500);

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

// Six codes, five cases; case 2 is invalid. Codes 1, 2, 3 and 5 fail a valid case.
Outcome ac1_discrimination_fixture() {
  Outcome o;
  const auto t0 = Clock::now();
  judge::Judge j(testing::quick_judge(8));
  const judge::CodeSolution gt{testing::kSumProgram, "python"};
  UnitTest ut;
  ut.cases = {{"2\n1 2\n", "3\n"}, {"0\n", "0\n"}, {"1\n5\n", "6\n"}, {"2\n-1 -2\n", "-3\n"}, {"1\n99999\n", "99999\n"}};
  const std::vector<judge::CodeSolution> codes = {
      gt,
      {"print(3)\n", "python"},
      {"import sys\nd = sys.stdin.read().split()\nprint(sum(abs(int(x)) for x in d[1:]))\n", "python"},
      {"import sys\nd = sys.stdin.read().split()\nprint(sum(int(x) for x in d[1:]) if d[0] != '0' else 1)\n", "python"},
      {"import sys\nd = sys.stdin.read().split()\nprint(sum(int(x) for x in d[1:]) + 0)\n", "python"},
      {"import sys\nd = sys.stdin.read().split()\nprint(sum(int(x) % 10000 for x in d[1:]))\n", "python"},
  };
  const auto valid = rewards::filter_valid(ut, gt, j);
  o.require(valid.size() == 4, "valid cases " + std::to_string(valid.size()) + " != 4");
  const auto d = rewards::discrimination_reward(valid, codes, j);
  const std::vector<bool> expect = {false, true, true, true, false, true};
  o.require(d.detected == expect, "detected vector mismatch");
  o.require(std::abs(d.reward - 4.0 / 6.0) <= kExactTol, "r_disc " + fmt(d.reward) + " != 4/6");
  const double s = seconds_since(t0);
  o.require(s < kAc1BudgetS, "runtime " + fmt(s) + "s");
  o.detail = (o.pass ? "r_disc=" + fmt(d.reward) + " " : "") + o.detail + " " + fmt(s) + "s";
  return o;
}

Outcome ac2_discrimination_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  int mismatches = 0;
  for (int iter = 0; iter < 1000; ++iter) {
    const std::size_t rows = 1 + rng() % 12, cols = rng() % 10;
    const double p = static_cast<double>(rng() % 100) / 100.0;
    std::bernoulli_distribution pass(p);
    rewards::BoolGrid g(rows, std::vector<bool>(cols));
    for (auto& r : g)
      for (std::size_t c = 0; c < cols; ++c) r[c] = pass(rng);
    if (rewards::discrimination_reward(g).reward != testing::brute_force_disc(g)) ++mismatches;
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " mismatches");
  const double s = seconds_since(t0);
  o.require(s < kAc2BudgetS, "runtime " + fmt(s) + "s");
  o.detail = (o.pass ? "1000 matrices exact " : o.detail + " ") + fmt(s) + "s";
  return o;
}

Outcome ac3_validity() {
  Outcome o;
  rewards::RewardConfig on, off;
  off.clipping_enabled = false;
  o.require(rewards::validity_reward(12, 12, on) == 1.0, "12/12");
  o.require(rewards::validity_reward(3, 5, on) == 0.25, "3 of 5 clipped");
  o.require(rewards::validity_reward(3, 5, off) == 0.6, "3 of 5 unclipped");
  o.require(rewards::validity_reward(0, 0, on) == 0.0 && rewards::validity_reward(0, 0, off) == 0.0, "empty");
  std::mt19937_64 rng(7);
  int disagree = 0;
  for (int iter = 0; iter < 500; ++iter) {
    const std::size_t n = on.tau + rng() % 50, v = rng() % (n + 1);
    if (rewards::validity_reward(v, n, on) != rewards::validity_reward(v, n, off)) ++disagree;
  }
  o.require(disagree == 0, std::to_string(disagree) + " clip disagreements with N >= tau");
  if (o.pass) o.detail = "examples exact; 500 N>=tau cases agree";
  return o;
}

Outcome ac4_advantages() {
  Outcome o;
  const std::vector<double> r = {1, 0, 1, 0};
  const auto a = grpo::group_advantages(r);
  const std::vector<double> want = {1, -1, 1, -1};
  for (std::size_t i = 0; i < 4; ++i)
    o.require(std::abs(a.advantages[i] - want[i]) <= kAdvantageTol, "[1,0,1,0] index " + std::to_string(i));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.0, 3.0);
  double worst_sum = 0, worst_var = 0;
  for (int iter = 0; iter < 1000; ++iter) {
    std::vector<double> g(2 + rng() % 30);
    for (auto& x : g) x = nd(rng);
    const auto s = grpo::group_advantages(g);
    if (s.degenerate) continue;
    double sum = 0, sq = 0;
    for (double x : s.advantages) {
      sum += x;
      sq += x * x;
    }
    worst_sum = std::max(worst_sum, std::abs(sum));
    worst_var = std::max(worst_var, std::abs(sq / static_cast<double>(g.size()) - 1.0));
  }
  o.require(worst_sum <= 1e-9, "sum " + fmt(worst_sum));
  o.require(worst_var <= 1e-9, "variance " + fmt(worst_var));
  const std::vector<double> flat = {0.3, 0.3, 0.3};
  const auto d = grpo::group_advantages(flat);
  o.require(d.degenerate && std::all_of(d.advantages.begin(), d.advantages.end(), [](double x) { return x == 0.0; }),
            "constant group not degenerate zeros");
  if (o.pass) o.detail = "max|sum|=" + fmt(worst_sum) + " max|var-1|=" + fmt(worst_var);
  return o;
}

Outcome ac5_surrogate() {
  Outcome o;
  auto one = [](double ratio, double adv) {
    const double r[] = {ratio}, a[] = {adv};
    return grpo::clipped_surrogate(r, a, 0.2);
  };
  // Ratio 1 is the plain mean advantage.
  const double r1[] = {1, 1, 1}, a1[] = {0.5, -1.0, 2.0};
  o.require(std::abs(grpo::clipped_surrogate(r1, a1, 0.2) - 0.5) <= kExactTol, "ratio 1");
  o.require(std::abs(one(2.0, 1.0) - 1.2) <= kExactTol, "ratio 2, A=1 -> " + fmt(one(2.0, 1.0)));
  // min(0.5 * -1, 0.8 * -1) = -0.8: the pessimistic branch binds.
  o.require(std::abs(one(0.5, -1.0) + 0.8) <= kExactTol, "ratio 0.5, A=-1 -> " + fmt(one(0.5, -1.0)));
  if (o.pass) o.detail = "1.0->0.5, 2.0->1.2, 0.5->-0.8";
  return o;
}

struct CurveRow {
  int iteration = 0;
  std::string phase;
  int step = 0;
  double r_disc = 0, r_code = 0;
};

std::vector<CurveRow> read_curves(const std::filesystem::path& path) {
  std::istringstream in(testing::read_file(path));
  std::string line;
  std::vector<std::string> cols;
  std::vector<CurveRow> rows;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (cols.empty()) {
      cols = split(line);
      continue;
    }
    const auto cells = split(line);
    auto get = [&](const std::string& name) {
      const auto it = std::find(cols.begin(), cols.end(), name);
      if (it == cols.end()) throw std::runtime_error("curve column missing: " + name);
      return cells.at(static_cast<std::size_t>(it - cols.begin()));
    };
    CurveRow r;
    r.iteration = std::stoi(get("iteration"));
    r.phase = get("phase");
    r.step = std::stoi(get("step"));
    // A phase leaves the other phase's columns empty.
    auto num = [&](const std::string& name) {
      const auto v = get(name);
      return v.empty() ? std::nan("") : std::stod(v);
    };
    r.r_disc = num("mean_r_disc");
    r.r_code = num("mean_r_code");
    rows.push_back(r);
  }
  return rows;
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  double s = 0;
  for (std::size_t i = from; i < to; ++i) s += v[i];
  return s / static_cast<double>(to - from);
}

// The toy profile through the CLI, curves read back from disk.
Outcome ac6_toy_learning() {
  Outcome o;
  const auto t0 = Clock::now();
  testing::TempDir dir;
  const auto run = testing::run_cli("toy-demo --seed 0 --out " + q(dir / "run"));
  if (run.status != 0) {
    o.require(false, "toy-demo exited " + std::to_string(run.status));
    return o;
  }
  const auto rows = read_curves(dir / "run" / "curves" / "rewards.csv");
  std::vector<double> disc1, code1;
  double disc_iter2_first = -1;
  for (const auto& r : rows) {
    if (r.iteration == 1 && r.phase == "ut") disc1.push_back(r.r_disc);
    if (r.iteration == 1 && r.phase == "code") code1.push_back(r.r_code);
    if (r.iteration == 2 && r.phase == "ut" && r.step == 0) disc_iter2_first = r.r_disc;
  }
  if (disc1.size() < 6 || code1.size() < 2 * kCodeSmoothWindow || disc_iter2_first < 0) {
    o.require(false, "curves too short");
    return o;
  }
  const double rise = mean_of(disc1, disc1.size() - 3, disc1.size()) - mean_of(disc1, 0, 3);
  o.require(rise >= kDiscRiseMin, "r_disc rise " + fmt(rise) + " < " + fmt(kDiscRiseMin));
  o.require(disc_iter2_first < disc1.back(),
            "r_disc after code phase " + fmt(disc_iter2_first) + " not below " + fmt(disc1.back()));

  std::vector<double> smooth, steps;
  for (std::size_t i = kCodeSmoothWindow - 1; i < code1.size(); ++i) {
    smooth.push_back(mean_of(code1, i + 1 - kCodeSmoothWindow, i + 1));
    steps.push_back(static_cast<double>(i));
  }
  const double rho = eval::spearman(steps, smooth);
  const double code_rise = smooth.back() - smooth.front();
  o.require(rho >= kCodeTrendRhoMin, "code trend rho " + fmt(rho));
  o.require(code_rise >= kCodeRiseMin, "code rise " + fmt(code_rise));
  const double s = seconds_since(t0);
  o.require(s < kAc6BudgetS, "runtime " + fmt(s) + "s");
  std::string d = "disc rise=" + fmt(rise) + " disc " + fmt(disc1.back()) + "->" + fmt(disc_iter2_first) +
                  " code rho=" + fmt(rho) + " code rise=" + fmt(code_rise) + " " + fmt(s) + "s";
  o.detail = o.pass ? d : o.detail + " | " + d;
  return o;
}

Outcome ac7_judge() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto fixtures = testing::judge_fixtures();
  for (int round = 0; round < 2; ++round) {
    judge::Judge j(testing::fixture_judge_options(8));
    std::vector<judge::CheckJob> jobs;
    for (const auto& f : fixtures) jobs.push_back({&f.program, &f.test});
    const auto results = j.run_batch(jobs);
    for (std::size_t i = 0; i < fixtures.size(); ++i)
      if (results[i].verdict != fixtures[i].expected)
        o.require(false, "round " + std::to_string(round) + " " + fixtures[i].name + " -> " +
                             std::string(judge::to_string(results[i].verdict)));
  }

  auto opts = testing::fixture_judge_options(1);
  opts.limits.wall_time = std::chrono::milliseconds(1000);
  judge::Judge single(opts);
  const auto k0 = Clock::now();
  const auto loop = single.execute({"while True:\n    pass\n", "python"}, "");
  const auto took = Clock::now() - k0;
  o.require(loop.verdict == judge::Verdict::kTimeout, "infinite loop verdict");
  o.require(took <= opts.limits.wall_time + kKillSlack,
            "kill took " + std::to_string(std::chrono::duration_cast<std::chrono::milliseconds>(took).count()) + "ms");

  std::vector<judge::CodeSolution> programs;
  std::vector<TestCase> cases;
  for (const auto& f : fixtures)
    if (f.expected != judge::Verdict::kTimeout && f.expected != judge::Verdict::kResourceExceeded)
      programs.push_back(f.program);
  for (int i = -3; i < 5; ++i) cases.push_back({"1\n" + std::to_string(i) + "\n", std::to_string(i) + "\n"});
  cases.push_back(fixtures[0].test);
  judge::Judge p1(testing::fixture_judge_options(1)), p8(testing::fixture_judge_options(8));
  o.require(p1.evaluate_matrix(programs, cases).bits == p8.evaluate_matrix(programs, cases).bits,
            "parallelism 1 vs 8 differ");
  const double s = seconds_since(t0);
  o.require(s < kAc7BudgetS, "runtime " + fmt(s) + "s");
  o.detail = (o.pass ? std::to_string(fixtures.size()) + " fixtures x2 " : o.detail + " ") + fmt(s) + "s";
  return o;
}

Outcome ac8_spearman() {
  Outcome o;
  std::mt19937_64 rng(8);
  double worst = 0;
  int tested = 0;
  while (tested < 1000) {
    const std::size_t n = 2 + rng() % 20;
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = static_cast<double>(rng() % 6);
    for (auto& v : y) v = static_cast<double>(rng() % 1000) / 999.0;
    const auto constant = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [&](double e) { return e == v[0]; });
    };
    if (constant(x) || constant(y)) continue;
    worst = std::max(worst, std::abs(eval::spearman(x, y) - testing::oracle_spearman(x, y)));
    ++tested;
  }
  o.require(worst <= kExactTol, "max oracle error " + fmt(worst));
  std::vector<double> up(17), down(17);
  for (int i = 0; i < 17; ++i) {
    up[i] = i * 0.37;
    down[i] = -i * 2.0;
  }
  o.require(eval::spearman(up, up) == 1.0, "identity");
  o.require(eval::spearman(up, down) == -1.0, "reversal");
  if (o.pass) o.detail = "max oracle error=" + fmt(worst);
  return o;
}

Outcome ac9_gt_upper_bound() {
  Outcome o;
  std::mt19937_64 rng(9);
  int violations = 0;
  for (int iter = 0; iter < 500; ++iter) {
    const std::size_t n = 2 + rng() % 10, cases = 1 + rng() % 8;
    std::vector<std::vector<bool>> gt(n, std::vector<bool>(cases)), other(n, std::vector<bool>(rng() % 6));
    for (auto& r : gt)
      for (std::size_t c = 0; c < cases; ++c) r[c] = rng() % 3 != 0;
    for (auto& r : other)
      for (std::size_t c = 0; c < r.size(); ++c) r[c] = rng() % 2;
    if (eval::select_best("t", gt, gt).selected_score < eval::select_best("t", other, gt).selected_score) ++violations;
  }
  // Judged fixture: ground truth as selector versus a weak generated test.
  judge::Judge j(testing::quick_judge(8));
  ProgrammingTask task;
  task.task_id = "sum";
  task.ground_truth_code = testing::kSumProgram;
  task.ground_truth_tests.cases = {{"2\n1 2\n", "3\n"}, {"0\n", "0\n"}, {"2\n-1 -1\n", "-2\n"}, {"1\n7\n", "7\n"}};
  const std::vector<judge::CodeSolution> cands = {
      {"print(3)\n", "python"},
      {"import sys\nd = sys.stdin.read().split()\nprint(sum(abs(int(x)) for x in d[1:]))\n", "python"},
      {testing::kSumProgram, "python"},
  };
  UnitTest weak;
  weak.cases = {{"2\n1 2\n", "3\n"}};
  const auto with_gt = eval::best_of_n(task, cands, task.ground_truth_tests, j);
  const auto with_weak = eval::best_of_n(task, cands, weak, j);
  if (with_gt.selected_score < with_weak.selected_score) ++violations;
  o.require(with_gt.selected_score == 1.0, "judged GT selection score " + fmt(with_gt.selected_score));
  o.require(violations == 0, std::to_string(violations) + " violations");
  if (o.pass) o.detail = "501 fixtures; judged GT=" + fmt(with_gt.selected_score) + " weak=" + fmt(with_weak.selected_score);
  return o;
}

std::string random_section(std::mt19937_64& rng, bool allow_empty) {
  static const char* atoms[] = {"0", "17", "-4", "abc", "x y z", "3 1 2", "  lead", "mid  gap", "Input", "Output",
                                "`", "``", "a`b", "<b>", "#", "\t9"};
  const std::size_t lines = allow_empty ? rng() % 5 : 1 + rng() % 4;
  std::vector<std::string> out;
  for (std::size_t l = 0; l < lines; ++l) {
    // Interior blank lines only; the parser trims blank edges by design.
    if (l > 0 && l + 1 < lines && rng() % 5 == 0) {
      out.push_back("");
      continue;
    }
    std::string line;
    const std::size_t n = 1 + rng() % 3;
    for (std::size_t k = 0; k < n; ++k) line += (k ? " " : "") + std::string(atoms[rng() % std::size(atoms)]);
    out.push_back(line);
  }
  std::string s;
  for (std::size_t l = 0; l < out.size(); ++l) s += (l ? "\n" : "") + out[l];
  return s;
}

Outcome ac10_parser() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(10);
  int mismatches = 0;
  for (int iter = 0; iter < 200; ++iter) {
    UnitTest ut;
    const std::size_t n = 1 + rng() % 14;
    const bool reasoning = rng() % 2;
    for (std::size_t i = 0; i < n; ++i) {
      ut.cases.push_back({random_section(rng, true), random_section(rng, false)});
      if (reasoning) ut.reasoning.push_back("case " + std::to_string(i) + ": " + random_section(rng, false));
    }
    if (testparse::parse_unit_test(testparse::format_unit_test(ut)).unit_test != ut) ++mismatches;
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " round-trip mismatches");
  int inconsistent = 0;
  for (int iter = 0; iter < 10000; ++iter) {
    std::string bytes(rng() % 2048, '\0');
    for (auto& ch : bytes) {
      const auto v = rng() % 32;
      ch = v < 3 ? '`' : v < 6 ? '\n' : static_cast<char>(rng() & 0xff);
    }
    const auto r = testparse::parse_unit_test(bytes);
    const auto c = testparse::parse_code(bytes);
    if (r.report.parsed_count != r.unit_test.size() || r.report.raw_length != bytes.size() ||
        c.report.raw_length != bytes.size())
      ++inconsistent;
  }
  o.require(inconsistent == 0, std::to_string(inconsistent) + " inconsistent reports");
  const double s = seconds_since(t0);
  o.require(s < kAc10BudgetS, "runtime " + fmt(s) + "s");
  o.detail = (o.pass ? "200 round trips, 10000 random inputs " : o.detail + " ") + fmt(s) + "s";
  return o;
}

// Record a toy run into a cassette, replay it twice, compare artifacts byte for byte.
Outcome ac11_replay() {
  Outcome o;
  testing::TempDir dir;
  auto base = cfg::config_to_json(cfg::toy_profile());
  base["loop"]["ut_phase"]["max_steps"] = 4;
  base["loop"]["code_phase"]["max_steps"] = 4;
  const json toy = {{"kind", "toy"}, {"step_size", 0.01}};
  auto rec = base;
  rec["backends"] = {{"ut", {{"kind", "record"}, {"cassette", "ut.jsonl"}, {"inner", toy}}},
                     {"code", {{"kind", "record"}, {"cassette", "code.jsonl"}, {"inner", toy}}}};
  auto rep = base;
  rep["backends"] = {{"ut", {{"kind", "replay"}, {"cassette", "ut.jsonl"}}},
                     {"code", {{"kind", "replay"}, {"cassette", "code.jsonl"}}}};
  testing::write_file(dir / "record.json", rec.dump(2));
  testing::write_file(dir / "replay.json", rep.dump(2));
  const std::string err = (dir / "stderr.txt").string();
  if (testing::run_cli("loop --config " + q(dir / "record.json") + " --out " + q(dir / "rec"), err).status != 0 ||
      testing::run_cli("loop --config " + q(dir / "replay.json") + " --out " + q(dir / "a"), err).status != 0 ||
      testing::run_cli("loop --config " + q(dir / "replay.json") + " --out " + q(dir / "b"), err).status != 0) {
    o.require(false, "loop failed: " + testing::read_file(dir / "stderr.txt"));
    return o;
  }
  std::vector<std::string> files = {"curves/rewards.csv"};
  for (int it = 1; it <= 2; ++it)
    for (const char* ph : {"ut", "code"})
      files.push_back("records/phase-" + std::string(ph) + "-iter" + std::to_string(it) + ".jsonl");
  std::size_t bytes = 0;
  for (const auto& f : files) {
    const auto a = testing::read_file(dir / "a" / f);
    o.require(!a.empty(), f + " empty");
    o.require(a == testing::read_file(dir / "b" / f), f + " differs between replays");
    // The recorded run differs only in its config header line.
    auto body = [](const std::string& s) { return s.substr(std::min(s.size(), s.find('\n') + 1)); };
    o.require(body(a) == body(testing::read_file(dir / "rec" / f)), f + " replay differs from recording");
    bytes += a.size();
  }
  if (o.pass) o.detail = std::to_string(files.size()) + " artifacts, " + std::to_string(bytes) + " bytes identical";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"AC1", ac1_discrimination_fixture}, {"AC2", ac2_discrimination_oracle}, {"AC3", ac3_validity},
      {"AC4", ac4_advantages},             {"AC5", ac5_surrogate},             {"AC6", ac6_toy_learning},
      {"AC7", ac7_judge},                  {"AC8", ac8_spearman},              {"AC9", ac9_gt_upper_bound},
      {"AC10", ac10_parser},               {"AC11", ac11_replay},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    failures += !o.pass;
    std::cout << name << ' ' << (o.pass ? "PASS" : "FAIL") << ' ' << o.detail << std::endl;
  }
  return failures;
}
