#include "utrl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "utrl/errors.hpp"
#include "utrl/rewards.hpp"

namespace utrl::eval {

namespace fs = std::filesystem;

double score_of_row(const std::vector<bool>& passes) {
  if (passes.empty()) throw Error("code_score: empty ground-truth test");
  const auto passed = std::count(passes.begin(), passes.end(), true);
  return static_cast<double>(passed) / static_cast<double>(passes.size());
}

double code_score(const judge::CodeSolution& code, const UnitTest& gt_ut, const judge::Judge& judge) {
  const judge::CodeSolution programs[] = {code};
  return score_of_row(judge.evaluate_matrix(programs, gt_ut.cases).bits[0]);
}

bool code_accuracy(const judge::CodeSolution& code, const UnitTest& gt_ut, const judge::Judge& judge) {
  return code_score(code, gt_ut, judge) == 1.0;
}

BestOfNResult select_best(std::string task_id, const std::vector<std::vector<bool>>& selector_passes,
                          const std::vector<std::vector<bool>>& gt_passes) {
  if (gt_passes.empty()) throw Error("best_of_n: no candidates");
  if (selector_passes.size() != gt_passes.size()) throw Error("best_of_n: selector and ground-truth rows differ");
  BestOfNResult r;
  r.task_id = std::move(task_id);
  r.n_candidates = gt_passes.size();
  r.selector_cases = selector_passes[0].size();
  r.unselective = r.selector_cases == 0;
  if (!r.unselective) {
    double best = -1.0;
    for (std::size_t i = 0; i < selector_passes.size(); ++i) {
      const double s = score_of_row(selector_passes[i]);
      if (s > best) {  // strict: lowest index wins ties
        best = s;
        r.selected_index = i;
      }
    }
  }
  double score_sum = 0.0;
  std::size_t accurate = 0;
  for (const auto& row : gt_passes) {
    const double s = score_of_row(row);
    score_sum += s;
    accurate += s == 1.0 ? 1 : 0;
  }
  const auto n = static_cast<double>(gt_passes.size());
  r.baseline_score = score_sum / n;
  r.baseline_accuracy_rate = static_cast<double>(accurate) / n;
  r.selected_score = score_of_row(gt_passes[r.selected_index]);
  r.selected_accuracy = r.selected_score == 1.0;
  r.delta_score = r.selected_score - r.baseline_score;
  r.delta_accuracy = (r.selected_accuracy ? 1.0 : 0.0) - r.baseline_accuracy_rate;
  return r;
}

BestOfNResult best_of_n(const ProgrammingTask& task, std::span<const judge::CodeSolution> candidates,
                        const UnitTest& generated_ut, const judge::Judge& judge, bool filter_selector) {
  if (candidates.empty()) throw Error("best_of_n: no candidates");
  const judge::CodeSolution gt{task.ground_truth_code, candidates[0].language_tag};
  const UnitTest selector = filter_selector ? rewards::filter_valid(generated_ut, gt, judge) : generated_ut;
  const auto sel = judge.evaluate_matrix(candidates, selector.cases);
  const auto gtm = judge.evaluate_matrix(candidates, task.ground_truth_tests.cases);
  std::vector<std::vector<bool>> sel_rows = sel.bits;
  if (selector.empty()) sel_rows.assign(candidates.size(), {});
  auto r = select_best(task.task_id, sel_rows, gtm.bits);
  r.source = task.source.value_or("");
  return r;
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

bool constant(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; });
}

}  // namespace

std::size_t tied_values(std::span<const double> x) {
  std::map<double, std::size_t> counts;
  for (double v : x) ++counts[v];
  std::size_t n = 0;
  for (const auto& [v, c] : counts)
    if (c > 1) n += c;
  return n;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  if (x.size() < 2) throw Error("spearman: need at least 2 observations");
  if (constant(x) || constant(y)) throw UndefinedCorrelationError("spearman: constant input");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

FidelityResult fidelity_from_scores(std::string task_id, std::span<const double> generated_scores,
                                    std::span<const double> gt_scores) {
  if (generated_scores.size() != gt_scores.size()) throw Error("fidelity: score vectors differ in length");
  if (generated_scores.size() < 2) throw Error("fidelity: solution pool needs at least 2 solutions");
  FidelityResult r;
  r.task_id = std::move(task_id);
  r.n_solutions = gt_scores.size();
  r.ties_generated = tied_values(generated_scores);
  r.ties_ground_truth = tied_values(gt_scores);
  try {
    r.rho = spearman(generated_scores, gt_scores);
  } catch (const UndefinedCorrelationError&) {
    r.note = constant(generated_scores) ? "undefined: generated scores constant"
                                        : "undefined: ground-truth scores constant";
  }
  return r;
}

FidelityResult fidelity(const ProgrammingTask& task, std::span<const judge::CodeSolution> pool,
                        const UnitTest& generated_ut, const judge::Judge& judge, bool filter_valid) {
  if (pool.size() < 2) throw Error("fidelity: solution pool needs at least 2 solutions");
  const judge::CodeSolution gt{task.ground_truth_code, pool[0].language_tag};
  const UnitTest ut = filter_valid ? rewards::filter_valid(generated_ut, gt, judge) : generated_ut;
  FidelityResult r;
  if (ut.empty()) {
    r.task_id = task.task_id;
    r.n_solutions = pool.size();
    r.note = "undefined: no valid generated cases";
  } else {
    const auto a = judge.evaluate_matrix(pool, ut.cases);
    const auto b = judge.evaluate_matrix(pool, task.ground_truth_tests.cases);
    std::vector<double> sa, sb;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      sa.push_back(score_of_row(a.bits[i]));
      sb.push_back(score_of_row(b.bits[i]));
    }
    r = fidelity_from_scores(task.task_id, sa, sb);
  }
  r.generated_cases = ut.size();
  r.source = task.source.value_or("");
  return r;
}

namespace {

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

AggregateRow aggregate(const std::string& group, const std::vector<const BestOfNResult*>& best,
                       const std::vector<const FidelityResult*>& fid) {
  AggregateRow row;
  row.group = group;
  row.n_tasks = best.size();
  if (!best.empty()) {
    const auto n = static_cast<double>(best.size());
    for (const auto* b : best) {
      row.score += b->selected_score;
      row.acc_pct += b->selected_accuracy ? 1.0 : 0.0;
      row.delta_score += b->delta_score;
      row.delta_acc_pp += b->delta_accuracy;
      row.baseline_score += b->baseline_score;
      row.baseline_acc_pct += b->baseline_accuracy_rate;
      row.unselective += b->unselective ? 1 : 0;
    }
    row.score /= n;
    row.acc_pct *= 100.0 / n;
    row.delta_score /= n;
    row.delta_acc_pp *= 100.0 / n;
    row.baseline_score /= n;
    row.baseline_acc_pct *= 100.0 / n;
  }
  double rho_sum = 0.0;
  for (const auto* f : fid) {
    if (f->rho) {
      rho_sum += *f->rho;
      ++row.rho_defined;
    } else {
      ++row.rho_undefined;
    }
  }
  if (row.rho_defined) row.mean_rho = rho_sum / static_cast<double>(row.rho_defined);
  return row;
}

}  // namespace

std::vector<AggregateRow> aggregate_report(std::span<const BestOfNResult> best, std::span<const FidelityResult> fid,
                                           const fs::path& out_dir, const ReportOptions& options) {
  if (best.empty() && fid.empty()) throw Error("aggregate_report: no results");
  std::vector<std::string> groups = {"all"};
  std::map<std::string, std::pair<std::vector<const BestOfNResult*>, std::vector<const FidelityResult*>>> by_group;
  for (const auto& b : best) {
    by_group["all"].first.push_back(&b);
    if (options.by_source) by_group["source:" + (b.source.empty() ? "unknown" : b.source)].first.push_back(&b);
  }
  for (const auto& f : fid) {
    by_group["all"].second.push_back(&f);
    if (options.by_source) by_group["source:" + (f.source.empty() ? "unknown" : f.source)].second.push_back(&f);
  }
  for (const auto& [g, v] : by_group)
    if (g != "all") groups.push_back(g);

  std::vector<AggregateRow> rows;
  for (const auto& g : groups) rows.push_back(aggregate(g, by_group[g].first, by_group[g].second));

  fs::create_directories(out_dir);
  const std::string provenance = "config_hash=" + options.config_hash + " seed=" + options.seed;
  {
    std::ofstream csv(out_dir / "report.csv", std::ios::binary | std::ios::trunc);
    csv << "# " << provenance << " baseline=mean-over-N-candidates\n";
    csv << "group,n_tasks,score,acc_pct,delta_score,delta_acc_pp,baseline_score,baseline_acc_pct,unselective,"
           "mean_rho,rho_defined,rho_undefined\n";
    for (const auto& r : rows) {
      csv << r.group << ',' << r.n_tasks << ',' << fmt(r.score, 6) << ',' << fmt(r.acc_pct, 4) << ','
          << fmt(r.delta_score, 6) << ',' << fmt(r.delta_acc_pp, 4) << ',' << fmt(r.baseline_score, 6) << ','
          << fmt(r.baseline_acc_pct, 4) << ',' << r.unselective << ',' << (r.mean_rho ? fmt(*r.mean_rho, 6) : "")
          << ',' << r.rho_defined << ',' << r.rho_undefined << '\n';
    }
  }
  {
    std::ofstream txt(out_dir / "report.txt", std::ios::binary | std::ios::trunc);
    txt << "utrl evaluation report (" << provenance << ")\n";
    txt << "Delta baseline: mean over the same N candidates (expected single-sample outcome).\n\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-24s %7s %8s %8s %9s %9s %5s %9s\n", "group", "tasks", "Score", "Acc%",
                  "dScore", "dAcc%p", "unsel", "rho");
    txt << line;
    for (const auto& r : rows) {
      std::snprintf(line, sizeof line, "%-24s %7zu %8.4f %8.2f %+9.4f %+9.2f %5zu %9s\n", r.group.c_str(), r.n_tasks,
                    r.score, r.acc_pct, r.delta_score, r.delta_acc_pp, r.unselective,
                    r.mean_rho ? fmt(*r.mean_rho).c_str() : "n/a");
      txt << line;
    }
    if (!fid.empty()) {
      txt << "\nFidelity: " << rows[0].rho_defined << " defined, " << rows[0].rho_undefined
          << " undefined (constant score vectors, excluded from the mean).\n";
    }
  }
  {
    std::ofstream csv(out_dir / "fidelity.csv", std::ios::binary | std::ios::trunc);
    csv << "# " << provenance << "\n";
    csv << "task_id,source,rho,n_solutions,generated_cases,ties_generated,ties_ground_truth,note\n";
    for (const auto& f : fid) {
      csv << f.task_id << ',' << f.source << ',' << (f.rho ? fmt(*f.rho, 6) : "") << ',' << f.n_solutions << ','
          << f.generated_cases << ',' << f.ties_generated << ',' << f.ties_ground_truth << ',' << f.note << '\n';
    }
  }
  return rows;
}

}  // namespace utrl::eval
