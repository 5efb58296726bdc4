// utrl: command-line front end for every pipeline stage.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "utrl/corpus.hpp"
#include "utrl/errors.hpp"
#include "utrl/eval.hpp"
#include "utrl/harness_config.hpp"
#include "utrl/judge.hpp"
#include "utrl/orchestrator.hpp"
#include "utrl/rewards.hpp"
#include "utrl/testparse.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace utrl;

namespace {

void log_line(const std::string& level, const std::string& msg, json fields = json::object()) {
  fields["level"] = level;
  fields["msg"] = msg;
  std::cerr << fields.dump() << '\n';
}

std::string slurp(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// File-system-safe form of a task id: every byte outside [A-Za-z0-9._-] becomes '_'.
std::string safe_name(const std::string& id) {
  std::string out = id;
  for (char& ch : out) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '_' || ch == '-';
    if (!ok) ch = '_';
  }
  return out;
}

std::string language_for(const fs::path& file) {
  const auto ext = file.extension().string();
  if (ext == ".sh") return "sh";
  return "python";
}

std::vector<judge::CodeSolution> load_code_dir(const fs::path& dir, std::size_t limit) {
  std::vector<fs::path> files;
  if (fs::is_directory(dir))
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.size() > limit) files.resize(limit);
  std::vector<judge::CodeSolution> out;
  for (const auto& f : files) out.push_back({slurp(f.string()), language_for(f)});
  return out;
}

/// A generated unit test file: raw completion text, or a JSON test list when
/// the extension is .json.
UnitTest load_unit_test(const fs::path& file) {
  const std::string text = slurp(file.string());
  if (file.extension() == ".json") return unit_test_from_json(json::parse(text));
  return testparse::parse_unit_test(text).unit_test;
}

std::optional<fs::path> find_ut(const fs::path& dir, const std::string& task_id) {
  for (const char* ext : {".txt", ".json", ".md"}) {
    const auto p = dir / (safe_name(task_id) + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

cfg::HarnessConfig config_or_default(const std::string& path) {
  return path.empty() ? cfg::default_config() : cfg::load_config(path);
}

json outcome_json(const judge::ExecutionOutcome& o) {
  return {{"verdict", judge::to_string(o.verdict)}, {"stdout", o.stdout_text},  {"stderr", o.stderr_text},
          {"wall_time_ms", o.wall_time_ms},         {"exit_status", o.exit_status}, {"signaled", o.signaled},
          {"stdout_truncated", o.stdout_truncated}, {"diagnostic", o.diagnostic}};
}

json report_json(const testparse::ParseReport& r) {
  json dropped = json::array();
  for (const auto& d : r.dropped_blocks) dropped.push_back({{"block_index", d.block_index}, {"reason", d.reason}});
  return {{"parsed_count", r.parsed_count}, {"dropped_blocks", dropped}, {"raw_length", r.raw_length}};
}

json best_json(const eval::BestOfNResult& r) {
  return {{"task_id", r.task_id},
          {"source", r.source},
          {"n_candidates", r.n_candidates},
          {"selector_cases", r.selector_cases},
          {"selected_index", r.selected_index},
          {"selected_score", r.selected_score},
          {"selected_accuracy", r.selected_accuracy},
          {"baseline_score", r.baseline_score},
          {"baseline_accuracy_rate", r.baseline_accuracy_rate},
          {"delta_score", r.delta_score},
          {"delta_accuracy", r.delta_accuracy},
          {"unselective", r.unselective}};
}

eval::BestOfNResult best_from_json(const json& j) {
  eval::BestOfNResult r;
  r.task_id = j.at("task_id");
  r.source = j.value("source", "");
  r.n_candidates = j.at("n_candidates");
  r.selector_cases = j.at("selector_cases");
  r.selected_index = j.at("selected_index");
  r.selected_score = j.at("selected_score");
  r.selected_accuracy = j.at("selected_accuracy");
  r.baseline_score = j.at("baseline_score");
  r.baseline_accuracy_rate = j.at("baseline_accuracy_rate");
  r.delta_score = j.at("delta_score");
  r.delta_accuracy = j.at("delta_accuracy");
  r.unselective = j.at("unselective");
  return r;
}

json fid_json(const eval::FidelityResult& r) {
  return {{"task_id", r.task_id},
          {"source", r.source},
          {"rho", r.rho ? json(*r.rho) : json(nullptr)},
          {"n_solutions", r.n_solutions},
          {"generated_cases", r.generated_cases},
          {"ties_generated", r.ties_generated},
          {"ties_ground_truth", r.ties_ground_truth},
          {"note", r.note}};
}

eval::FidelityResult fid_from_json(const json& j) {
  eval::FidelityResult r;
  r.task_id = j.at("task_id");
  r.source = j.value("source", "");
  if (!j.at("rho").is_null()) r.rho = j.at("rho").get<double>();
  r.n_solutions = j.at("n_solutions");
  r.generated_cases = j.at("generated_cases");
  r.ties_generated = j.at("ties_generated");
  r.ties_ground_truth = j.at("ties_ground_truth");
  r.note = j.at("note");
  return r;
}

template <typename T, typename F>
std::vector<T> read_jsonl(const std::string& path, F&& parse) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::vector<T> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') out.push_back(parse(json::parse(line)));
  return out;
}

void print_curves(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::cout << "iter phase step  reward   r_disc   r_valid  r_code\n";
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("iteration,", 0) == 0) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    f.resize(13);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%4s %-5s %4s  %-8s %-8s %-8s %-8s\n", f[0].c_str(), f[1].c_str(), f[2].c_str(),
                  f[6].c_str(), f[7].c_str(), f[8].c_str(), f[9].c_str());
    std::cout << buf;
  }
}

int run_loop_command(const cfg::HarnessConfig& config, const fs::path& dir, bool resume, int stop_after, bool verbose,
                     const fs::path& base_dir) {
  const auto tasks = cfg::load_corpus(config, base_dir);
  judge::Judge judge(config.judge);
  orch::Orchestrator orchestrator(config.loop, tasks, cfg::make_backends(config, base_dir), judge);
  orch::RunOptions opts;
  opts.run_dir = dir;
  opts.config_json = cfg::config_to_json(config);
  opts.resume = resume;
  opts.stop_after_steps = stop_after;
  opts.verbose = verbose;
  log_line("info", resume ? "resuming loop" : "starting loop",
           {{"run_dir", dir.string()}, {"tasks", tasks.size()}, {"config_hash", cfg::config_hash(config)}});
  const auto summary = orch::run_loop(orchestrator, opts);
  log_line("info", summary.completed ? "loop complete" : "loop stopped early",
           {{"steps", summary.steps_run}, {"records", summary.records_written}, {"executions", judge.executions()},
            {"cache_hits", judge.cache_hits()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"utrl: unit-test generation harness (judge, rewards, adversarial loop, evaluation)"};
  app.require_subcommand(1);

  // ingest
  std::string ingest_in, ingest_out, ingest_val_out;
  double train_fraction = 0.0;
  std::uint64_t ingest_seed = 0;
  auto* ingest = app.add_subcommand("ingest", "Validate a JSONL corpus, keep stdio tasks, optionally split");
  ingest->add_option("--input", ingest_in, "Input JSONL corpus")->required();
  ingest->add_option("--out", ingest_out, "Output JSONL (train split when splitting)")->required();
  ingest->add_option("--train-fraction", train_fraction, "Split fraction in (0,1); 0 disables splitting");
  ingest->add_option("--val-out", ingest_val_out, "Validation split output");
  ingest->add_option("--seed", ingest_seed, "Split seed");

  // judge
  std::string judge_code, judge_lang = "python", judge_input, judge_tests, judge_config;
  auto* judge_cmd = app.add_subcommand("judge", "Run a program on stdin or against a test list");
  judge_cmd->add_option("--code", judge_code, "Source file")->required();
  judge_cmd->add_option("--lang", judge_lang, "Runner tag (python, sh, ...)");
  judge_cmd->add_option("--input", judge_input, "File fed to stdin");
  judge_cmd->add_option("--tests", judge_tests, "JSON test list [{input, output}, ...]");
  judge_cmd->add_option("--config", judge_config, "Harness config JSON");

  // parse-ut / parse-code
  std::string parse_file = "-";
  auto* parse_ut = app.add_subcommand("parse-ut", "Parse a unit-test completion into test cases");
  parse_ut->add_option("file", parse_file, "Completion file, '-' for stdin");
  auto* parse_code = app.add_subcommand("parse-code", "Extract the code block of a completion");
  parse_code->add_option("file", parse_file, "Completion file, '-' for stdin");

  // reward
  std::string reward_tasks, reward_task, reward_ut, reward_codes, reward_config;
  auto* reward = app.add_subcommand("reward", "Discrimination, validity and combined reward for one unit test");
  reward->add_option("--tasks", reward_tasks, "Corpus JSONL")->required();
  reward->add_option("--task", reward_task, "Task id")->required();
  reward->add_option("--ut", reward_ut, "Unit-test completion file (.json for a test list)")->required();
  reward->add_option("--codes", reward_codes, "Directory of sampled code files")->required();
  reward->add_option("--config", reward_config, "Harness config JSON");

  // loop
  std::string loop_config, loop_out, loop_resume;
  int stop_after = -1;
  bool loop_verbose = false;
  auto* loop = app.add_subcommand("loop", "Run the alternating training loop into a run directory");
  loop->add_option("--config", loop_config, "Harness config JSON")->required();
  auto* out_opt = loop->add_option("--out", loop_out, "New run directory");
  auto* resume_opt = loop->add_option("--resume", loop_resume, "Resume the run in this directory");
  out_opt->excludes(resume_opt);
  loop->add_option("--stop-after", stop_after, "Stop after N steps, leaving a resumable checkpoint");
  loop->add_flag("--verbose", loop_verbose, "Per-step events on stderr");

  // eval-bestofn
  std::string bon_tasks, bon_candidates, bon_ut, bon_out = "eval-out", bon_config;
  int bon_n = 0;
  auto* bon = app.add_subcommand("eval-bestofn", "Best-of-N selection with generated unit tests");
  bon->add_option("--tasks", bon_tasks, "Corpus JSONL")->required();
  bon->add_option("--candidates", bon_candidates, "DIR/<task>/ holds candidate code files")->required();
  bon->add_option("--ut", bon_ut, "DIR/<task>.txt holds the generated unit test")->required();
  bon->add_option("--n", bon_n, "Candidates per task (default from config, 32)");
  bon->add_option("--out", bon_out, "Output directory");
  bon->add_option("--config", bon_config, "Harness config JSON");

  // eval-fidelity
  std::string fid_tasks, fid_pool, fid_ut, fid_out = "eval-out", fid_config;
  auto* fid = app.add_subcommand("eval-fidelity", "Spearman fidelity of generated unit tests");
  fid->add_option("--tasks", fid_tasks, "Corpus JSONL")->required();
  fid->add_option("--pool", fid_pool, "DIR/<task>/ holds the solution pool")->required();
  fid->add_option("--ut", fid_ut, "DIR/<task>.txt holds the generated unit test")->required();
  fid->add_option("--out", fid_out, "Output directory");
  fid->add_option("--config", fid_config, "Harness config JSON");

  // report
  std::vector<std::string> rep_best, rep_fid;
  std::string rep_out = "eval-out";
  bool rep_by_source = false;
  auto* report = app.add_subcommand("report", "Aggregate per-task result files into report tables");
  report->add_option("--bestofn", rep_best, "bestofn.jsonl files");
  report->add_option("--fidelity", rep_fid, "fidelity.jsonl files");
  report->add_option("--out", rep_out, "Output directory");
  report->add_flag("--by-source", rep_by_source, "Add one row per task source");

  // toy-demo
  std::uint64_t toy_seed = 0;
  std::string toy_out = "toy-run";
  int toy_ut_steps = -1, toy_code_steps = -1, toy_iterations = -1;
  auto* toy = app.add_subcommand("toy-demo", "Full loop on the bundled synthetic task family with toy policies");
  toy->add_option("--seed", toy_seed, "Run seed");
  toy->add_option("--out", toy_out, "Run directory (must not exist yet)");
  toy->add_option("--ut-steps", toy_ut_steps, "Steps per unit-test phase");
  toy->add_option("--code-steps", toy_code_steps, "Steps per code phase");
  toy->add_option("--iterations", toy_iterations, "Outer iterations");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      auto tasks = load_tasks(ingest_in);
      const auto total = tasks.size();
      tasks = filter_stdio_tasks(std::move(tasks));
      json summary = {{"read", total}, {"stdio", tasks.size()}};
      if (train_fraction > 0.0) {
        auto parts = split(std::move(tasks), train_fraction, ingest_seed);
        write_tasks(parts.train, fs::path(ingest_out));
        if (!ingest_val_out.empty()) write_tasks(parts.validation, fs::path(ingest_val_out));
        summary["train"] = parts.train.size();
        summary["validation"] = parts.validation.size();
      } else {
        write_tasks(tasks, fs::path(ingest_out));
      }
      std::cout << summary.dump() << '\n';
      return 0;
    }

    if (*judge_cmd) {
      const auto config = config_or_default(judge_config);
      judge::Judge j(config.judge);
      const judge::CodeSolution code{slurp(judge_code), judge_lang};
      if (!judge_tests.empty()) {
        const auto ut = unit_test_from_json(json::parse(slurp(judge_tests)));
        const judge::CodeSolution programs[] = {code};
        const auto m = j.evaluate_matrix(programs, ut.cases);
        json cases = json::array();
        std::size_t passed = 0;
        for (std::size_t c = 0; c < ut.size(); ++c) {
          cases.push_back(outcome_json(m.outcomes[0][c]));
          passed += m.at(0, c) ? 1 : 0;
        }
        std::cout << json{{"passed", passed}, {"total", ut.size()}, {"cases", cases}}.dump(2) << '\n';
        return passed == ut.size() ? 0 : 3;
      }
      const std::string input = judge_input.empty() ? std::string() : slurp(judge_input);
      std::cout << outcome_json(j.execute(code, input)).dump(2) << '\n';
      return 0;
    }

    if (*parse_ut) {
      const auto p = testparse::parse_unit_test(slurp(parse_file));
      json out = {{"unit_test", unit_test_to_json(p.unit_test)}, {"report", report_json(p.report)}};
      if (p.unit_test.has_reasoning()) out["reasoning"] = p.unit_test.reasoning;
      std::cout << out.dump(2) << '\n';
      return 0;
    }

    if (*parse_code) {
      const auto p = testparse::parse_code(slurp(parse_file));
      json out = {{"report", report_json(p.report)}};
      out["code"] = p.code ? json(p.code->source) : json(nullptr);
      out["language"] = p.code ? json(p.code->language_tag) : json(nullptr);
      std::cout << out.dump(2) << '\n';
      return p.code ? 0 : 3;
    }

    if (*reward) {
      const auto config = config_or_default(reward_config);
      const auto tasks = load_tasks(reward_tasks);
      const auto it = std::find_if(tasks.begin(), tasks.end(), [&](const auto& t) { return t.task_id == reward_task; });
      if (it == tasks.end()) throw Error("task not found: " + reward_task);
      judge::Judge j(config.judge);
      const auto ut = load_unit_test(reward_ut);
      const auto codes = load_code_dir(reward_codes, static_cast<std::size_t>(-1));
      if (codes.empty()) throw Error("no code files in " + reward_codes);
      const judge::CodeSolution gt{it->ground_truth_code, config.loop.default_language};
      std::vector<judge::CodeSolution> programs = {gt};
      programs.insert(programs.end(), codes.begin(), codes.end());
      const auto m = j.evaluate_matrix(programs, ut.cases);
      rewards::BoolGrid grid(m.bits.begin() + 1, m.bits.end());
      const auto r = rewards::score_unit_test(m.bits[0], grid, config.loop.reward);
      std::cout << json{{"task_id", it->task_id},
                        {"r_disc", r.r_disc},
                        {"r_valid", r.r_valid},
                        {"r_combined", r.r_combined},
                        {"n_total", r.n_total},
                        {"n_valid", r.n_valid},
                        {"detected", r.detected},
                        {"lambda_weight", config.loop.reward.lambda_weight},
                        {"tau", config.loop.reward.tau},
                        {"config_hash", cfg::config_hash(config)}}
                       .dump(2)
                << '\n';
      return 0;
    }

    if (*loop) {
      if (loop_out.empty() && loop_resume.empty()) throw ConfigError("--out", "one of --out or --resume is required");
      const auto config = cfg::load_config(loop_config);
      const fs::path base = fs::path(loop_config).parent_path();
      const bool resume = !loop_resume.empty();
      return run_loop_command(config, resume ? loop_resume : loop_out, resume, stop_after, loop_verbose, base);
    }

    if (*bon || *fid) {
      const bool is_bon = bon->parsed();
      const auto config = config_or_default(is_bon ? bon_config : fid_config);
      const auto tasks = filter_stdio_tasks(load_tasks(is_bon ? bon_tasks : fid_tasks));
      judge::Judge j(config.judge);
      const fs::path out_dir = is_bon ? bon_out : fid_out;
      fs::create_directories(out_dir);
      const std::size_t n = static_cast<std::size_t>(bon_n > 0 ? bon_n : config.eval.n_candidates);
      std::vector<eval::BestOfNResult> best;
      std::vector<eval::FidelityResult> fids;
      std::size_t missing = 0;
      for (const auto& task : tasks) {
        const auto ut_path = find_ut(is_bon ? bon_ut : fid_ut, task.task_id);
        const auto codes = load_code_dir(fs::path(is_bon ? bon_candidates : fid_pool) / safe_name(task.task_id),
                                         is_bon ? n : static_cast<std::size_t>(-1));
        if (!ut_path || codes.empty() || (!is_bon && codes.size() < 2)) {
          ++missing;
          continue;
        }
        const auto ut = load_unit_test(*ut_path);
        if (is_bon) best.push_back(eval::best_of_n(task, codes, ut, j, config.eval.filter_selector));
        else fids.push_back(eval::fidelity(task, codes, ut, j, config.eval.filter_fidelity));
      }
      if (missing) log_line("warn", "tasks without inputs skipped", {{"count", missing}});
      {
        std::ofstream out(out_dir / (is_bon ? "bestofn.jsonl" : "fidelity.jsonl"), std::ios::binary | std::ios::trunc);
        for (const auto& r : best) out << best_json(r).dump() << '\n';
        for (const auto& r : fids) out << fid_json(r).dump() << '\n';
      }
      eval::ReportOptions ro{config.eval.by_source, cfg::config_hash(config), std::to_string(config.seed)};
      const auto rows = eval::aggregate_report(best, fids, out_dir, ro);
      std::cout << slurp((out_dir / "report.txt").string());
      return 0;
    }

    if (*report) {
      std::vector<eval::BestOfNResult> best;
      std::vector<eval::FidelityResult> fids;
      for (const auto& p : rep_best) {
        auto v = read_jsonl<eval::BestOfNResult>(p, best_from_json);
        best.insert(best.end(), v.begin(), v.end());
      }
      for (const auto& p : rep_fid) {
        auto v = read_jsonl<eval::FidelityResult>(p, fid_from_json);
        fids.insert(fids.end(), v.begin(), v.end());
      }
      eval::aggregate_report(best, fids, rep_out, {rep_by_source, "", ""});
      std::cout << slurp((fs::path(rep_out) / "report.txt").string());
      return 0;
    }

    if (*toy) {
      auto config = cfg::toy_profile();
      config.seed = toy_seed;
      config.loop.seed = toy_seed;
      if (toy_ut_steps >= 0) config.loop.ut_schedule.max_steps = toy_ut_steps;
      if (toy_code_steps >= 0) config.loop.code_schedule.max_steps = toy_code_steps;
      if (toy_iterations > 0) config.loop.iterations = toy_iterations;
      run_loop_command(config, toy_out, false, -1, false, {});
      print_curves(fs::path(toy_out) / "curves" / "rewards.csv");
      return 0;
    }
  } catch (const ConfigError& e) {
    log_line("error", e.what(), {{"key", e.key()}});
    return 2;
  } catch (const std::exception& e) {
    log_line("error", e.what());
    return 1;
  }
  return 0;
}
