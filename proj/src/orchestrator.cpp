#include "utrl/orchestrator.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "utrl/errors.hpp"
#include "utrl/grpo.hpp"
#include "utrl/hashing.hpp"
#include "utrl/testparse.hpp"

namespace utrl::orch {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Phase p) { return p == Phase::kUt ? "ut" : "code"; }

Phase phase_from_string(const std::string& s) {
  if (s == "ut") return Phase::kUt;
  if (s == "code") return Phase::kCode;
  throw Error("unknown phase '" + s + "'");
}

// ---------------------------------------------------------------------------
// Config

namespace {

void validate_schedule(const PhaseSchedule& s, const std::string& prefix) {
  if (s.max_steps < 0) throw ConfigError(prefix + ".max_steps", "must be >= 0");
  if (s.window < 1) throw ConfigError(prefix + ".window", "must be >= 1");
  if (!(s.ema_alpha > 0.0 && s.ema_alpha <= 1.0)) throw ConfigError(prefix + ".ema_alpha", "must lie in (0, 1]");
}

json schedule_to_json(const PhaseSchedule& s) {
  return {{"max_steps", s.max_steps},
          {"early_stop", s.early_stop},
          {"min_improvement", s.min_improvement},
          {"window", s.window},
          {"ema_alpha", s.ema_alpha}};
}

PhaseSchedule schedule_from_json(const json& j) {
  PhaseSchedule s;
  s.max_steps = j.value("max_steps", s.max_steps);
  s.early_stop = j.value("early_stop", s.early_stop);
  s.min_improvement = j.value("min_improvement", s.min_improvement);
  s.window = j.value("window", s.window);
  s.ema_alpha = j.value("ema_alpha", s.ema_alpha);
  return s;
}

}  // namespace

void LoopConfig::validate() const {
  reward.validate();
  if (group_size < 2) throw ConfigError("group_size", "must be >= 2");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (iterations < 1) throw ConfigError("iterations", "must be >= 1");
  validate_schedule(ut_schedule, "ut_phase");
  validate_schedule(code_schedule, "code_phase");
  if (max_tokens < 1) throw ConfigError("max_tokens", "must be >= 1");
  if (sampling_parallelism < 1) throw ConfigError("sampling_parallelism", "must be >= 1");
}

json loop_config_to_json(const LoopConfig& c) {
  return {{"reward",
           {{"tau", c.reward.tau},
            {"lambda_weight", c.reward.lambda_weight},
            {"m_samples", c.reward.m_samples},
            {"validity_enabled", c.reward.validity_enabled},
            {"clipping_enabled", c.reward.clipping_enabled}}},
          {"group_size", c.group_size},
          {"batch_size", c.batch_size},
          {"iterations", c.iterations},
          {"ut_phase", schedule_to_json(c.ut_schedule)},
          {"code_phase", schedule_to_json(c.code_schedule)},
          {"seed", c.seed},
          {"ut_temperature", c.ut_temperature},
          {"code_temperature", c.code_temperature},
          {"sampler_temperature", c.sampler_temperature},
          {"max_tokens", c.max_tokens},
          {"sampling_parallelism", c.sampling_parallelism},
          {"default_language", c.default_language}};
}

LoopConfig loop_config_from_json(const json& j) {
  LoopConfig c;
  if (!j.is_object()) throw ConfigError("loop", "expected an object");
  try {
    if (j.contains("reward")) {
      const auto& r = j["reward"];
      c.reward.tau = r.value("tau", c.reward.tau);
      c.reward.lambda_weight = r.value("lambda_weight", c.reward.lambda_weight);
      c.reward.m_samples = r.value("m_samples", c.reward.m_samples);
      c.reward.validity_enabled = r.value("validity_enabled", c.reward.validity_enabled);
      c.reward.clipping_enabled = r.value("clipping_enabled", c.reward.clipping_enabled);
    }
    c.group_size = j.value("group_size", c.group_size);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.iterations = j.value("iterations", c.iterations);
    if (j.contains("ut_phase")) c.ut_schedule = schedule_from_json(j["ut_phase"]);
    if (j.contains("code_phase")) c.code_schedule = schedule_from_json(j["code_phase"]);
    c.seed = j.value("seed", c.seed);
    c.ut_temperature = j.value("ut_temperature", c.ut_temperature);
    c.code_temperature = j.value("code_temperature", c.code_temperature);
    c.sampler_temperature = j.value("sampler_temperature", c.sampler_temperature);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.sampling_parallelism = j.value("sampling_parallelism", c.sampling_parallelism);
    c.default_language = j.value("default_language", c.default_language);
  } catch (const json::type_error& e) {
    throw ConfigError("loop", e.what());
  }
  c.validate();
  return c;
}

std::string config_hash(const json& config) { return sha256_hex(config.dump()); }

// ---------------------------------------------------------------------------
// Records

json record_to_json(const TrainingRecord& r) {
  return {{"phase", to_string(r.phase)},
          {"iteration", r.iteration},
          {"step", r.step},
          {"task_id", r.task_id},
          {"group_id", r.group_id},
          {"prompt", {{"system", r.prompt.system}, {"user", r.prompt.user}}},
          {"completion", r.completion},
          {"reward", r.reward},
          {"advantage", r.advantage},
          {"degenerate", r.degenerate},
          {"reward_breakdown", r.reward_breakdown}};
}

TrainingRecord record_from_json(const json& j) {
  TrainingRecord r;
  r.phase = phase_from_string(j.at("phase").get<std::string>());
  r.iteration = j.at("iteration").get<int>();
  r.step = j.at("step").get<int>();
  r.task_id = j.at("task_id").get<std::string>();
  r.group_id = j.at("group_id").get<std::string>();
  r.prompt.system = j.at("prompt").at("system").get<std::string>();
  r.prompt.user = j.at("prompt").at("user").get<std::string>();
  r.completion = j.at("completion").get<std::string>();
  r.reward = j.at("reward").get<double>();
  r.advantage = j.at("advantage").get<double>();
  r.degenerate = j.at("degenerate").get<bool>();
  r.reward_breakdown = j.at("reward_breakdown");
  return r;
}

void export_records(std::span<const TrainingRecord> records, const fs::path& path, const RecordHeader& header) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot open " + path.string());
  if (fresh) {
    out << json{{"schema_version", header.schema_version}, {"config_hash", header.config_hash}, {"seed", header.seed}}
               .dump()
        << '\n';
  }
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  out.flush();
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<TrainingRecord> load_records(const fs::path& path, RecordHeader* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<TrainingRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (lineno == 1) {
        if (j.value("schema_version", 0) != kRecordSchemaVersion) throw SchemaError(lineno, "unsupported schema_version");
        if (header) {
          header->schema_version = j.at("schema_version").get<int>();
          header->config_hash = j.at("config_hash").get<std::string>();
          header->seed = j.at("seed").get<std::uint64_t>();
        }
        continue;
      }
      out.push_back(record_from_json(j));
    } catch (const json::exception& e) {
      throw SchemaError(lineno, e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Steps

namespace {

template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& body) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto run = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  workers = std::min(workers, n);
  if (workers <= 1) {
    run();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
  }
  if (error) std::rethrow_exception(error);
}

std::vector<std::string> texts_of(const std::vector<gen::Completion>& cs, int expected, const std::string& what) {
  if (cs.size() != static_cast<std::size_t>(expected)) {
    throw ProtocolError(what + ": backend returned " + std::to_string(cs.size()) + " completions, expected " +
                        std::to_string(expected));
  }
  std::vector<std::string> out;
  for (const auto& c : cs) out.push_back(c.text);
  return out;
}

std::string group_id(Phase phase, int iteration, int step, const std::string& task_id) {
  return to_string(phase) + "/iter" + std::to_string(iteration) + "/step" + std::to_string(step) + "/" + task_id;
}

/// Distinct test cases of one task, with the programs to run on them.
struct CaseTable {
  std::vector<TestCase> cases;
  std::map<std::pair<std::string, std::string>, std::size_t> index;

  std::size_t add(const TestCase& c) {
    auto [it, inserted] = index.try_emplace({c.input, c.expected_output}, cases.size());
    if (inserted) cases.push_back(c);
    return it->second;
  }
};

/// programs x cases grid, judged as one flat batch across tasks.
struct Grid {
  std::vector<judge::CodeSolution> programs;
  CaseTable table;
  std::size_t offset = 0;
  bool pass(const std::vector<judge::ExecutionOutcome>& outcomes, std::size_t p, std::size_t c) const {
    return outcomes[offset + p * table.cases.size() + c].verdict == judge::Verdict::kPass;
  }
};

std::vector<judge::CheckJob> collect_jobs(std::vector<Grid>& grids) {
  std::vector<judge::CheckJob> jobs;
  for (auto& g : grids) {
    g.offset = jobs.size();
    for (const auto& p : g.programs)
      for (const auto& c : g.table.cases) jobs.push_back({&p, &c});
  }
  return jobs;
}

json ut_breakdown(const rewards::UnitTestReward& r, const testparse::ParseReport& report) {
  const auto detected = static_cast<std::size_t>(std::count(r.detected.begin(), r.detected.end(), true));
  return {{"r_disc", r.r_disc},     {"r_valid", r.r_valid}, {"r_combined", r.r_combined},
          {"n_total", r.n_total},   {"n_valid", r.n_valid}, {"detected", detected},
          {"m_samples", r.detected.size()}, {"dropped_blocks", report.dropped_blocks.size()}};
}

}  // namespace

Orchestrator::Orchestrator(LoopConfig config, std::vector<ProgrammingTask> tasks, Backends backends,
                           const judge::Judge& judge)
    : config_(std::move(config)), tasks_(std::move(tasks)), backends_(std::move(backends)), judge_(judge) {
  config_.validate();
  if (tasks_.empty()) throw ConfigError("tasks", "no training tasks");
  if (!backends_.ut_generator) throw ConfigError("backends.ut_generator", "not configured");
  if (!backends_.code_generator) throw ConfigError("backends.code_generator", "not configured");
}

void Orchestrator::freeze_sampler(int iteration) {
  sampler_ = backends_.sampler_factory ? backends_.sampler_factory(iteration) : backends_.code_generator->snapshot();
  if (!sampler_) throw ConfigError("backends.code_sampler", "factory returned no backend");
  sampler_cache_.clear();
}

std::vector<const ProgrammingTask*> Orchestrator::batch_for(int iteration, Phase phase, int step) const {
  const std::size_t n = tasks_.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(config_.seed, "order/iter" + std::to_string(iteration) + "/" + to_string(phase)));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(config_.batch_size), n);
  std::vector<const ProgrammingTask*> out;
  const std::size_t start = (static_cast<std::size_t>(step) * b) % n;
  for (std::size_t k = 0; k < b; ++k) out.push_back(&tasks_[order[(start + k) % n]]);
  return out;
}

StepResult Orchestrator::train_ut_step(std::span<const ProgrammingTask* const> batch, int iteration, int step) {
  if (!sampler_) throw Error("train_ut_step: code sampler not frozen for this iteration");
  const std::size_t n = batch.size();
  const int g = config_.group_size;
  const int m = config_.reward.m_samples;

  std::vector<std::vector<std::string>> codes(n), uts(n);
  std::vector<char> fresh_codes(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = sampler_cache_.find(batch[i]->task_id);
    if (it != sampler_cache_.end()) codes[i] = it->second;
    else fresh_codes[i] = 1;
  }
  parallel_for(n, config_.sampling_parallelism, [&](std::size_t i) {
    const auto& task = *batch[i];
    if (fresh_codes[i]) {
      gen::SamplingSpec spec{m, config_.sampler_temperature, config_.max_tokens,
                             derive_seed(config_.seed, "sampler/iter" + std::to_string(iteration) + "/" + task.task_id)};
      codes[i] = texts_of(sampler_->sample(testparse::render_code_prompt(task), spec), m, "code sampler");
    }
    gen::SamplingSpec spec{g, config_.ut_temperature, config_.max_tokens,
                           derive_seed(config_.seed, "ut/iter" + std::to_string(iteration) + "/step" +
                                                         std::to_string(step) + "/" + task.task_id)};
    uts[i] = texts_of(backends_.ut_generator->sample(testparse::render_ut_prompt(task), spec), g, "unit-test generator");
  });
  for (std::size_t i = 0; i < n; ++i)
    if (fresh_codes[i]) sampler_cache_[batch[i]->task_id] = codes[i];

  // Program 0 is C*; programs 1.. are the parsed sampled codes.
  std::vector<Grid> grids(n);
  std::vector<std::vector<int>> code_program(n);
  std::vector<std::vector<testparse::UnitTestParse>> parsed(n);
  std::vector<std::vector<std::vector<std::size_t>>> case_ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    grids[i].programs.push_back({batch[i]->ground_truth_code, config_.default_language});
    for (const auto& text : codes[i]) {
      auto pc = testparse::parse_code(text, config_.default_language);
      if (pc.code) {
        code_program[i].push_back(static_cast<int>(grids[i].programs.size()));
        grids[i].programs.push_back(std::move(*pc.code));
      } else {
        code_program[i].push_back(-1);
      }
    }
    for (const auto& text : uts[i]) {
      parsed[i].push_back(testparse::parse_unit_test(text));
      std::vector<std::size_t> ids;
      for (const auto& c : parsed[i].back().unit_test.cases) ids.push_back(grids[i].table.add(c));
      case_ids[i].push_back(std::move(ids));
    }
  }
  const auto jobs = collect_jobs(grids);
  const auto outcomes = judge_.run_batch(jobs);

  StepResult result;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& task = *batch[i];
    const auto prompt = testparse::render_ut_prompt(task);
    std::vector<rewards::UnitTestReward> scores;
    std::vector<double> rs;
    for (int k = 0; k < g; ++k) {
      const auto& ids = case_ids[i][k];
      std::vector<bool> gt_row;
      for (auto c : ids) gt_row.push_back(grids[i].pass(outcomes, 0, c));
      rewards::BoolGrid code_rows;
      for (int p : code_program[i]) {
        std::vector<bool> row;
        for (auto c : ids) row.push_back(p >= 0 && grids[i].pass(outcomes, static_cast<std::size_t>(p), c));
        code_rows.push_back(std::move(row));
      }
      scores.push_back(rewards::score_unit_test(gt_row, code_rows, config_.reward));
      rs.push_back(scores.back().r_combined);
    }
    const auto adv = grpo::group_advantages(rs);
    for (int k = 0; k < g; ++k) {
      TrainingRecord r;
      r.phase = Phase::kUt;
      r.iteration = iteration;
      r.step = step;
      r.task_id = task.task_id;
      r.group_id = group_id(Phase::kUt, iteration, step, task.task_id);
      r.prompt = prompt;
      r.completion = uts[i][k];
      r.reward = rs[k];
      r.advantage = adv.advantages[k];
      r.degenerate = adv.degenerate;
      r.reward_breakdown = ut_breakdown(scores[k], parsed[i][k].report);
      result.records.push_back(std::move(r));
    }
  }
  return result;
}

StepResult Orchestrator::train_code_step(std::span<const ProgrammingTask* const> batch, int iteration, int step) {
  const std::size_t n = batch.size();
  const int g = config_.group_size;
  const auto label = [&](const char* kind, const ProgrammingTask& t) {
    return std::string(kind) + "/iter" + std::to_string(iteration) + "/step" + std::to_string(step) + "/" + t.task_id;
  };

  // Lines 13-14: one unit test per task from the current generator, filtered against C*.
  std::vector<std::string> ut_text(n);
  parallel_for(n, config_.sampling_parallelism, [&](std::size_t i) {
    gen::SamplingSpec spec{1, config_.ut_temperature, config_.max_tokens, derive_seed(config_.seed, label("code-ut", *batch[i]))};
    ut_text[i] = texts_of(backends_.ut_generator->sample(testparse::render_ut_prompt(*batch[i]), spec), 1,
                          "unit-test generator")[0];
  });
  // Judging is deduplicated; rewards weight the parsed case list as written.
  std::vector<Grid> filter(n);
  std::vector<std::vector<std::size_t>> listed(n);
  for (std::size_t i = 0; i < n; ++i) {
    filter[i].programs.push_back({batch[i]->ground_truth_code, config_.default_language});
    for (const auto& c : testparse::parse_unit_test(ut_text[i]).unit_test.cases) listed[i].push_back(filter[i].table.add(c));
  }
  const auto filter_jobs = collect_jobs(filter);
  const auto filter_outcomes = judge_.run_batch(filter_jobs);

  StepResult result;
  std::vector<std::size_t> kept;
  std::vector<std::size_t> n_total(n, 0);
  std::vector<Grid> grids(n);
  std::vector<std::vector<std::size_t>> valid_list(n);  // ids into grids[i].table, duplicates kept
  for (std::size_t i = 0; i < n; ++i) {
    n_total[i] = listed[i].size();
    for (std::size_t c : listed[i])
      if (filter[i].pass(filter_outcomes, 0, c)) valid_list[i].push_back(grids[i].table.add(filter[i].table.cases[c]));
    if (valid_list[i].empty()) {
      result.skipped.push_back({batch[i]->task_id, "no-valid-tests"});
    } else {
      kept.push_back(i);
    }
  }

  // Lines 15-16: G codes per kept task, scored on the valid cases.
  std::vector<std::vector<std::string>> codes(n);
  parallel_for(kept.size(), config_.sampling_parallelism, [&](std::size_t k) {
    const std::size_t i = kept[k];
    gen::SamplingSpec spec{g, config_.code_temperature, config_.max_tokens, derive_seed(config_.seed, label("code", *batch[i]))};
    codes[i] = texts_of(backends_.code_generator->sample(testparse::render_code_prompt(*batch[i]), spec), g,
                        "code generator");
  });
  std::vector<std::vector<int>> code_program(n);
  for (std::size_t i : kept) {
    for (const auto& text : codes[i]) {
      auto pc = testparse::parse_code(text, config_.default_language);
      if (pc.code) {
        code_program[i].push_back(static_cast<int>(grids[i].programs.size()));
        grids[i].programs.push_back(std::move(*pc.code));
      } else {
        code_program[i].push_back(-1);
      }
    }
  }
  const auto jobs = collect_jobs(grids);
  const auto outcomes = judge_.run_batch(jobs);

  for (std::size_t i : kept) {
    const auto& task = *batch[i];
    const auto prompt = testparse::render_code_prompt(task);
    const std::size_t n_valid = valid_list[i].size();
    std::vector<double> rs;
    for (int p : code_program[i]) {
      std::vector<bool> row(n_valid, false);
      if (p >= 0)
        for (std::size_t c = 0; c < n_valid; ++c)
          row[c] = grids[i].pass(outcomes, static_cast<std::size_t>(p), valid_list[i][c]);
      rs.push_back(rewards::code_reward(row));
    }
    const auto adv = grpo::group_advantages(rs);
    for (int k = 0; k < g; ++k) {
      TrainingRecord r;
      r.phase = Phase::kCode;
      r.iteration = iteration;
      r.step = step;
      r.task_id = task.task_id;
      r.group_id = group_id(Phase::kCode, iteration, step, task.task_id);
      r.prompt = prompt;
      r.completion = codes[i][k];
      r.reward = rs[k];
      r.advantage = adv.advantages[k];
      r.degenerate = adv.degenerate;
      r.reward_breakdown = {{"r_code", rs[k]},
                            {"n_valid", n_valid},
                            {"n_total", n_total[i]},
                            {"parsed", code_program[i][k] >= 0}};
      result.records.push_back(std::move(r));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Run directory

namespace {

class DirLock {
 public:
  explicit DirLock(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw Error("run directory is locked by another process: " + path.parent_path().string());
    }
  }
  ~DirLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

struct Position {
  int iteration = 1;
  Phase phase = Phase::kUt;
  int step = 0;  // next step within the phase
};

/// Smoothed phase reward for the early-stop rule.
struct PhaseStats {
  std::optional<double> ema;
  std::vector<double> history;

  void add(double reward, const PhaseSchedule& s) {
    ema = ema ? s.ema_alpha * reward + (1.0 - s.ema_alpha) * *ema : reward;
    history.push_back(*ema);
  }
  bool saturated(const PhaseSchedule& s) const {
    const auto w = static_cast<std::size_t>(s.window);
    return s.early_stop && history.size() > w && history.back() - history[history.size() - 1 - w] < s.min_improvement;
  }
  json to_json() const { return {{"ema", ema ? json(*ema) : json(nullptr)}, {"history", history}}; }
  static PhaseStats from_json(const json& j) {
    PhaseStats s;
    if (!j.at("ema").is_null()) s.ema = j.at("ema").get<double>();
    s.history = j.at("history").get<std::vector<double>>();
    return s;
  }
};

const PhaseSchedule& schedule(const LoopConfig& c, Phase p) { return p == Phase::kUt ? c.ut_schedule : c.code_schedule; }

fs::path records_path(const fs::path& dir, Phase p, int iteration) {
  return dir / "records" / ("phase-" + to_string(p) + "-iter" + std::to_string(iteration) + ".jsonl");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string mean_field(const std::vector<TrainingRecord>& rs, const char* key) {
  if (rs.empty()) return "";
  double s = 0.0;
  for (const auto& r : rs) s += r.reward_breakdown.at(key).get<double>();
  return fmt(s / static_cast<double>(rs.size()));
}

void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.flush();
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  out << line << '\n';
  if (!out) throw Error("cannot append to " + path.string());
}

constexpr const char* kCurveHeader =
    "iteration,phase,step,tasks,skipped,records,mean_reward,mean_r_disc,mean_r_valid,mean_r_code,"
    "mean_valid_cases,degenerate_groups,ema_reward";

}  // namespace

RunSummary run_loop(Orchestrator& orch, const RunOptions& options) {
  const LoopConfig& cfg = orch.config();
  const fs::path dir = options.run_dir;
  fs::create_directories(dir);
  DirLock lock(dir / ".lock");
  fs::create_directories(dir / "records");
  fs::create_directories(dir / "curves");
  fs::create_directories(dir / "checkpoints");

  const json config_json = options.config_json.is_null() ? loop_config_to_json(cfg) : options.config_json;
  RunSummary summary;
  summary.config_hash = config_hash(config_json);
  const RecordHeader header{kRecordSchemaVersion, summary.config_hash, cfg.seed};
  const fs::path ckpt_path = dir / "checkpoints" / "latest.json";
  const fs::path curves = dir / "curves" / "rewards.csv";
  const fs::path events = dir / "events.jsonl";

  Position pos;
  PhaseStats stats;
  int frozen_for = 0;  // iteration whose sampler is frozen, 0 for none
  auto& backends = orch.backends();

  auto event = [&](json e) {
    append_line(events, e.dump());
    if (options.verbose) std::cerr << e.dump() << '\n';
  };

  if (options.resume) {
    if (!fs::exists(ckpt_path)) throw Error("no checkpoint to resume from in " + dir.string());
    std::ifstream in(ckpt_path, std::ios::binary);
    const json ck = json::parse(in);
    if (ck.at("config_hash").get<std::string>() != summary.config_hash) {
      throw ConfigError("config", "hash differs from the checkpointed run");
    }
    pos.iteration = ck.at("iteration").get<int>();
    pos.phase = phase_from_string(ck.at("phase").get<std::string>());
    pos.step = ck.at("step").get<int>();
    stats = PhaseStats::from_json(ck.at("stats"));
    backends.ut_generator->restore(ck.at("backends").at("ut"));
    backends.code_generator->restore(ck.at("backends").at("code"));
    if (!ck.at("backends").at("sampler").is_null()) {
      orch.freeze_sampler(pos.iteration);
      orch.sampler()->restore(ck.at("backends").at("sampler"));
      orch.set_sampler_cache(ck.at("sampler_cache").get<std::map<std::string, std::vector<std::string>>>());
      frozen_for = pos.iteration;
    }
    // Drop anything written after the checkpoint.
    const auto sizes = ck.at("files").get<std::map<std::string, std::uintmax_t>>();
    for (const auto& entry : fs::directory_iterator(dir / "records")) {
      const auto rel = fs::relative(entry.path(), dir).generic_string();
      if (auto it = sizes.find(rel); it != sizes.end()) fs::resize_file(entry.path(), it->second);
      else fs::remove(entry.path());
    }
    if (auto it = sizes.find("curves/rewards.csv"); it != sizes.end()) fs::resize_file(curves, it->second);
    event({{"event", "resume"}, {"iteration", pos.iteration}, {"phase", to_string(pos.phase)}, {"step", pos.step}});
  } else {
    if (fs::exists(ckpt_path) || fs::exists(dir / "config.json")) {
      throw Error("run directory already initialized: " + dir.string() + " (use --resume)");
    }
    write_atomic(dir / "config.json", config_json.dump(2) + "\n");
    std::ofstream(curves, std::ios::binary | std::ios::trunc)
        << "# config_hash=" << summary.config_hash << " seed=" << cfg.seed << "\n"
        << kCurveHeader << "\n";
    std::ofstream(events, std::ios::binary | std::ios::trunc);
    event({{"event", "start"}, {"config_hash", summary.config_hash}, {"seed", cfg.seed}});
  }

  auto save_checkpoint = [&] {
    json files = json::object();
    for (const auto& entry : fs::directory_iterator(dir / "records")) {
      files[fs::relative(entry.path(), dir).generic_string()] = fs::file_size(entry.path());
    }
    files["curves/rewards.csv"] = fs::file_size(curves);
    const bool keep_sampler = pos.phase == Phase::kUt && frozen_for == pos.iteration && orch.sampler();
    json ck = {{"schema_version", kRecordSchemaVersion},
               {"config_hash", summary.config_hash},
               {"seed", cfg.seed},
               {"iteration", pos.iteration},
               {"phase", to_string(pos.phase)},
               {"step", pos.step},
               {"stats", stats.to_json()},
               {"backends",
                {{"ut", backends.ut_generator->state()},
                 {"code", backends.code_generator->state()},
                 {"sampler", keep_sampler ? orch.sampler()->state() : json(nullptr)}}},
               {"sampler_id", keep_sampler ? short_hash(orch.sampler()->state().dump()) : ""},
               {"sampler_cache", keep_sampler ? json(orch.sampler_cache()) : json::object()},
               {"files", files}};
    write_atomic(ckpt_path, ck.dump(2) + "\n");
  };

  auto advance_phase = [&] {
    if (pos.phase == Phase::kUt) {
      pos.phase = Phase::kCode;
    } else {
      pos.phase = Phase::kUt;
      ++pos.iteration;
    }
    pos.step = 0;
    stats = {};
  };

  if (!options.resume) save_checkpoint();
  try {
    while (pos.iteration <= cfg.iterations) {
      const auto& sched = schedule(cfg, pos.phase);
      if (pos.step >= sched.max_steps || stats.saturated(sched)) {
        event({{"event", "phase_end"}, {"iteration", pos.iteration}, {"phase", to_string(pos.phase)}, {"steps", pos.step}});
        advance_phase();
        save_checkpoint();
        continue;
      }
      if (options.stop_after_steps >= 0 && summary.steps_run >= options.stop_after_steps) {
        event({{"event", "stop"}, {"iteration", pos.iteration}, {"phase", to_string(pos.phase)}, {"step", pos.step}});
        return summary;
      }
      if (pos.phase == Phase::kUt && frozen_for != pos.iteration) {
        orch.freeze_sampler(pos.iteration);
        frozen_for = pos.iteration;
        event({{"event", "freeze_sampler"}, {"iteration", pos.iteration},
               {"sampler_id", short_hash(orch.sampler()->state().dump())}});
      }

      const auto batch = orch.batch_for(pos.iteration, pos.phase, pos.step);
      StepResult res = pos.phase == Phase::kUt ? orch.train_ut_step(batch, pos.iteration, pos.step)
                                               : orch.train_code_step(batch, pos.iteration, pos.step);

      std::vector<gen::Feedback> feedback;
      for (const auto& r : res.records) feedback.push_back({r.prompt, r.completion, r.advantage});
      (pos.phase == Phase::kUt ? backends.ut_generator : backends.code_generator)->learn(feedback);

      export_records(res.records, records_path(dir, pos.phase, pos.iteration), header);
      summary.records_written += res.records.size();

      std::size_t degenerate = 0;
      std::string mean_reward;
      if (!res.records.empty()) {
        double s = 0.0;
        for (const auto& r : res.records) s += r.reward;
        const double mean = s / static_cast<double>(res.records.size());
        stats.add(mean, sched);
        mean_reward = fmt(mean);
        for (std::size_t k = 0; k < res.records.size(); k += static_cast<std::size_t>(cfg.group_size))
          degenerate += res.records[k].degenerate ? 1 : 0;
      }
      const bool ut = pos.phase == Phase::kUt;
      std::ostringstream row;
      row << pos.iteration << ',' << to_string(pos.phase) << ',' << pos.step << ',' << batch.size() << ','
          << res.skipped.size() << ',' << res.records.size() << ',' << mean_reward << ','
          << (ut ? mean_field(res.records, "r_disc") : "") << ',' << (ut ? mean_field(res.records, "r_valid") : "")
          << ',' << (ut ? "" : mean_field(res.records, "r_code")) << ',';
      if (!res.records.empty()) {
        double s = 0.0;
        for (const auto& r : res.records) s += r.reward_breakdown.at("n_valid").get<double>();
        row << fmt(s / static_cast<double>(res.records.size()));
      }
      row << ',' << degenerate << ',' << (stats.ema ? fmt(*stats.ema) : "");
      append_line(curves, row.str());

      for (const auto& s : res.skipped) {
        event({{"event", "skip"}, {"reason", s.reason}, {"task_id", s.task_id}, {"iteration", pos.iteration},
               {"phase", to_string(pos.phase)}, {"step", pos.step}});
      }
      event({{"event", "step"}, {"iteration", pos.iteration}, {"phase", to_string(pos.phase)}, {"step", pos.step},
             {"records", res.records.size()}, {"mean_reward", mean_reward}});

      ++pos.step;
      ++summary.steps_run;
      save_checkpoint();
    }
  } catch (const std::exception& e) {
    // The checkpoint on disk is the one written after the last completed step.
    event({{"event", "error"}, {"what", e.what()}, {"iteration", pos.iteration}, {"phase", to_string(pos.phase)},
           {"step", pos.step}});
    throw;
  }
  event({{"event", "done"}, {"steps", summary.steps_run}});
  summary.completed = true;
  return summary;
}

}  // namespace utrl::orch
