#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "utrl/corpus.hpp"
#include "utrl/generators.hpp"
#include "utrl/judge.hpp"
#include "utrl/rewards.hpp"

namespace utrl::orch {

inline constexpr int kRecordSchemaVersion = 1;

enum class Phase { kUt, kCode };
std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

/// "Not converged" for one phase: a step budget, optionally cut short once the
/// exponentially smoothed mean reward stops improving.
struct PhaseSchedule {
  int max_steps = 50;
  bool early_stop = false;
  double min_improvement = 0.005;  // over `window` steps
  int window = 20;
  double ema_alpha = 0.1;
};

struct LoopConfig {
  rewards::RewardConfig reward;
  int group_size = 8;
  int batch_size = 128;
  int iterations = 1;
  PhaseSchedule ut_schedule;
  PhaseSchedule code_schedule;
  std::uint64_t seed = 0;
  double ut_temperature = 1.0;
  double code_temperature = 1.0;
  double sampler_temperature = 1.0;
  int max_tokens = 8192;
  std::size_t sampling_parallelism = 4;
  std::string default_language = "python";

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

nlohmann::json loop_config_to_json(const LoopConfig& c);
LoopConfig loop_config_from_json(const nlohmann::json& j);

/// Generator roles. The frozen code sampler for iteration t comes from
/// `sampler_factory(t)` when set, otherwise from `code_generator->snapshot()`
/// taken when iteration t's unit-test phase starts.
struct Backends {
  std::shared_ptr<gen::Backend> ut_generator;
  std::shared_ptr<gen::Backend> code_generator;
  std::function<std::unique_ptr<gen::Backend>(int iteration)> sampler_factory;
};

struct TrainingRecord {
  Phase phase = Phase::kUt;
  int iteration = 1;
  int step = 0;
  std::string task_id;
  std::string group_id;
  gen::PromptText prompt;
  std::string completion;
  double reward = 0.0;
  double advantage = 0.0;
  bool degenerate = false;
  /// ut: r_disc, r_valid, r_combined, n_total, n_valid, detected.
  /// code: r_code, n_valid, parsed.
  nlohmann::json reward_breakdown;

  friend bool operator==(const TrainingRecord&, const TrainingRecord&) = default;
};

nlohmann::json record_to_json(const TrainingRecord& r);
TrainingRecord record_from_json(const nlohmann::json& j);

struct RecordHeader {
  int schema_version = kRecordSchemaVersion;
  std::string config_hash;
  std::uint64_t seed = 0;
};

/// Appends records as JSON Lines. A header line is written first when the
/// file is new or empty.
void export_records(std::span<const TrainingRecord> records, const std::filesystem::path& path,
                    const RecordHeader& header);
std::vector<TrainingRecord> load_records(const std::filesystem::path& path, RecordHeader* header = nullptr);

struct SkippedTask {
  std::string task_id;
  std::string reason;
};

struct StepResult {
  std::vector<TrainingRecord> records;
  std::vector<SkippedTask> skipped;
};

class Orchestrator {
 public:
  Orchestrator(LoopConfig config, std::vector<ProgrammingTask> tasks, Backends backends, const judge::Judge& judge);

  const LoopConfig& config() const noexcept { return config_; }
  const std::vector<ProgrammingTask>& tasks() const noexcept { return tasks_; }
  Backends& backends() noexcept { return backends_; }

  /// Freezes the code sampler for `iteration` and forgets cached codes.
  void freeze_sampler(int iteration);
  gen::Backend* sampler() const noexcept { return sampler_.get(); }

  /// Tasks for a step: a seeded permutation per (iteration, phase), consumed
  /// batch_size at a time and wrapping around.
  std::vector<const ProgrammingTask*> batch_for(int iteration, Phase phase, int step) const;

  /// One unit-test-generator step. Does not call learn().
  StepResult train_ut_step(std::span<const ProgrammingTask* const> batch, int iteration, int step);
  /// One code-generator step. Does not call learn().
  StepResult train_code_step(std::span<const ProgrammingTask* const> batch, int iteration, int step);

  /// M discrimination codes per task for the current frozen sampler.
  const std::map<std::string, std::vector<std::string>>& sampler_cache() const noexcept { return sampler_cache_; }
  void set_sampler_cache(std::map<std::string, std::vector<std::string>> cache) { sampler_cache_ = std::move(cache); }

 private:
  std::vector<std::string> sampler_codes(const ProgrammingTask& task, int iteration);

  LoopConfig config_;
  std::vector<ProgrammingTask> tasks_;
  Backends backends_;
  const judge::Judge& judge_;
  std::unique_ptr<gen::Backend> sampler_;
  std::map<std::string, std::vector<std::string>> sampler_cache_;
};

struct RunOptions {
  std::filesystem::path run_dir;
  /// Serialized into config.json and hashed. Null: loop_config_to_json(config).
  nlohmann::json config_json;
  bool resume = false;
  /// Stop after this many steps in this invocation, leaving a resumable
  /// checkpoint. Negative: run to completion.
  int stop_after_steps = -1;
  /// Per-step progress lines on stderr.
  bool verbose = false;
};

struct RunSummary {
  bool completed = false;
  int steps_run = 0;
  std::size_t records_written = 0;
  std::string config_hash;
};

/// Algorithm outer loop over the run directory:
///   config.json, records/phase-{ut,code}-iter{N}.jsonl, curves/rewards.csv,
///   checkpoints/latest.json, events.jsonl, .lock
RunSummary run_loop(Orchestrator& orch, const RunOptions& options);

/// Hash of a canonical JSON dump.
std::string config_hash(const nlohmann::json& config);

}  // namespace utrl::orch
