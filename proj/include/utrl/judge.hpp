#pragma once

#include <chrono>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "utrl/corpus.hpp"

namespace utrl::judge {

struct CodeSolution {
  std::string source;
  std::string language_tag = "python";

  friend bool operator==(const CodeSolution&, const CodeSolution&) = default;
};

enum class Verdict { kPass, kWrongOutput, kRuntimeError, kTimeout, kResourceExceeded, kSpawnFailure };

std::string_view to_string(Verdict v);

struct ExecutionOutcome {
  Verdict verdict = Verdict::kSpawnFailure;
  std::string stdout_text;
  std::string stderr_text;
  double wall_time_ms = 0.0;
  /// Exit code when the process exited normally, otherwise -signal.
  int exit_status = 0;
  bool signaled = false;
  bool stdout_truncated = false;
  std::string diagnostic;
};

struct ResourceLimits {
  std::chrono::milliseconds wall_time{10'000};
  std::size_t memory_bytes = std::size_t{512} << 20;
  std::size_t stdout_cap = std::size_t{1} << 20;
};

/// How a runner turns a source file into a process. `command` entries may
/// contain `{source}`, replaced with the absolute path of the written file.
struct RunnerSpec {
  std::vector<std::string> command;
  std::string source_file = "main.py";
};

using RunnerTable = std::map<std::string, RunnerSpec>;

/// python -> python3, sh -> /bin/sh.
RunnerTable default_runners();

enum class CompareMode { kLines, kNumeric };

struct ComparePolicy {
  CompareMode mode = CompareMode::kLines;
  double abs_tolerance = 1e-6;
};

/// Trailing whitespace stripped per line, trailing blank lines dropped.
std::vector<std::string> normalize_lines(std::string_view text);
bool outputs_match(std::string_view actual, std::string_view expected, const ComparePolicy& policy);

struct JudgeOptions {
  RunnerTable runners = default_runners();
  ResourceLimits limits;
  ComparePolicy compare;
  std::size_t parallelism = 4;
  /// Best-effort: run the child in a fresh network namespace.
  bool isolate_network = true;
  /// Memoize raw executions by (runner, source, stdin, limits); comparison is redone per case.
  /// Only sound for deterministic programs.
  bool cache_outcomes = false;
  std::string scratch_root;  // empty: system temp dir
};

struct PassMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::vector<bool>> bits;
  std::vector<std::vector<ExecutionOutcome>> outcomes;

  bool at(std::size_t i, std::size_t j) const { return bits[i][j]; }
};

struct CheckJob {
  const CodeSolution* program;
  const TestCase* test;
};

class Judge {
 public:
  explicit Judge(JudgeOptions options = {});

  const JudgeOptions& options() const noexcept { return options_; }

  /// Runs the program once with `stdin_text`. The verdict is provisional:
  /// kPass here only means the process exited 0 within limits.
  ExecutionOutcome execute(const CodeSolution& program, std::string_view stdin_text) const;

  /// Runs and compares against the expected output.
  ExecutionOutcome run_case(const CodeSolution& program, const TestCase& test) const;

  /// E(C, T): true iff run_case yields kPass. The one place pass/fail is decided.
  bool check(const CodeSolution& program, const TestCase& test) const;

  /// Runs all jobs on the worker pool; result order matches `jobs`.
  std::vector<ExecutionOutcome> run_batch(std::span<const CheckJob> jobs) const;

  PassMatrix evaluate_matrix(std::span<const CodeSolution> programs, std::span<const TestCase> tests) const;

  std::size_t executions() const;
  std::size_t cache_hits() const;

 private:
  ExecutionOutcome execute_counted(const CodeSolution& program, const std::string& stdin_text) const;
  std::string cache_key(const CodeSolution& program, std::string_view stdin_text) const;

  JudgeOptions options_;
  mutable std::mutex mu_;
  mutable std::unordered_map<std::string, ExecutionOutcome> cache_;
  mutable std::size_t executions_ = 0;
  mutable std::size_t cache_hits_ = 0;
};

}  // namespace utrl::judge
