#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace utrl {

/// One stdio test case. Both fields are stored byte-exact; normalization is a
/// judge-time concern.
struct TestCase {
  std::string input;
  std::string expected_output;

  friend bool operator==(const TestCase&, const TestCase&) = default;
};

/// Ordered collection of test cases. When `reasoning` is non-empty it runs
/// parallel to `cases`.
struct UnitTest {
  std::vector<TestCase> cases;
  std::vector<std::string> reasoning;

  std::size_t size() const noexcept { return cases.size(); }
  bool empty() const noexcept { return cases.empty(); }
  bool has_reasoning() const noexcept { return !reasoning.empty(); }

  friend bool operator==(const UnitTest&, const UnitTest&) = default;
};

enum class TestFormat { kStdio, kFunctional };

struct ProgrammingTask {
  std::string task_id;
  std::string instruction;
  std::string ground_truth_code;
  UnitTest ground_truth_tests;
  TestFormat test_format = TestFormat::kStdio;
  std::optional<std::string> source;

  friend bool operator==(const ProgrammingTask&, const ProgrammingTask&) = default;
};

/// Parses one corpus record. `line` is only used for error messages.
ProgrammingTask task_from_json(const nlohmann::json& record, std::size_t line);
nlohmann::json task_to_json(const ProgrammingTask& task);

/// Reads a JSON Lines corpus. Blank lines are skipped; any malformed record
/// rejects the whole file with a SchemaError carrying its line number.
std::vector<ProgrammingTask> load_tasks(const std::filesystem::path& path);
std::vector<ProgrammingTask> load_tasks(std::istream& in);

void write_tasks(const std::vector<ProgrammingTask>& tasks, const std::filesystem::path& path);
void write_tasks(const std::vector<ProgrammingTask>& tasks, std::ostream& out);

/// Keeps tasks whose ground-truth tests are stdio pairs and whose solution is
/// non-empty. Order preserved.
std::vector<ProgrammingTask> filter_stdio_tasks(std::vector<ProgrammingTask> tasks);

struct TaskSplit {
  std::vector<ProgrammingTask> train;
  std::vector<ProgrammingTask> validation;
};

/// Seeded shuffle then cut at round(train_fraction * n), kept within [1, n-1].
TaskSplit split(std::vector<ProgrammingTask> tasks, double train_fraction, std::uint64_t seed);

/// Test list JSON: `[{"input": ..., "output": ...}, ...]`.
UnitTest unit_test_from_json(const nlohmann::json& j);
nlohmann::json unit_test_to_json(const UnitTest& ut);

}  // namespace utrl
