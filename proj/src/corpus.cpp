#include "utrl/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_set>

#include "utrl/errors.hpp"

namespace utrl {

using nlohmann::json;

namespace {

const json& require(const json& record, const char* key, std::size_t line) {
  auto it = record.find(key);
  if (it == record.end()) throw SchemaError(line, std::string("missing field '") + key + "'");
  return *it;
}

std::string require_string(const json& record, const char* key, std::size_t line) {
  const json& v = require(record, key, line);
  if (!v.is_string()) throw SchemaError(line, std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

// A test field that is not a string (argument lists, return values) marks the
// record as functional-style.
std::string test_field(const json& v, bool& functional) {
  if (v.is_string()) return v.get<std::string>();
  functional = true;
  return v.dump();
}

}  // namespace

ProgrammingTask task_from_json(const json& record, std::size_t line) {
  if (!record.is_object()) throw SchemaError(line, "record is not a JSON object");
  ProgrammingTask task;
  task.task_id = require_string(record, "task_id", line);
  if (task.task_id.empty()) throw SchemaError(line, "empty task_id");
  task.instruction = require_string(record, "instruction", line);
  if (task.instruction.empty()) throw SchemaError(line, "empty instruction");

  const json& solution = require(record, "solution", line);
  if (solution.is_string()) {
    task.ground_truth_code = solution.get<std::string>();
  } else if (solution.is_array()) {
    // Multiple reference solutions: the first one is C*.
    if (!solution.empty()) {
      if (!solution.front().is_string()) throw SchemaError(line, "solution entries must be strings");
      task.ground_truth_code = solution.front().get<std::string>();
    }
  } else {
    throw SchemaError(line, "field 'solution' must be a string or list of strings");
  }

  const json& tests = require(record, "tests", line);
  if (!tests.is_array()) throw SchemaError(line, "field 'tests' must be a list");
  if (tests.empty()) throw SchemaError(line, "field 'tests' is empty");
  bool functional = false;
  for (const json& t : tests) {
    if (!t.is_object() || !t.contains("input") || !t.contains("output")) {
      throw SchemaError(line, "each test must be an object with 'input' and 'output'");
    }
    task.ground_truth_tests.cases.push_back(
        {test_field(t["input"], functional), test_field(t["output"], functional)});
  }
  if (record.contains("fn_name")) functional = true;
  if (auto it = record.find("test_format"); it != record.end()) {
    if (*it == "functional") {
      functional = true;
    } else if (*it != "stdio") {
      throw SchemaError(line, "field 'test_format' must be 'stdio' or 'functional'");
    }
  }
  task.test_format = functional ? TestFormat::kFunctional : TestFormat::kStdio;

  if (auto it = record.find("source"); it != record.end() && !it->is_null()) {
    if (!it->is_string()) throw SchemaError(line, "field 'source' must be a string");
    task.source = it->get<std::string>();
  }
  return task;
}

json task_to_json(const ProgrammingTask& task) {
  json j;
  j["task_id"] = task.task_id;
  j["instruction"] = task.instruction;
  j["solution"] = task.ground_truth_code;
  j["tests"] = unit_test_to_json(task.ground_truth_tests);
  if (task.test_format == TestFormat::kFunctional) j["test_format"] = "functional";
  if (task.source) j["source"] = *task.source;
  return j;
}

std::vector<ProgrammingTask> load_tasks(std::istream& in) {
  std::vector<ProgrammingTask> tasks;
  std::unordered_set<std::string> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      throw SchemaError(line, std::string("invalid JSON: ") + e.what());
    }
    ProgrammingTask task = task_from_json(record, line);
    if (!seen.insert(task.task_id).second) {
      throw SchemaError(line, "duplicate task_id '" + task.task_id + "'");
    }
    tasks.push_back(std::move(task));
  }
  if (in.bad()) throw Error("I/O failure while reading corpus");
  return tasks;
}

std::vector<ProgrammingTask> load_tasks(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus file " + path.string());
  return load_tasks(in);
}

void write_tasks(const std::vector<ProgrammingTask>& tasks, std::ostream& out) {
  for (const auto& t : tasks) out << task_to_json(t).dump() << '\n';
}

void write_tasks(const std::vector<ProgrammingTask>& tasks, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  write_tasks(tasks, out);
}

std::vector<ProgrammingTask> filter_stdio_tasks(std::vector<ProgrammingTask> tasks) {
  std::erase_if(tasks, [](const ProgrammingTask& t) {
    return t.test_format != TestFormat::kStdio || t.ground_truth_code.empty();
  });
  return tasks;
}

TaskSplit split(std::vector<ProgrammingTask> tasks, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error("train_fraction must lie in (0, 1)");
  }
  if (tasks.size() < 2) throw Error("split needs at least 2 tasks");
  std::mt19937_64 rng(seed);
  std::shuffle(tasks.begin(), tasks.end(), rng);
  const auto n = tasks.size();
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  TaskSplit out;
  out.train.assign(std::make_move_iterator(tasks.begin()),
                   std::make_move_iterator(tasks.begin() + static_cast<std::ptrdiff_t>(n_train)));
  out.validation.assign(std::make_move_iterator(tasks.begin() + static_cast<std::ptrdiff_t>(n_train)),
                        std::make_move_iterator(tasks.end()));
  return out;
}

UnitTest unit_test_from_json(const json& j) {
  if (!j.is_array()) throw Error("unit test JSON must be a list of {input, output}");
  UnitTest ut;
  bool any_reasoning = false;
  for (const json& t : j) {
    if (!t.is_object() || !t.contains("input") || !t.contains("output") || !t["input"].is_string() ||
        !t["output"].is_string()) {
      throw Error("unit test entries need string 'input' and 'output'");
    }
    ut.cases.push_back({t["input"].get<std::string>(), t["output"].get<std::string>()});
    std::string r = t.value("reasoning", std::string{});
    any_reasoning = any_reasoning || t.contains("reasoning");
    ut.reasoning.push_back(std::move(r));
  }
  if (!any_reasoning) ut.reasoning.clear();
  return ut;
}

json unit_test_to_json(const UnitTest& ut) {
  json arr = json::array();
  for (std::size_t i = 0; i < ut.cases.size(); ++i) {
    json t = {{"input", ut.cases[i].input}, {"output", ut.cases[i].expected_output}};
    if (ut.has_reasoning()) t["reasoning"] = ut.reasoning[i];
    arr.push_back(std::move(t));
  }
  return arr;
}

}  // namespace utrl
