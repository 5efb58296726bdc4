#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "utrl/corpus.hpp"
#include "utrl/judge.hpp"

namespace utrl::testparse {

struct PromptText {
  std::string system;
  std::string user;

  friend bool operator==(const PromptText&, const PromptText&) = default;
};

struct DroppedBlock {
  std::size_t block_index;
  std::string reason;
};

struct ParseReport {
  std::size_t parsed_count = 0;
  std::vector<DroppedBlock> dropped_blocks;
  std::size_t raw_length = 0;

  std::size_t total_blocks() const noexcept { return parsed_count + dropped_blocks.size(); }
};

std::string_view unit_test_system_prompt();
std::string_view code_system_prompt();

/// System prompt verbatim; the instruction goes into the `{problem_query}` slot
/// of the user template, unescaped.
PromptText render_ut_prompt(const ProgrammingTask& task);
PromptText render_code_prompt(const ProgrammingTask& task);

struct UnitTestParse {
  UnitTest unit_test;
  ParseReport report;
};

/// Total on arbitrary input. Each fenced block holding an `Input:` marker line
/// followed by an `Output:` marker line becomes one test case; anything else is
/// reported as dropped.
UnitTestParse parse_unit_test(std::string_view completion);

struct CodeParse {
  std::optional<judge::CodeSolution> code;
  ParseReport report;
};

/// Contents of the last fenced block. The fence's info string selects the
/// language tag when it names a known one; otherwise `default_language`.
CodeParse parse_code(std::string_view completion, std::string_view default_language = "python");

/// Emits the block grammar the unit-test prompt asks for.
std::string format_unit_test(const UnitTest& ut);

/// A code-generation style completion: reasoning span plus one fenced block.
std::string format_code_completion(std::string_view source, std::string_view reasoning,
                                   std::string_view fence_tag = "python");

}  // namespace utrl::testparse
