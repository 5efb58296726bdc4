#include "utrl/testparse.hpp"

#include <algorithm>
#include <cctype>

namespace utrl::testparse {

namespace {

// Prompt texts, verbatim (including the original line wrapping).
constexpr std::string_view kUnitTestSystemPrompt = R"PROMPT(You are an expert Python programmer capable of generating test cases 
for Python programming tasks.
Given a programming task, generate several independent test cases with 
corresponding reasoning.
Each test case should be independent of the others and sharply target 
distinct corner cases so that arbitrary faulty code 
solutions can be detected.
Before writing each test case, think deeply 
about the input arguments that expose extreme or subtle edge cases, 
and reason about the expected output.
After completing the reasoning process, generate the test case 
in stdio format.
Specifically, your output should follow the format below:

<reasoning>
Reasoning for test case 1
First, reason about the input arguments that can discriminate an 
incorrect code solution (e.g., edge cases). 
Ensure the input arguments test aspects independent of 
previous test cases. 
Then, derive the expected output from the problem description.
</reasoning>
```
Input:
stdio format input 1

Output:
stdio format output 1
```

<reasoning>
Reasoning for test case 2
First, reason about the input arguments that can discriminate an 
incorrect code solution (e.g., edge cases). 
Ensure the input arguments test aspects independent of 
previous test cases. 
Then, derive the expected output from the problem description.
</reasoning>
```
Input:
stdio format input 2

Output:
stdio format output 2
```
...

<reasoning>
Reasoning for test case 12
First, reason about the input arguments that can discriminate an 
incorrect code solution (e.g., edge cases). 
Ensure the input arguments test aspects independent of 
previous test cases. 
Then, derive the expected output from the problem description.
</reasoning>
```
Input:
stdio format input 12

Output:
stdio format output 12
```

Ensure the following:
1. Do not include solution code in your response; generate 
exactly 12 test cases.
2. For each test case, provide a detailed rationale.
3. Each test case must be independent; avoid duplicates.)PROMPT";

constexpr std::string_view kUnitTestUserTemplate = R"PROMPT(Here is the problem description:

{problem_query}

Based on comprehensive reasoning, generate comprehensive unit test
involving several test cases for the given problem.
The test cases should cover various edge cases, 
corner cases, and normal cases, at the same time, functionally correct.)PROMPT";

constexpr std::string_view kCodeSystemPrompt = R"PROMPT(You are an expert Python programmer.
Based on the problem description, solve the coding 
problem efficiently.
Think step by step, then write a Python solution that 
solves the problem. 
Follow the format below:

<reasoning> 
Write your reasoning here. 
</reasoning>

```python
Write your Python solution here. It should run with stdio-format input.
```)PROMPT";

constexpr std::string_view kCodeUserTemplate = R"PROMPT(Here is the problem description:

{problem_query})PROMPT";

constexpr std::string_view kQuerySlot = "{problem_query}";

std::string substitute_query(std::string_view tmpl, std::string_view instruction) {
  std::string out(tmpl);
  if (auto pos = out.find(kQuerySlot); pos != std::string::npos) {
    out.replace(pos, kQuerySlot.size(), instruction);
  }
  return out;
}

struct Line {
  std::string_view text;
  std::size_t begin;  // byte offset of the line start
  std::size_t end;    // byte offset just past the line (excluding '\n')
};

std::vector<Line> split_lines(std::string_view s) {
  std::vector<Line> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back({s.substr(start), start, s.size()});
      break;
    }
    lines.push_back({s.substr(start, nl - start), start, nl});
    start = nl + 1;
  }
  return lines;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

std::string_view ltrim(std::string_view s) {
  std::size_t b = 0;
  while (b < s.size() && is_space(s[b])) ++b;
  return s.substr(b);
}

bool is_fence(std::string_view line) { return ltrim(line).starts_with("```"); }

bool is_closing_fence(std::string_view line) { return trim(line) == "```"; }

struct FencedBlock {
  std::size_t open_offset;   // start of the opening fence line
  std::size_t close_offset;  // end of the closing fence line (or text end)
  std::string info;          // text after the opening backticks
  std::vector<std::string_view> body;
  bool terminated;
};

std::vector<FencedBlock> find_blocks(std::string_view text) {
  std::vector<FencedBlock> blocks;
  const auto lines = split_lines(text);
  std::size_t i = 0;
  while (i < lines.size()) {
    if (!is_fence(lines[i].text)) {
      ++i;
      continue;
    }
    FencedBlock b;
    b.open_offset = lines[i].begin;
    b.info = std::string(trim(ltrim(lines[i].text).substr(3)));
    b.terminated = false;
    std::size_t j = i + 1;
    for (; j < lines.size(); ++j) {
      if (is_closing_fence(lines[j].text)) {
        b.terminated = true;
        break;
      }
      b.body.push_back(lines[j].text);
    }
    b.close_offset = b.terminated ? lines[j].end : text.size();
    blocks.push_back(std::move(b));
    i = j + 1;
  }
  return blocks;
}

std::string join_trimmed(const std::vector<std::string_view>& lines, std::size_t from, std::size_t to) {
  while (from < to && trim(lines[from]).empty()) ++from;
  while (to > from && trim(lines[to - 1]).empty()) --to;
  std::string out;
  for (std::size_t k = from; k < to; ++k) {
    if (k > from) out.push_back('\n');
    out.append(lines[k]);
  }
  return out;
}

// Content of the last <reasoning>...</reasoning> span inside `region`.
std::optional<std::string> last_reasoning(std::string_view region) {
  constexpr std::string_view kOpen = "<reasoning>", kClose = "</reasoning>";
  auto open = region.rfind(kOpen);
  if (open == std::string_view::npos) return std::nullopt;
  auto body_start = open + kOpen.size();
  auto close = region.find(kClose, body_start);
  if (close == std::string_view::npos) return std::nullopt;
  return std::string(trim(region.substr(body_start, close - body_start)));
}

std::string canonical_language(std::string_view info, std::string_view fallback) {
  std::string tag;
  for (char c : info) {
    if (is_space(c)) break;
    tag.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (tag == "python" || tag == "python3" || tag == "py") return "python";
  if (tag == "sh" || tag == "bash" || tag == "shell") return "sh";
  return std::string(fallback);
}

}  // namespace

std::string_view unit_test_system_prompt() { return kUnitTestSystemPrompt; }
std::string_view code_system_prompt() { return kCodeSystemPrompt; }

PromptText render_ut_prompt(const ProgrammingTask& task) {
  return {std::string(kUnitTestSystemPrompt), substitute_query(kUnitTestUserTemplate, task.instruction)};
}

PromptText render_code_prompt(const ProgrammingTask& task) {
  return {std::string(kCodeSystemPrompt), substitute_query(kCodeUserTemplate, task.instruction)};
}

UnitTestParse parse_unit_test(std::string_view completion) {
  UnitTestParse result;
  result.report.raw_length = completion.size();
  const auto blocks = find_blocks(completion);
  std::vector<std::optional<std::string>> reasoning;
  std::size_t previous_end = 0;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& b = blocks[k];
    const std::string_view gap = completion.substr(previous_end, b.open_offset - previous_end);
    previous_end = b.close_offset;
    if (!b.terminated) {
      result.report.dropped_blocks.push_back({k, "unterminated fence"});
      continue;
    }
    std::size_t input_at = b.body.size(), output_at = b.body.size();
    for (std::size_t i = 0; i < b.body.size(); ++i) {
      if (trim(b.body[i]) == "Input:") {
        input_at = i;
        break;
      }
    }
    if (input_at == b.body.size()) {
      result.report.dropped_blocks.push_back({k, "missing Input: marker"});
      continue;
    }
    for (std::size_t i = input_at + 1; i < b.body.size(); ++i) {
      if (trim(b.body[i]) == "Output:") {
        output_at = i;
        break;
      }
    }
    if (output_at == b.body.size()) {
      result.report.dropped_blocks.push_back({k, "missing Output: marker"});
      continue;
    }
    result.unit_test.cases.push_back({join_trimmed(b.body, input_at + 1, output_at),
                                      join_trimmed(b.body, output_at + 1, b.body.size())});
    reasoning.push_back(last_reasoning(gap));
  }
  result.report.parsed_count = result.unit_test.cases.size();
  if (std::any_of(reasoning.begin(), reasoning.end(), [](const auto& r) { return r.has_value(); })) {
    for (auto& r : reasoning) result.unit_test.reasoning.push_back(r.value_or(""));
  }
  return result;
}

CodeParse parse_code(std::string_view completion, std::string_view default_language) {
  CodeParse result;
  result.report.raw_length = completion.size();
  const auto blocks = find_blocks(completion);
  // The last terminated block wins; earlier ones are scratch work.
  std::optional<std::size_t> chosen;
  for (std::size_t k = blocks.size(); k-- > 0;) {
    if (blocks[k].terminated) {
      chosen = k;
      break;
    }
  }
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    if (chosen && k == *chosen) continue;
    result.report.dropped_blocks.push_back(
        {k, blocks[k].terminated ? "superseded by a later block" : "unterminated fence"});
  }
  if (!chosen) return result;
  const auto& b = blocks[*chosen];
  std::string source;
  for (auto line : b.body) {
    source.append(line);
    source.push_back('\n');
  }
  result.code = judge::CodeSolution{std::move(source), canonical_language(b.info, default_language)};
  result.report.parsed_count = 1;
  return result;
}

std::string format_unit_test(const UnitTest& ut) {
  std::string out;
  for (std::size_t i = 0; i < ut.cases.size(); ++i) {
    if (ut.has_reasoning()) {
      out += "<reasoning>\n";
      out += ut.reasoning[i];
      out += "\n</reasoning>\n";
    }
    out += "```\nInput:\n";
    out += ut.cases[i].input;
    out += "\n\nOutput:\n";
    out += ut.cases[i].expected_output;
    out += "\n```\n\n";
  }
  return out;
}

std::string format_code_completion(std::string_view source, std::string_view reasoning, std::string_view fence_tag) {
  std::string out = "<reasoning>\n";
  out.append(reasoning);
  out += "\n</reasoning>\n\n```";
  out.append(fence_tag);
  out.push_back('\n');
  out.append(source);
  if (!source.empty() && source.back() != '\n') out.push_back('\n');
  out += "```\n";
  return out;
}

}  // namespace utrl::testparse
