#include "utrl/toy_family.hpp"

#include <algorithm>
#include <functional>

#include "utrl/errors.hpp"
#include "utrl/testparse.hpp"

namespace utrl::toy {

namespace {

using Values = std::vector<long long>;

struct Op {
  std::string id;
  std::string description;
  std::string python_expr;  // over the list `a`
  std::function<long long(const Values&)> eval;
};

std::vector<Op> ops() {
  return {
      {"sum", "the sum of the integers", "sum(a)",
       [](const Values& a) {
         long long s = 0;
         for (auto x : a) s += x;
         return s;
       }},
      {"alt_sum", "the alternating sum a_1 - a_2 + a_3 - ...",
       "sum(x if i % 2 == 0 else -x for i, x in enumerate(a))",
       [](const Values& a) {
         long long s = 0;
         for (std::size_t i = 0; i < a.size(); ++i) s += i % 2 == 0 ? a[i] : -a[i];
         return s;
       }},
      {"double_sum", "twice the sum of the integers", "2 * sum(a)",
       [](const Values& a) {
         long long s = 0;
         for (auto x : a) s += x;
         return 2 * s;
       }},
      {"index_weighted", "the sum of (i - 1) * a_i over i = 1..n", "sum(i * x for i, x in enumerate(a))",
       [](const Values& a) {
         long long s = 0;
         for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long long>(i) * a[i];
         return s;
       }},
      {"even_positions", "the sum of a_2 + a_4 + a_6 + ...", "sum(a[1::2])",
       [](const Values& a) {
         long long s = 0;
         for (std::size_t i = 1; i < a.size(); i += 2) s += a[i];
         return s;
       }},
      {"span", "max(a) - min(a), or 0 when n = 0", "max(a) - min(a) if a else 0",
       [](const Values& a) {
         if (a.empty()) return 0LL;
         auto [lo, hi] = std::minmax_element(a.begin(), a.end());
         return *hi - *lo;
       }},
  };
}

const std::vector<Values> kBasic = {{1, 2, 3}, {5, 1, 4, 2}, {7, 8}, {1, 1, 2, 3, 5}, {9, 4, 6}, {2, 2}};
const std::vector<Values> kBoundary = {{}, {4}};
const std::vector<Values> kNegative = {{-1, -2, -3}, {5, -7, 2, -1}};
const std::vector<Values> kLarge = {{3000000000LL, 5000000000LL, 7000000000LL},
                                    {4000000000LL, 9000000000LL},
                                    {6000000000LL, 1, 8000000000LL},
                                    {2000000000LL, 2000000000LL, 3000000000LL, 2000000000LL}};

std::string render_input(const Values& a) {
  std::string s = std::to_string(a.size());
  if (a.empty()) return s + "\n";
  s += "\n";
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(a[i]);
  }
  return s + "\n";
}

long long wrap32(long long v) {
  return static_cast<long long>(static_cast<std::int32_t>(static_cast<std::uint32_t>(v)));
}

struct Probe {
  Values values;
  std::string label;
  std::function<long long(long long, const Values&)> expect_override;  // null: exact
};

UnitTest build_unit_test(const Op& op, const std::vector<Probe>& probes) {
  UnitTest ut;
  for (const auto& p : probes) {
    long long expected = op.eval(p.values);
    if (p.expect_override) expected = p.expect_override(expected, p.values);
    ut.cases.push_back({render_input(p.values), std::to_string(expected) + "\n"});
    ut.reasoning.push_back(p.label);
  }
  return ut;
}

std::vector<Probe> take(const std::vector<Values>& from, std::size_t n, const std::string& label) {
  std::vector<Probe> out;
  for (std::size_t i = 0; i < n && i < from.size(); ++i) out.push_back({from[i], label + " list", nullptr});
  return out;
}

template <typename... Vs>
std::vector<Probe> concat(Vs... parts) {
  std::vector<Probe> out;
  (out.insert(out.end(), parts.begin(), parts.end()), ...);
  return out;
}

std::string program(const Op& op, const std::string& variant) {
  std::string body = "import sys\n\n\ndef solve(a):\n";
  if (variant == "empty_crash") body += "    assert len(a) > 0\n";
  if (variant == "abs") body += "    a = [abs(x) for x in a]\n";
  body += "    return " + op.python_expr + "\n\n\n";
  body += "data = sys.stdin.read().split()\nn = int(data[0])\na = [int(x) for x in data[1:1 + n]]\n";
  body += "r = solve(a)\n";
  if (variant == "off_by_one") body += "r += 1\n";
  if (variant == "wrap32") body += "r = (r + 2**31) % 2**32 - 2**31\n";
  body += "print(r)\n";
  return body;
}

}  // namespace

std::vector<ProgrammingTask> ToyFamily::programming_tasks() const {
  std::vector<ProgrammingTask> out;
  for (const auto& t : tasks) out.push_back(t.task);
  return out;
}

std::shared_ptr<const ToyFamily> make_toy_family() {
  auto family = std::make_shared<ToyFamily>();
  family->code_action_names = {"correct", "off_by_one", "empty_crash", "abs", "wrap32", "no_code"};
  family->ut_action_names = {"basic", "basic+empty", "basic+negative", "thorough", "sloppy", "no_tests",
                             "empty_only"};

  for (const auto& op : ops()) {
    ToyTask t;
    t.task.task_id = "toy/" + op.id;
    t.task.instruction = "Read an integer n, then n integers a_1 ... a_n from standard input. n may be 0, the "
                         "integers may be negative, and their magnitude may exceed 32 bits. Print " +
                         op.description + ".";
    t.task.ground_truth_code = program(op, "correct");
    t.task.ground_truth_tests =
        build_unit_test(op, concat(take(kBasic, 4, "basic"), take(kBoundary, 2, "boundary"),
                                   take(kNegative, 2, "negative"), take(kLarge, 2, "large")));
    t.task.source = "toy";

    for (const auto& variant : {"correct", "off_by_one", "empty_crash", "abs", "wrap32"}) {
      t.code_completions.push_back(testparse::format_code_completion(
          program(op, variant), std::string("Compute ") + op.description + " directly."));
    }
    t.code_completions.push_back("Just print " + op.description + "; the input format is simple enough.\n");

    const auto f = op.eval;
    auto abs_wrong = [f](long long, const Values& a) {
      Values b;
      for (auto x : a) b.push_back(x < 0 ? -x : x);
      return f(b);
    };
    auto wrap_wrong = [](long long v, const Values&) { return wrap32(v); };
    std::vector<Probe> sloppy_neg, sloppy_large;
    for (const auto& v : kNegative) sloppy_neg.push_back({v, "negative list", abs_wrong});
    for (const auto& v : kLarge) sloppy_large.push_back({v, "large list", wrap_wrong});

    const std::vector<std::vector<Probe>> menus = {
        take(kBasic, 2, "basic"),
        concat(take(kBasic, 4, "basic"), take(kBoundary, 2, "boundary")),
        concat(take(kBasic, 4, "basic"), take(kNegative, 2, "negative")),
        concat(take(kBasic, 6, "basic"), take(kBoundary, 2, "boundary"), take(kLarge, 4, "large")),
        concat(take(kBasic, 4, "basic"), take(kBoundary, 2, "boundary"), sloppy_neg, sloppy_large),
    };
    for (const auto& probes : menus) t.ut_completions.push_back(testparse::format_unit_test(build_unit_test(op, probes)));
    t.ut_completions.push_back("Any small list works as a test here, so no further cases are needed.\n");
    t.ut_completions.push_back(testparse::format_unit_test(build_unit_test(op, take(kBoundary, 2, "boundary"))));

    family->tasks.push_back(std::move(t));
  }
  return family;
}

grpo::ToyPolicy initial_policy(const ToyFamily& family, Role role, double step_size) {
  grpo::ToyPolicy p;
  p.logits.assign(role == Role::kUnitTest ? family.ut_action_names.size() : family.code_action_names.size(), 0.0);
  p.step_size = step_size;
  return p;
}

ToyBackend::ToyBackend(std::shared_ptr<const ToyFamily> family, Role role, grpo::ToyPolicy policy)
    : family_(std::move(family)), role_(role), policy_(std::move(policy)) {
  const std::size_t n = role_ == Role::kUnitTest ? family_->ut_action_names.size() : family_->code_action_names.size();
  if (policy_.logits.size() != n) throw ConfigError("toy.policy", "logit count does not match the action menu");
}

const ToyTask* ToyBackend::task_for(const gen::PromptText& prompt) const {
  for (const auto& t : family_->tasks) {
    const auto expected = role_ == Role::kUnitTest ? testparse::render_ut_prompt(t.task) : testparse::render_code_prompt(t.task);
    if (expected == prompt) return &t;
  }
  return nullptr;
}

const std::vector<std::string>& ToyBackend::menu(const ToyTask& t) const {
  return role_ == Role::kUnitTest ? t.ut_completions : t.code_completions;
}

std::vector<gen::Completion> ToyBackend::sample(const gen::PromptText& prompt, const gen::SamplingSpec& spec) {
  const ToyTask* task = task_for(prompt);
  if (!task) throw ProtocolError(id() + ": prompt does not belong to the toy family");
  grpo::ToyPolicy policy = this->policy();
  const auto actions = grpo::toy_policy_sample(policy, static_cast<std::size_t>(spec.n_samples), spec.seed.value_or(0));
  std::vector<gen::Completion> out;
  for (auto a : actions) out.push_back({menu(*task)[a], id(), 0.0, "stop"});
  return out;
}

void ToyBackend::learn(std::span<const gen::Feedback> feedback) {
  std::vector<std::size_t> actions;
  std::vector<double> advantages;
  for (const auto& fb : feedback) {
    const ToyTask* task = task_for(fb.prompt);
    if (!task) continue;
    const auto& m = menu(*task);
    const auto it = std::find(m.begin(), m.end(), fb.completion);
    if (it == m.end()) continue;
    actions.push_back(static_cast<std::size_t>(it - m.begin()));
    advantages.push_back(fb.advantage);
  }
  std::lock_guard lock(mu_);
  policy_ = grpo::toy_policy_update(std::move(policy_), actions, advantages);
}

std::unique_ptr<gen::Backend> ToyBackend::snapshot() const {
  return std::make_unique<ToyBackend>(family_, role_, policy());
}

nlohmann::json ToyBackend::state() const {
  const auto p = policy();
  return {{"logits", p.logits}, {"step_size", p.step_size}, {"temperature", p.temperature}};
}

void ToyBackend::restore(const nlohmann::json& state) {
  grpo::ToyPolicy p;
  p.logits = state.at("logits").get<std::vector<double>>();
  p.step_size = state.at("step_size").get<double>();
  p.temperature = state.at("temperature").get<double>();
  std::lock_guard lock(mu_);
  if (p.logits.size() != policy_.logits.size()) throw ConfigError("toy.policy", "checkpoint logit count mismatch");
  policy_ = std::move(p);
}

grpo::ToyPolicy ToyBackend::policy() const {
  std::lock_guard lock(mu_);
  return policy_;
}

}  // namespace utrl::toy
