#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "utrl/corpus.hpp"
#include "utrl/generators.hpp"
#include "utrl/grpo.hpp"

namespace utrl::toy {

/// Bundled synthetic task family: integer-list reductions, each with a fixed
/// menu of unit-test completions and code completions. The menus are the
/// action sets of the toy policies.
///
/// Code menu (same order for every task):
///   0 correct, 1 off-by-one, 2 crashes on empty input, 3 takes abs() of the
///   values, 4 wraps the result to 32 bits, 5 prose without a code block.
/// Unit-test menu:
///   0 two basic cases, 1 basic + empty-list cases, 2 basic + negative cases,
///   3 basic + empty + large-value cases (12 cases), 4 twelve cases whose
///   negative/large expectations are wrong, 5 prose without test blocks,
///   6 two empty-list cases.
struct ToyTask {
  ProgrammingTask task;
  std::vector<std::string> ut_completions;
  std::vector<std::string> code_completions;
};

struct ToyFamily {
  std::vector<ToyTask> tasks;
  std::vector<std::string> ut_action_names;
  std::vector<std::string> code_action_names;

  std::vector<ProgrammingTask> programming_tasks() const;
};

std::shared_ptr<const ToyFamily> make_toy_family();

enum class Role { kUnitTest, kCode };

/// Generator backend driven by a ToyPolicy over one of the family menus.
/// `learn` maps completions back to menu actions and applies the
/// advantage-weighted score-function update.
class ToyBackend final : public gen::Backend {
 public:
  ToyBackend(std::shared_ptr<const ToyFamily> family, Role role, grpo::ToyPolicy policy);

  std::string id() const override { return role_ == Role::kUnitTest ? "toy-ut" : "toy-code"; }
  std::vector<gen::Completion> sample(const gen::PromptText& prompt, const gen::SamplingSpec& spec) override;
  void learn(std::span<const gen::Feedback> feedback) override;
  std::unique_ptr<gen::Backend> snapshot() const override;
  nlohmann::json state() const override;
  void restore(const nlohmann::json& state) override;

  grpo::ToyPolicy policy() const;

 private:
  const ToyTask* task_for(const gen::PromptText& prompt) const;
  const std::vector<std::string>& menu(const ToyTask& t) const;

  std::shared_ptr<const ToyFamily> family_;
  Role role_;
  mutable std::mutex mu_;
  grpo::ToyPolicy policy_;
};

/// Uniform initial policy over the relevant menu.
grpo::ToyPolicy initial_policy(const ToyFamily& family, Role role, double step_size);

}  // namespace utrl::toy
