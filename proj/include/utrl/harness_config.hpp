#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "utrl/corpus.hpp"
#include "utrl/judge.hpp"
#include "utrl/orchestrator.hpp"
#include "utrl/toy_family.hpp"

namespace utrl::cfg {

/// One generator role. kind: toy | replay | http | record.
///   toy:    {"step_size": real}
///   replay: {"cassette": path}
///   http:   {"endpoint", "model", "api_key_env", "max_in_flight", "timeout_ms", "max_retries",
///            "models_by_iteration" (code sampler only)}
///   record: {"cassette": path, "inner": {backend}}
struct BackendSpec {
  std::string kind = "toy";
  nlohmann::json options = nlohmann::json::object();
};

struct EvalOptions {
  int n_candidates = 32;
  bool filter_selector = true;
  bool filter_fidelity = true;
  bool by_source = false;
};

struct HarnessConfig {
  std::uint64_t seed = 0;
  /// Path to a JSONL corpus, or "builtin:toy".
  std::string corpus = "builtin:toy";
  judge::JudgeOptions judge;
  orch::LoopConfig loop;  // loop.reward and loop.seed mirror the top-level keys
  BackendSpec ut_backend;
  BackendSpec code_backend;
  std::optional<BackendSpec> sampler_backend;
  /// Passed through untouched for an external trainer.
  nlohmann::json trainer;
  EvalOptions eval;
};

/// Production profile: batch 128, temperature 1.0, M = 8, tau = 12, lambda 0.5.
HarnessConfig default_config();
/// Desk-scale profile for the bundled toy family.
HarnessConfig toy_profile();

/// Missing keys take defaults from `base`; unknown keys and invalid values
/// throw ConfigError naming the key.
HarnessConfig config_from_json(const nlohmann::json& j, const HarnessConfig& base = default_config());
nlohmann::json config_to_json(const HarnessConfig& c);
HarnessConfig load_config(const std::filesystem::path& path, const HarnessConfig& base = default_config());
std::string config_hash(const HarnessConfig& c);

/// Training corpus; the toy family when `corpus` is "builtin:toy".
std::vector<ProgrammingTask> load_corpus(const HarnessConfig& c, const std::filesystem::path& base_dir = {});

/// Backends for every role. Relative cassette paths resolve against `base_dir`.
orch::Backends make_backends(const HarnessConfig& c, const std::filesystem::path& base_dir = {});

}  // namespace utrl::cfg
