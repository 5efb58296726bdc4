#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "utrl/testparse.hpp"

namespace utrl::gen {

using testparse::PromptText;

struct SamplingSpec {
  int n_samples = 1;
  double temperature = 1.0;
  int max_tokens = 8192;
  std::optional<std::uint64_t> seed;  // honored by backends that can
};

nlohmann::json spec_to_json(const SamplingSpec& spec);
SamplingSpec spec_from_json(const nlohmann::json& j);

struct Completion {
  std::string text;
  std::string backend_id;
  double latency_ms = 0.0;
  std::string finish_reason = "stop";
};

/// Advantage-weighted feedback for backends that learn in-process.
struct Feedback {
  PromptText prompt;
  std::string completion;
  double advantage = 0.0;
};

/// Hash identifying a prompt in cassettes and logs.
std::string prompt_hash(const PromptText& prompt);

class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::string id() const = 0;

  /// Exactly spec.n_samples completions, in the order received. Safe to call
  /// concurrently.
  virtual std::vector<Completion> sample(const PromptText& prompt, const SamplingSpec& spec) = 0;

  /// Policy update hook. No-op for backends whose weights live elsewhere.
  virtual void learn(std::span<const Feedback> feedback) { (void)feedback; }

  /// Independent copy whose later learning does not affect this one.
  virtual std::unique_ptr<Backend> snapshot() const = 0;

  /// Serializable learner state, for checkpoints.
  virtual nlohmann::json state() const { return nullptr; }
  virtual void restore(const nlohmann::json& state) { (void)state; }
};

/// Serves completions from a cassette by (prompt hash, sampling spec).
/// Identical requests are served in recording order.
class ReplayBackend final : public Backend {
 public:
  explicit ReplayBackend(const std::filesystem::path& cassette);

  std::string id() const override { return "replay"; }
  std::vector<Completion> sample(const PromptText& prompt, const SamplingSpec& spec) override;
  std::unique_ptr<Backend> snapshot() const override;
  nlohmann::json state() const override;
  void restore(const nlohmann::json& state) override;

  std::size_t size() const;

 private:
  ReplayBackend() = default;
  static std::string request_key(const std::string& prompt_hash, const SamplingSpec& spec);

  struct Shared {
    std::map<std::string, std::vector<std::vector<std::string>>> exchanges;
  };
  std::shared_ptr<const Shared> shared_;
  mutable std::mutex mu_;
  std::map<std::string, std::size_t> served_;
};

/// Wraps another backend and appends every exchange to a JSONL cassette.
class RecordingBackend final : public Backend {
 public:
  RecordingBackend(std::shared_ptr<Backend> inner, std::filesystem::path cassette);

  std::string id() const override { return inner_->id(); }
  std::vector<Completion> sample(const PromptText& prompt, const SamplingSpec& spec) override;
  void learn(std::span<const Feedback> feedback) override { inner_->learn(feedback); }
  std::unique_ptr<Backend> snapshot() const override;
  nlohmann::json state() const override { return inner_->state(); }
  void restore(const nlohmann::json& state) override { inner_->restore(state); }

 private:
  std::shared_ptr<Backend> inner_;
  std::filesystem::path cassette_;
  std::shared_ptr<std::mutex> file_mu_;
};

struct HttpOptions {
  std::string endpoint;  // e.g. http://127.0.0.1:8000/v1/chat/completions
  std::string api_key;
  std::string model;
  std::size_t max_in_flight = 8;
  std::chrono::milliseconds request_timeout{120'000};
  int max_retries = 3;
  std::chrono::milliseconds backoff_base{1'000};

  /// Reads UTRL_ENDPOINT, UTRL_API_KEY and UTRL_MODEL.
  static HttpOptions from_env();
};

/// Chat-completions JSON client.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpOptions options);

  std::string id() const override { return "http:" + options_.model; }
  std::vector<Completion> sample(const PromptText& prompt, const SamplingSpec& spec) override;
  std::unique_ptr<Backend> snapshot() const override;

 private:
  nlohmann::json post_with_retries(const nlohmann::json& body);

  HttpOptions options_;
  std::string host_;
  std::string path_;
  std::shared_ptr<std::counting_semaphore<1024>> in_flight_;
};

}  // namespace utrl::gen
