#include "utrl/generators.hpp"

#include <algorithm>
#include <fstream>
#include <thread>

#include "httplib.h"
#include "utrl/errors.hpp"
#include "utrl/hashing.hpp"

namespace utrl::gen {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

json spec_to_json(const SamplingSpec& spec) {
  json j = {{"n", spec.n_samples}, {"temperature", spec.temperature}, {"max_tokens", spec.max_tokens}};
  j["seed"] = spec.seed ? json(*spec.seed) : json(nullptr);
  return j;
}

SamplingSpec spec_from_json(const json& j) {
  SamplingSpec s;
  s.n_samples = j.at("n").get<int>();
  s.temperature = j.at("temperature").get<double>();
  s.max_tokens = j.at("max_tokens").get<int>();
  if (j.contains("seed") && !j["seed"].is_null()) s.seed = j["seed"].get<std::uint64_t>();
  return s;
}

std::string prompt_hash(const PromptText& prompt) {
  std::string buf = prompt.system;
  buf.push_back('\0');
  buf += prompt.user;
  return short_hash(buf);
}

// ---------------------------------------------------------------------------
// Replay

ReplayBackend::ReplayBackend(const std::filesystem::path& cassette) {
  std::ifstream in(cassette, std::ios::binary);
  if (!in) throw Error("cannot open cassette " + cassette.string());
  auto shared = std::make_shared<Shared>();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      auto key = request_key(j.at("prompt_hash").get<std::string>(), spec_from_json(j.at("spec")));
      shared->exchanges[key].push_back(j.at("completions").get<std::vector<std::string>>());
    } catch (const json::exception& e) {
      throw SchemaError(lineno, std::string("bad cassette entry: ") + e.what());
    }
  }
  shared_ = std::move(shared);
}

std::string ReplayBackend::request_key(const std::string& hash, const SamplingSpec& spec) {
  return hash + "|" + spec_to_json(spec).dump();
}

std::vector<Completion> ReplayBackend::sample(const PromptText& prompt, const SamplingSpec& spec) {
  const std::string hash = prompt_hash(prompt);
  const std::string key = request_key(hash, spec);
  auto it = shared_->exchanges.find(key);
  if (it == shared_->exchanges.end()) throw CacheMissError(hash);
  std::size_t index;
  {
    std::lock_guard lock(mu_);
    index = served_[key]++;
  }
  if (index >= it->second.size()) throw CacheMissError(hash);
  const auto& texts = it->second[index];
  if (texts.size() != static_cast<std::size_t>(spec.n_samples)) {
    throw ProtocolError("cassette entry for " + hash + " holds " + std::to_string(texts.size()) +
                        " completions, expected " + std::to_string(spec.n_samples));
  }
  std::vector<Completion> out;
  for (const auto& t : texts) out.push_back({t, id(), 0.0, "stop"});
  return out;
}

std::unique_ptr<Backend> ReplayBackend::snapshot() const {
  std::unique_ptr<ReplayBackend> copy(new ReplayBackend());
  copy->shared_ = shared_;
  std::lock_guard lock(mu_);
  copy->served_ = served_;
  return copy;
}

json ReplayBackend::state() const {
  std::lock_guard lock(mu_);
  return json{{"served", served_}};
}

void ReplayBackend::restore(const json& state) {
  std::lock_guard lock(mu_);
  served_.clear();
  if (state.is_object() && state.contains("served")) {
    served_ = state["served"].get<std::map<std::string, std::size_t>>();
  }
}

std::size_t ReplayBackend::size() const {
  std::size_t n = 0;
  for (const auto& [k, v] : shared_->exchanges) n += v.size();
  return n;
}

// ---------------------------------------------------------------------------
// Recording

namespace {

// One mutex per cassette file, shared by every recorder in the process.
std::shared_ptr<std::mutex> cassette_mutex(const std::filesystem::path& path) {
  static std::mutex registry_mu;
  static std::map<std::string, std::shared_ptr<std::mutex>> registry;
  std::lock_guard lock(registry_mu);
  auto& m = registry[std::filesystem::absolute(path).lexically_normal().string()];
  if (!m) m = std::make_shared<std::mutex>();
  return m;
}

}  // namespace

RecordingBackend::RecordingBackend(std::shared_ptr<Backend> inner, std::filesystem::path cassette)
    : inner_(std::move(inner)), cassette_(std::move(cassette)), file_mu_(cassette_mutex(cassette_)) {}

std::vector<Completion> RecordingBackend::sample(const PromptText& prompt, const SamplingSpec& spec) {
  auto completions = inner_->sample(prompt, spec);
  json entry = {{"prompt_hash", prompt_hash(prompt)},
                {"system", prompt.system},
                {"user", prompt.user},
                {"spec", spec_to_json(spec)}};
  json texts = json::array();
  for (const auto& c : completions) texts.push_back(c.text);
  entry["completions"] = std::move(texts);
  std::lock_guard lock(*file_mu_);
  std::ofstream out(cassette_, std::ios::binary | std::ios::app);
  out << entry.dump() << '\n';
  if (!out) throw Error("cannot append to cassette " + cassette_.string());
  return completions;
}

std::unique_ptr<Backend> RecordingBackend::snapshot() const {
  auto copy = std::make_unique<RecordingBackend>(std::shared_ptr<Backend>(inner_->snapshot()), cassette_);
  copy->file_mu_ = file_mu_;
  return copy;
}

// ---------------------------------------------------------------------------
// HTTP

HttpOptions HttpOptions::from_env() {
  HttpOptions o;
  auto get = [](const char* name) {
    const char* v = std::getenv(name);
    return std::string(v ? v : "");
  };
  o.endpoint = get("UTRL_ENDPOINT");
  o.api_key = get("UTRL_API_KEY");
  o.model = get("UTRL_MODEL");
  if (o.endpoint.empty()) throw ConfigError("UTRL_ENDPOINT", "environment variable not set");
  return o;
}

HttpBackend::HttpBackend(HttpOptions options)
    : options_(std::move(options)),
      in_flight_(std::make_shared<std::counting_semaphore<1024>>(
          static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(options_.max_in_flight, 1, 1024)))) {
  const auto scheme_end = options_.endpoint.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint", "expected scheme://host[:port]/path");
  const auto path_start = options_.endpoint.find('/', scheme_end + 3);
  host_ = options_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/v1/chat/completions" : options_.endpoint.substr(path_start);
}

std::unique_ptr<Backend> HttpBackend::snapshot() const {
  auto copy = std::make_unique<HttpBackend>(options_);
  copy->in_flight_ = in_flight_;
  return copy;
}

json HttpBackend::post_with_retries(const json& body) {
  const std::string payload = body.dump();
  std::string last_error;
  for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(options_.backoff_base * (1 << (attempt - 1)));
    httplib::Result res;
    {
      in_flight_->acquire();
      httplib::Client client(host_);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.request_timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.request_timeout - secs);
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      client.set_connection_timeout(10, 0);
      httplib::Headers headers;
      if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);
      res = client.Post(path_, headers, payload, "application/json");
      in_flight_->release();
    }
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw ProtocolError("HTTP " + std::to_string(res->status) + " from " + options_.endpoint + ": " +
                          res->body.substr(0, 200));
    }
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw ProtocolError(std::string("malformed response body: ") + e.what());
    }
  }
  throw BackendUnavailableError("request to " + options_.endpoint + " failed after " +
                                std::to_string(options_.max_retries + 1) + " attempts: " + last_error);
}

std::vector<Completion> HttpBackend::sample(const PromptText& prompt, const SamplingSpec& spec) {
  std::vector<Completion> out;
  while (out.size() < static_cast<std::size_t>(spec.n_samples)) {
    const int want = spec.n_samples - static_cast<int>(out.size());
    json body = {{"model", options_.model},
                 {"messages",
                  json::array({{{"role", "system"}, {"content", prompt.system}},
                               {{"role", "user"}, {"content", prompt.user}}})},
                 {"n", want},
                 {"temperature", spec.temperature},
                 {"max_tokens", spec.max_tokens}};
    if (spec.seed) body["seed"] = *spec.seed;
    const auto start = Clock::now();
    const json response = post_with_retries(body);
    const double latency = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    if (!response.contains("choices") || !response["choices"].is_array() || response["choices"].empty()) {
      throw ProtocolError("response for prompt " + prompt_hash(prompt) + " has no choices");
    }
    for (const auto& choice : response["choices"]) {
      if (out.size() == static_cast<std::size_t>(spec.n_samples)) break;
      const auto msg = choice.find("message");
      if (msg == choice.end() || !msg->contains("content")) {
        throw ProtocolError("choice without message.content for prompt " + prompt_hash(prompt));
      }
      Completion c;
      c.text = (*msg)["content"].is_string() ? (*msg)["content"].get<std::string>() : "";
      c.backend_id = id();
      c.latency_ms = latency;
      c.finish_reason = choice.value("finish_reason", json("stop")).is_string()
                            ? choice.value("finish_reason", std::string("stop"))
                            : "stop";
      out.push_back(std::move(c));
    }
  }
  return out;
}

}  // namespace utrl::gen
