#include "utrl/harness_config.hpp"

#include <fstream>
#include <set>

#include "utrl/errors.hpp"
#include "utrl/generators.hpp"
#include "utrl/hashing.hpp"

namespace utrl::cfg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void allow_only(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where.empty() ? "<root>" : where, "expected an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(where.empty() ? k : where + "." + k, "unknown key");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where.empty() ? key : where + "." + key, std::string("wrong type: ") + e.what());
  }
}

json backend_to_json(const BackendSpec& b) {
  json j = b.options;
  j["kind"] = b.kind;
  return j;
}

BackendSpec backend_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where, "expected an object");
  BackendSpec b;
  read(j, "kind", b.kind, where);
  static const std::set<std::string> kinds = {"toy", "replay", "http", "record"};
  if (!kinds.count(b.kind)) throw ConfigError(where + ".kind", "unknown backend kind '" + b.kind + "'");
  b.options = j;
  b.options.erase("kind");
  if ((b.kind == "replay" || b.kind == "record") && !b.options.contains("cassette")) {
    throw ConfigError(where + ".cassette", "required for " + b.kind);
  }
  if (b.kind == "record" && !b.options.contains("inner")) throw ConfigError(where + ".inner", "required for record");
  return b;
}

json schedule_json(const orch::PhaseSchedule& s) {
  return {{"max_steps", s.max_steps},
          {"early_stop", s.early_stop},
          {"min_improvement", s.min_improvement},
          {"window", s.window},
          {"ema_alpha", s.ema_alpha}};
}

void read_schedule(const json& j, orch::PhaseSchedule& s, const std::string& where) {
  allow_only(j, where, {"max_steps", "early_stop", "min_improvement", "window", "ema_alpha"});
  read(j, "max_steps", s.max_steps, where);
  read(j, "early_stop", s.early_stop, where);
  read(j, "min_improvement", s.min_improvement, where);
  read(j, "window", s.window, where);
  read(j, "ema_alpha", s.ema_alpha, where);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::shared_ptr<const toy::ToyFamily> toy_family() {
  static const auto family = toy::make_toy_family();
  return family;
}

gen::HttpOptions http_options(const json& o) {
  gen::HttpOptions h;
  const char* env_endpoint = std::getenv("UTRL_ENDPOINT");
  const char* env_model = std::getenv("UTRL_MODEL");
  h.endpoint = o.value("endpoint", std::string(env_endpoint ? env_endpoint : ""));
  h.model = o.value("model", std::string(env_model ? env_model : ""));
  const std::string key_env = o.value("api_key_env", std::string("UTRL_API_KEY"));
  if (const char* key = std::getenv(key_env.c_str())) h.api_key = key;
  h.max_in_flight = o.value("max_in_flight", h.max_in_flight);
  h.request_timeout = std::chrono::milliseconds(o.value("timeout_ms", static_cast<long>(h.request_timeout.count())));
  h.max_retries = o.value("max_retries", h.max_retries);
  if (h.endpoint.empty()) throw ConfigError("backends.endpoint", "no endpoint configured and UTRL_ENDPOINT unset");
  return h;
}

std::shared_ptr<gen::Backend> build(const BackendSpec& b, toy::Role role, const fs::path& base) {
  if (b.kind == "toy") {
    const double step = b.options.value("step_size", 0.1);
    return std::make_shared<toy::ToyBackend>(toy_family(), role, toy::initial_policy(*toy_family(), role, step));
  }
  if (b.kind == "replay") {
    return std::make_shared<gen::ReplayBackend>(resolve(base, b.options.at("cassette").get<std::string>()));
  }
  if (b.kind == "http") return std::make_shared<gen::HttpBackend>(http_options(b.options));
  const auto inner = backend_from_json(b.options.at("inner"), "backends.inner");
  return std::make_shared<gen::RecordingBackend>(build(inner, role, base),
                                                 resolve(base, b.options.at("cassette").get<std::string>()));
}

}  // namespace

HarnessConfig default_config() {
  HarnessConfig c;
  c.loop.batch_size = 128;
  c.loop.group_size = 8;
  c.loop.iterations = 2;
  c.loop.ut_schedule.max_steps = 50;
  c.loop.code_schedule.max_steps = 50;
  c.loop.ut_temperature = c.loop.code_temperature = c.loop.sampler_temperature = 1.0;
  c.loop.reward = {};
  c.trainer = {{"optimizer", "AdamW"},
               {"learning_rate_by_iteration", {1e-6, 5e-6}},
               {"batch_size", 128},
               {"warmup_ratio", 1e-2},
               {"kl_coef", 1e-3},
               {"sampling_temperature", 1.0}};
  return c;
}

HarnessConfig toy_profile() {
  HarnessConfig c = default_config();
  c.corpus = "builtin:toy";
  c.loop.batch_size = 6;
  c.loop.group_size = 8;
  c.loop.iterations = 2;
  c.loop.ut_schedule.max_steps = 30;
  c.loop.code_schedule.max_steps = 30;
  c.loop.max_tokens = 1024;
  c.judge.cache_outcomes = true;
  c.judge.limits.wall_time = std::chrono::milliseconds(5000);
  // Toy programs use only builtins; skipping site import cuts interpreter startup several-fold.
  c.judge.runners["python"] = judge::RunnerSpec{{"python3", "-I", "-S", "{source}"}, "main.py"};
  c.ut_backend = {"toy", {{"step_size", 0.01}}};
  c.code_backend = {"toy", {{"step_size", 0.01}}};
  return c;
}

json config_to_json(const HarnessConfig& c) {
  json runners = json::object();
  for (const auto& [tag, r] : c.judge.runners) runners[tag] = {{"command", r.command}, {"source_file", r.source_file}};
  json j = {
      {"seed", c.seed},
      {"corpus", c.corpus},
      {"judge",
       {{"runners", runners},
        {"wall_time_ms", c.judge.limits.wall_time.count()},
        {"memory_mb", c.judge.limits.memory_bytes >> 20},
        {"stdout_cap_bytes", c.judge.limits.stdout_cap},
        {"compare", c.judge.compare.mode == judge::CompareMode::kLines ? "lines" : "numeric"},
        {"abs_tolerance", c.judge.compare.abs_tolerance},
        {"parallelism", c.judge.parallelism},
        {"isolate_network", c.judge.isolate_network},
        {"cache_outcomes", c.judge.cache_outcomes}}},
      {"reward",
       {{"tau", c.loop.reward.tau},
        {"lambda_weight", c.loop.reward.lambda_weight},
        {"m_samples", c.loop.reward.m_samples},
        {"validity_enabled", c.loop.reward.validity_enabled},
        {"clipping_enabled", c.loop.reward.clipping_enabled}}},
      {"loop",
       {{"group_size", c.loop.group_size},
        {"batch_size", c.loop.batch_size},
        {"iterations", c.loop.iterations},
        {"ut_phase", schedule_json(c.loop.ut_schedule)},
        {"code_phase", schedule_json(c.loop.code_schedule)},
        {"ut_temperature", c.loop.ut_temperature},
        {"code_temperature", c.loop.code_temperature},
        {"sampler_temperature", c.loop.sampler_temperature},
        {"max_tokens", c.loop.max_tokens},
        {"sampling_parallelism", c.loop.sampling_parallelism},
        {"default_language", c.loop.default_language}}},
      {"backends", {{"ut", backend_to_json(c.ut_backend)}, {"code", backend_to_json(c.code_backend)}}},
      {"trainer", c.trainer},
      {"eval",
       {{"n_candidates", c.eval.n_candidates},
        {"filter_selector", c.eval.filter_selector},
        {"filter_fidelity", c.eval.filter_fidelity},
        {"by_source", c.eval.by_source}}},
  };
  if (c.sampler_backend) j["backends"]["code_sampler"] = backend_to_json(*c.sampler_backend);
  return j;
}

HarnessConfig config_from_json(const json& j, const HarnessConfig& base) {
  HarnessConfig c = base;
  allow_only(j, "", {"seed", "corpus", "judge", "reward", "loop", "backends", "trainer", "eval"});
  read(j, "seed", c.seed, "");
  read(j, "corpus", c.corpus, "");

  if (j.contains("judge")) {
    const auto& o = j["judge"];
    allow_only(o, "judge",
               {"runners", "wall_time_ms", "memory_mb", "stdout_cap_bytes", "compare", "abs_tolerance", "parallelism",
                "isolate_network", "cache_outcomes"});
    if (o.contains("runners")) {
      if (!o["runners"].is_object()) throw ConfigError("judge.runners", "expected an object");
      c.judge.runners.clear();
      for (const auto& [tag, r] : o["runners"].items()) {
        const std::string where = "judge.runners." + tag;
        allow_only(r, where, {"command", "source_file"});
        judge::RunnerSpec spec;
        read(r, "command", spec.command, where);
        read(r, "source_file", spec.source_file, where);
        if (spec.command.empty()) throw ConfigError(where + ".command", "must not be empty");
        c.judge.runners[tag] = spec;
      }
    }
    long wall = static_cast<long>(c.judge.limits.wall_time.count());
    read(o, "wall_time_ms", wall, "judge");
    if (wall < 1) throw ConfigError("judge.wall_time_ms", "must be >= 1");
    c.judge.limits.wall_time = std::chrono::milliseconds(wall);
    std::size_t mem_mb = c.judge.limits.memory_bytes >> 20;
    read(o, "memory_mb", mem_mb, "judge");
    if (mem_mb < 16) throw ConfigError("judge.memory_mb", "must be >= 16");
    c.judge.limits.memory_bytes = mem_mb << 20;
    read(o, "stdout_cap_bytes", c.judge.limits.stdout_cap, "judge");
    std::string mode = c.judge.compare.mode == judge::CompareMode::kLines ? "lines" : "numeric";
    read(o, "compare", mode, "judge");
    if (mode == "lines") c.judge.compare.mode = judge::CompareMode::kLines;
    else if (mode == "numeric") c.judge.compare.mode = judge::CompareMode::kNumeric;
    else throw ConfigError("judge.compare", "expected 'lines' or 'numeric'");
    read(o, "abs_tolerance", c.judge.compare.abs_tolerance, "judge");
    read(o, "parallelism", c.judge.parallelism, "judge");
    if (c.judge.parallelism < 1) throw ConfigError("judge.parallelism", "must be >= 1");
    read(o, "isolate_network", c.judge.isolate_network, "judge");
    read(o, "cache_outcomes", c.judge.cache_outcomes, "judge");
  }

  if (j.contains("reward")) {
    const auto& o = j["reward"];
    allow_only(o, "reward", {"tau", "lambda_weight", "m_samples", "validity_enabled", "clipping_enabled"});
    read(o, "tau", c.loop.reward.tau, "reward");
    read(o, "lambda_weight", c.loop.reward.lambda_weight, "reward");
    read(o, "m_samples", c.loop.reward.m_samples, "reward");
    read(o, "validity_enabled", c.loop.reward.validity_enabled, "reward");
    read(o, "clipping_enabled", c.loop.reward.clipping_enabled, "reward");
  }

  if (j.contains("loop")) {
    const auto& o = j["loop"];
    allow_only(o, "loop",
               {"group_size", "batch_size", "iterations", "ut_phase", "code_phase", "ut_temperature",
                "code_temperature", "sampler_temperature", "max_tokens", "sampling_parallelism", "default_language"});
    read(o, "group_size", c.loop.group_size, "loop");
    read(o, "batch_size", c.loop.batch_size, "loop");
    read(o, "iterations", c.loop.iterations, "loop");
    if (o.contains("ut_phase")) read_schedule(o["ut_phase"], c.loop.ut_schedule, "loop.ut_phase");
    if (o.contains("code_phase")) read_schedule(o["code_phase"], c.loop.code_schedule, "loop.code_phase");
    read(o, "ut_temperature", c.loop.ut_temperature, "loop");
    read(o, "code_temperature", c.loop.code_temperature, "loop");
    read(o, "sampler_temperature", c.loop.sampler_temperature, "loop");
    read(o, "max_tokens", c.loop.max_tokens, "loop");
    read(o, "sampling_parallelism", c.loop.sampling_parallelism, "loop");
    read(o, "default_language", c.loop.default_language, "loop");
  }

  if (j.contains("backends")) {
    const auto& o = j["backends"];
    allow_only(o, "backends", {"ut", "code", "code_sampler"});
    if (o.contains("ut")) c.ut_backend = backend_from_json(o["ut"], "backends.ut");
    if (o.contains("code")) c.code_backend = backend_from_json(o["code"], "backends.code");
    if (o.contains("code_sampler")) c.sampler_backend = backend_from_json(o["code_sampler"], "backends.code_sampler");
  }
  if (j.contains("trainer")) c.trainer = j["trainer"];

  if (j.contains("eval")) {
    const auto& o = j["eval"];
    allow_only(o, "eval", {"n_candidates", "filter_selector", "filter_fidelity", "by_source"});
    read(o, "n_candidates", c.eval.n_candidates, "eval");
    if (c.eval.n_candidates < 1) throw ConfigError("eval.n_candidates", "must be >= 1");
    read(o, "filter_selector", c.eval.filter_selector, "eval");
    read(o, "filter_fidelity", c.eval.filter_fidelity, "eval");
    read(o, "by_source", c.eval.by_source, "eval");
  }

  c.loop.seed = c.seed;
  try {
    c.loop.validate();
  } catch (const ConfigError& e) {
    // Reward keys live at the top level of the file.
    static const std::set<std::string> reward_keys = {"tau", "lambda_weight", "m_samples"};
    if (reward_keys.count(e.key())) throw ConfigError("reward." + e.key(), e.what());
    throw ConfigError("loop." + e.key(), e.what());
  }
  return c;
}

HarnessConfig load_config(const fs::path& path, const HarnessConfig& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("not valid JSON: ") + e.what());
  }
  return config_from_json(j, base);
}

std::string config_hash(const HarnessConfig& c) { return sha256_hex(config_to_json(c).dump()); }

std::vector<ProgrammingTask> load_corpus(const HarnessConfig& c, const fs::path& base_dir) {
  if (c.corpus == "builtin:toy") return toy_family()->programming_tasks();
  return filter_stdio_tasks(load_tasks(resolve(base_dir, c.corpus)));
}

orch::Backends make_backends(const HarnessConfig& c, const fs::path& base_dir) {
  orch::Backends b;
  b.ut_generator = build(c.ut_backend, toy::Role::kUnitTest, base_dir);
  b.code_generator = build(c.code_backend, toy::Role::kCode, base_dir);
  if (c.sampler_backend) {
    const BackendSpec spec = *c.sampler_backend;
    b.sampler_factory = [spec, base_dir](int iteration) -> std::unique_ptr<gen::Backend> {
      if (spec.kind == "http" && spec.options.contains("models_by_iteration")) {
        auto opts = http_options(spec.options);
        const auto models = spec.options["models_by_iteration"].get<std::vector<std::string>>();
        if (models.empty()) throw ConfigError("backends.code_sampler.models_by_iteration", "must not be empty");
        opts.model = models[std::min<std::size_t>(static_cast<std::size_t>(iteration - 1), models.size() - 1)];
        return std::make_unique<gen::HttpBackend>(opts);
      }
      return build(spec, toy::Role::kCode, base_dir)->snapshot();
    };
  }
  return b;
}

}  // namespace utrl::cfg
