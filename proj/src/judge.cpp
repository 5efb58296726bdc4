#include "utrl/judge.hpp"

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "utrl/hashing.hpp"

namespace utrl::judge {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kPass: return "pass";
    case Verdict::kWrongOutput: return "wrong_output";
    case Verdict::kRuntimeError: return "runtime_error";
    case Verdict::kTimeout: return "timeout";
    case Verdict::kResourceExceeded: return "resource_exceeded";
    case Verdict::kSpawnFailure: return "spawn_failure";
  }
  return "unknown";
}

RunnerTable default_runners() {
  RunnerTable t;
  t["python"] = RunnerSpec{{"python3", "{source}"}, "main.py"};
  t["sh"] = RunnerSpec{{"/bin/sh", "{source}"}, "main.sh"};
  return t;
}

// ---------------------------------------------------------------------------
// Output comparison

namespace {

bool is_trailing_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f'; }

std::vector<std::string> tokens_of(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_number(const std::string& token, double& value) {
  char* end = nullptr;
  errno = 0;
  value = std::strtod(token.c_str(), &end);
  return end == token.c_str() + token.size() && errno == 0 && std::isfinite(value);
}

}  // namespace

std::vector<std::string> normalize_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (true) {
    std::size_t nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? text.npos : nl - start);
    std::size_t end = line.size();
    while (end > 0 && is_trailing_space(line[end - 1])) --end;
    lines.emplace_back(line.substr(0, end));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

bool outputs_match(std::string_view actual, std::string_view expected, const ComparePolicy& policy) {
  if (policy.mode == CompareMode::kLines) return normalize_lines(actual) == normalize_lines(expected);
  auto a = tokens_of(actual);
  auto e = tokens_of(expected);
  if (a.size() != e.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == e[i]) continue;
    double x = 0, y = 0;
    if (!parse_number(a[i], x) || !parse_number(e[i], y)) return false;
    if (std::fabs(x - y) > policy.abs_tolerance) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Process execution

namespace {

constexpr std::size_t kStderrKeep = 64 * 1024;
constexpr auto kPollSlice = std::chrono::milliseconds(20);
constexpr auto kDrainGrace = std::chrono::milliseconds(200);

void ignore_sigpipe_once() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

struct Fd {
  int fd = -1;
  Fd() = default;
  explicit Fd(int f) : fd(f) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd(std::exchange(o.fd, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd = std::exchange(o.fd, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }
  void reset() {
    if (fd >= 0) ::close(fd);
    fd = -1;
  }
};

struct Pipe {
  Fd read, write;
};

Pipe make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw std::system_error(errno, std::generic_category(), "pipe2");
  return Pipe{Fd(fds[0]), Fd(fds[1])};
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& root) {
    fs::path base = root.empty() ? fs::temp_directory_path() : fs::path(root);
    std::string tmpl = (base / "utrl-run-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) {
      throw std::system_error(errno, std::generic_category(), "mkdtemp");
    }
    path_ = tmpl;
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string resolve_executable(const std::string& name) {
  if (name.find('/') != std::string::npos) return ::access(name.c_str(), X_OK) == 0 ? name : "";
  const char* path_env = std::getenv("PATH");
  std::string path = path_env ? path_env : "/usr/local/bin:/usr/bin:/bin";
  std::stringstream ss(path);
  std::string dir;
  while (std::getline(ss, dir, ':')) {
    if (dir.empty()) continue;
    std::string candidate = dir + "/" + name;
    struct stat st {};
    if (::stat(candidate.c_str(), &st) == 0 && S_ISREG(st.st_mode) && ::access(candidate.c_str(), X_OK) == 0) {
      return candidate;
    }
  }
  return "";
}

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

bool mentions_memory_failure(const std::string& err) {
  return err.find("MemoryError") != std::string::npos || err.find("std::bad_alloc") != std::string::npos;
}

}  // namespace

Judge::Judge(JudgeOptions options) : options_(std::move(options)) {
  if (options_.parallelism == 0) options_.parallelism = 1;
  ignore_sigpipe_once();
}

ExecutionOutcome Judge::execute(const CodeSolution& program, std::string_view stdin_text) const {
  ExecutionOutcome out;
  const auto runner_it = options_.runners.find(program.language_tag);
  if (runner_it == options_.runners.end() || runner_it->second.command.empty()) {
    out.verdict = Verdict::kSpawnFailure;
    out.diagnostic = "no runner configured for language '" + program.language_tag + "'";
    return out;
  }
  const RunnerSpec& runner = runner_it->second;
  const ResourceLimits& limits = options_.limits;

  ScratchDir scratch(options_.scratch_root);
  const fs::path source_path = scratch.path() / runner.source_file;
  {
    std::ofstream src(source_path, std::ios::binary);
    src << program.source;
    if (!src) {
      out.verdict = Verdict::kSpawnFailure;
      out.diagnostic = "cannot write source file";
      return out;
    }
  }

  std::vector<std::string> argv_storage;
  for (const auto& part : runner.command) {
    std::string arg = part;
    for (std::size_t pos; (pos = arg.find("{source}")) != std::string::npos;) {
      arg.replace(pos, 8, source_path.string());
    }
    argv_storage.push_back(std::move(arg));
  }
  const std::string exe = resolve_executable(argv_storage.front());
  if (exe.empty()) {
    out.verdict = Verdict::kSpawnFailure;
    out.diagnostic = "runner binary not found: " + argv_storage.front();
    return out;
  }

  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  argv.push_back(nullptr);

  const char* path_env = std::getenv("PATH");
  std::vector<std::string> env_storage = {
      std::string("PATH=") + (path_env ? path_env : "/usr/local/bin:/usr/bin:/bin"),
      "HOME=" + scratch.path().string(),
      "TMPDIR=" + scratch.path().string(),
      "LANG=C.UTF-8",
      "PYTHONHASHSEED=0",
      "PYTHONDONTWRITEBYTECODE=1",
      "PYTHONIOENCODING=utf-8",
  };
  std::vector<char*> envp;
  for (auto& e : env_storage) envp.push_back(e.data());
  envp.push_back(nullptr);

  const std::string scratch_str = scratch.path().string();
  const auto cpu_seconds = static_cast<rlim_t>(
      std::chrono::duration_cast<std::chrono::seconds>(limits.wall_time).count() + 2);
  const bool isolate_network = options_.isolate_network;

  Pipe in_pipe = make_pipe(), out_pipe = make_pipe(), err_pipe = make_pipe(), status_pipe = make_pipe();

  const auto start = Clock::now();
  const pid_t pid = ::fork();
  if (pid < 0) {
    out.verdict = Verdict::kSpawnFailure;
    out.diagnostic = std::string("fork failed: ") + std::strerror(errno);
    return out;
  }
  if (pid == 0) {
    // Child: async-signal-safe calls only.
    ::setpgid(0, 0);
    ::signal(SIGPIPE, SIG_DFL);
    if (isolate_network && ::unshare(CLONE_NEWNET) != 0) ::unshare(CLONE_NEWUSER | CLONE_NEWNET);
    ::dup2(in_pipe.read.fd, 0);
    ::dup2(out_pipe.write.fd, 1);
    ::dup2(err_pipe.write.fd, 2);
    int err = 0;
    if (::chdir(scratch_str.c_str()) != 0) err = errno;
    struct rlimit rl {};
    rl.rlim_cur = rl.rlim_max = limits.memory_bytes;
    ::setrlimit(RLIMIT_AS, &rl);
    rl.rlim_cur = rl.rlim_max = 0;
    ::setrlimit(RLIMIT_CORE, &rl);
    rl.rlim_cur = rl.rlim_max = std::max<rlim_t>(limits.stdout_cap * 4, rlim_t{16} << 20);
    ::setrlimit(RLIMIT_FSIZE, &rl);
    rl.rlim_cur = rl.rlim_max = cpu_seconds;
    ::setrlimit(RLIMIT_CPU, &rl);
    if (err == 0) {
      ::execve(exe.c_str(), argv.data(), envp.data());
      err = errno;
    }
    [[maybe_unused]] auto n = ::write(status_pipe.write.fd, &err, sizeof err);
    ::_exit(127);
  }

  // Parent.
  ::setpgid(pid, pid);  // races with the child's own call; either one suffices
  in_pipe.read.reset();
  out_pipe.write.reset();
  err_pipe.write.reset();
  status_pipe.write.reset();

  int child_errno = 0;
  ssize_t got;
  do {
    got = ::read(status_pipe.read.fd, &child_errno, sizeof child_errno);
  } while (got < 0 && errno == EINTR);
  if (got == static_cast<ssize_t>(sizeof child_errno)) {
    int st = 0;
    ::waitpid(pid, &st, 0);
    out.verdict = Verdict::kSpawnFailure;
    out.diagnostic = std::string("exec failed: ") + std::strerror(child_errno);
    out.wall_time_ms = elapsed_ms(start);
    return out;
  }

  set_nonblocking(in_pipe.write.fd);
  set_nonblocking(out_pipe.read.fd);
  set_nonblocking(err_pipe.read.fd);

  std::size_t stdin_written = 0;
  if (stdin_text.empty()) in_pipe.write.reset();

  bool timed_out = false, output_capped = false, reaped = false;
  int wait_status = 0;
  struct rusage usage {};
  const auto deadline = start + limits.wall_time;
  char buf[65536];

  auto read_into = [&](Fd& fd, bool is_stdout) {
    while (fd.fd >= 0) {
      ssize_t n = ::read(fd.fd, buf, sizeof buf);
      if (n > 0) {
        if (is_stdout) {
          std::size_t room = limits.stdout_cap - std::min(limits.stdout_cap, out.stdout_text.size());
          out.stdout_text.append(buf, std::min<std::size_t>(room, static_cast<std::size_t>(n)));
          if (static_cast<std::size_t>(n) > room) {
            out.stdout_truncated = true;
            output_capped = true;
          }
        } else if (out.stderr_text.size() < kStderrKeep) {
          out.stderr_text.append(buf, std::min<std::size_t>(kStderrKeep - out.stderr_text.size(),
                                                           static_cast<std::size_t>(n)));
        }
        continue;
      }
      if (n == 0) fd.reset();
      else if (errno != EAGAIN && errno != EINTR) fd.reset();
      break;
    }
  };

  while (!reaped) {
    pid_t w = ::wait4(pid, &wait_status, WNOHANG, &usage);
    if (w == pid) {
      reaped = true;
      break;
    }
    if (output_capped) break;
    const auto now = Clock::now();
    if (now >= deadline) {
      timed_out = true;
      break;
    }
    pollfd pfds[3];
    nfds_t nfds = 0;
    int idx_in = -1, idx_out = -1, idx_err = -1;
    if (in_pipe.write.fd >= 0) {
      idx_in = static_cast<int>(nfds);
      pfds[nfds++] = {in_pipe.write.fd, POLLOUT, 0};
    }
    if (out_pipe.read.fd >= 0) {
      idx_out = static_cast<int>(nfds);
      pfds[nfds++] = {out_pipe.read.fd, POLLIN, 0};
    }
    if (err_pipe.read.fd >= 0) {
      idx_err = static_cast<int>(nfds);
      pfds[nfds++] = {err_pipe.read.fd, POLLIN, 0};
    }
    auto slice = std::min<Clock::duration>(deadline - now, kPollSlice);
    int timeout_ms = static_cast<int>(std::chrono::ceil<std::chrono::milliseconds>(slice).count());
    int pr = nfds ? ::poll(pfds, nfds, timeout_ms) : (::usleep(static_cast<useconds_t>(timeout_ms) * 1000), 0);
    if (pr <= 0) continue;
    if (idx_in >= 0 && (pfds[idx_in].revents & (POLLOUT | POLLERR | POLLHUP))) {
      if (pfds[idx_in].revents & (POLLERR | POLLHUP)) {
        in_pipe.write.reset();
      } else {
        ssize_t n = ::write(in_pipe.write.fd, stdin_text.data() + stdin_written, stdin_text.size() - stdin_written);
        if (n > 0) stdin_written += static_cast<std::size_t>(n);
        else if (n < 0 && errno != EAGAIN && errno != EINTR) in_pipe.write.reset();
        if (stdin_written == stdin_text.size()) in_pipe.write.reset();
      }
    }
    if (idx_out >= 0 && (pfds[idx_out].revents & (POLLIN | POLLHUP | POLLERR))) read_into(out_pipe.read, true);
    if (idx_err >= 0 && (pfds[idx_err].revents & (POLLIN | POLLHUP | POLLERR))) read_into(err_pipe.read, false);
  }

  // Kill whatever is left of the process group, then collect the child.
  ::kill(-pid, SIGKILL);
  if (!reaped) {
    while (::wait4(pid, &wait_status, 0, &usage) < 0 && errno == EINTR) {
    }
  }
  out.wall_time_ms = elapsed_ms(start);
  in_pipe.write.reset();
  const auto drain_until = Clock::now() + kDrainGrace;
  while ((out_pipe.read.fd >= 0 || err_pipe.read.fd >= 0) && Clock::now() < drain_until && !output_capped) {
    pollfd pfds[2];
    nfds_t nfds = 0;
    if (out_pipe.read.fd >= 0) pfds[nfds++] = {out_pipe.read.fd, POLLIN, 0};
    if (err_pipe.read.fd >= 0) pfds[nfds++] = {err_pipe.read.fd, POLLIN, 0};
    if (::poll(pfds, nfds, 10) <= 0) continue;
    read_into(out_pipe.read, true);
    read_into(err_pipe.read, false);
  }

  if (WIFEXITED(wait_status)) {
    out.exit_status = WEXITSTATUS(wait_status);
  } else if (WIFSIGNALED(wait_status)) {
    out.signaled = true;
    out.exit_status = -WTERMSIG(wait_status);
  }

  if (timed_out) {
    out.verdict = Verdict::kTimeout;
    out.diagnostic = "wall time limit exceeded";
  } else if (output_capped) {
    out.verdict = Verdict::kResourceExceeded;
    out.diagnostic = "stdout cap exceeded";
  } else if (out.signaled && out.exit_status == -SIGXCPU) {
    out.verdict = Verdict::kTimeout;
    out.diagnostic = "cpu time limit exceeded";
  } else if (out.signaled && out.exit_status == -SIGXFSZ) {
    out.verdict = Verdict::kResourceExceeded;
    out.diagnostic = "file size limit exceeded";
  } else if (out.exit_status != 0 || out.signaled) {
    const bool memory = mentions_memory_failure(out.stderr_text) ||
                        static_cast<std::size_t>(usage.ru_maxrss) * 1024 >= limits.memory_bytes;
    out.verdict = memory ? Verdict::kResourceExceeded : Verdict::kRuntimeError;
    if (memory) out.diagnostic = "memory limit exceeded";
  } else {
    out.verdict = Verdict::kPass;
  }
  return out;
}

std::string Judge::cache_key(const CodeSolution& program, std::string_view stdin_text) const {
  std::string key;
  auto add = [&key](std::string_view part) {
    key += std::to_string(part.size());
    key.push_back(':');
    key.append(part);
  };
  add(program.language_tag);
  if (auto it = options_.runners.find(program.language_tag); it != options_.runners.end()) {
    for (const auto& c : it->second.command) add(c);
  }
  add(program.source);
  add(stdin_text);
  add(std::to_string(options_.limits.wall_time.count()) + "/" + std::to_string(options_.limits.memory_bytes) + "/" +
      std::to_string(options_.limits.stdout_cap));
  return sha256_hex(key);
}

ExecutionOutcome Judge::execute_counted(const CodeSolution& program, const std::string& stdin_text) const {
  {
    std::lock_guard lock(mu_);
    ++executions_;
  }
  ExecutionOutcome out = execute(program, stdin_text);
  if (out.verdict == Verdict::kSpawnFailure) {
    std::cerr << "level=warn component=judge event=spawn_failure detail=\"" << out.diagnostic << "\"\n";
  }
  return out;
}

ExecutionOutcome Judge::run_case(const CodeSolution& program, const TestCase& test) const {
  // Feed a final newline when the stored input lacks one; many programs read
  // line-wise and expect a terminated last line.
  const std::string fed = !test.input.empty() && test.input.back() != '\n' ? test.input + "\n" : test.input;
  // The cache holds raw executions; the comparison is cheap and always redone,
  // so cases sharing an input share one run.
  ExecutionOutcome out;
  if (!options_.cache_outcomes) {
    out = execute_counted(program, fed);
  } else {
    const std::string key = cache_key(program, fed);
    bool hit = false;
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) {
        ++cache_hits_;
        out = it->second;
        hit = true;
      }
    }
    if (!hit) {
      out = execute_counted(program, fed);
      std::lock_guard lock(mu_);
      cache_.emplace(key, out);
    }
  }
  if (out.verdict == Verdict::kPass && !outputs_match(out.stdout_text, test.expected_output, options_.compare)) {
    out.verdict = Verdict::kWrongOutput;
  }
  return out;
}

bool Judge::check(const CodeSolution& program, const TestCase& test) const {
  return run_case(program, test).verdict == Verdict::kPass;
}

std::vector<ExecutionOutcome> Judge::run_batch(std::span<const CheckJob> jobs) const {
  std::vector<ExecutionOutcome> results(jobs.size());
  if (jobs.empty()) return results;
  const std::size_t workers = std::min(options_.parallelism, jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      results[i] = run_case(*jobs[i].program, *jobs[i].test);
    }
  };
  if (workers == 1) {
    work();
    return results;
  }
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  return results;
}

PassMatrix Judge::evaluate_matrix(std::span<const CodeSolution> programs, std::span<const TestCase> tests) const {
  std::vector<CheckJob> jobs;
  jobs.reserve(programs.size() * tests.size());
  for (const auto& p : programs)
    for (const auto& t : tests) jobs.push_back({&p, &t});
  auto results = run_batch(jobs);

  PassMatrix m;
  m.rows = programs.size();
  m.cols = tests.size();
  m.bits.assign(m.rows, std::vector<bool>(m.cols, false));
  m.outcomes.assign(m.rows, std::vector<ExecutionOutcome>(m.cols));
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      auto& r = results[i * m.cols + j];
      m.bits[i][j] = r.verdict == Verdict::kPass;
      m.outcomes[i][j] = std::move(r);
    }
  }
  return m;
}

std::size_t Judge::executions() const {
  std::lock_guard lock(mu_);
  return executions_;
}

std::size_t Judge::cache_hits() const {
  std::lock_guard lock(mu_);
  return cache_hits_;
}

}  // namespace utrl::judge
