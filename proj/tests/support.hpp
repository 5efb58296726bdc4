#pragma once

#include <stdlib.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "utrl/judge.hpp"

namespace utrl::testing {

/// Directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "utrl-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline judge::JudgeOptions quick_judge(std::size_t parallelism = 4) {
  judge::JudgeOptions o;
  o.parallelism = parallelism;
  o.limits.wall_time = std::chrono::milliseconds(3000);
  return o;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

struct CliResult {
  int status = -1;
  std::string out;  // stdout only
};

/// Runs the built CLI through the shell; stderr goes to `stderr_path` when given.
inline CliResult run_cli(const std::string& args, const std::string& stderr_path = "/dev/null") {
  const std::string cmd = std::string(UTRL_CLI_PATH) + " " + args + " 2>" + stderr_path;
  CliResult r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

/// stdio program computing the sum of n integers; the usual correct solution in fixtures.
inline const char* kSumProgram =
    "import sys\n"
    "d = sys.stdin.read().split()\n"
    "n = int(d[0])\n"
    "print(sum(int(x) for x in d[1:1 + n]))\n";

}  // namespace utrl::testing
