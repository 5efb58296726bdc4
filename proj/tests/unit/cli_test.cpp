#include <gtest/gtest.h>

#include "support.hpp"
#include "utrl/harness_config.hpp"
#include "utrl/testparse.hpp"

namespace utrl {
namespace {

using nlohmann::json;
using testing::run_cli;

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

json toy_config_json() { return cfg::config_to_json(cfg::toy_profile()); }

TEST(Cli, HelpExitsZeroWithUsage) {
  const auto r = run_cli("--help");
  EXPECT_EQ(r.status, 0);
  for (const char* sub : {"ingest", "judge", "parse-ut", "parse-code", "reward", "loop", "eval-bestofn",
                          "eval-fidelity", "report", "toy-demo"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, UnknownFlagFails) {
  EXPECT_NE(run_cli("toy-demo --no-such-flag").status, 0);
  EXPECT_NE(run_cli("").status, 0);
}

TEST(Cli, InvalidTauNamesKey) {
  testing::TempDir dir;
  auto j = toy_config_json();
  j["reward"]["tau"] = 0;
  testing::write_file(dir / "c.json", j.dump());
  const auto r = run_cli("loop --config " + q(dir / "c.json") + " --out " + q(dir / "run"), (dir / "err").string());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(testing::read_file(dir / "err").find("tau"), std::string::npos);
}

TEST(Cli, UnknownConfigKeyNamed) {
  testing::TempDir dir;
  auto j = toy_config_json();
  j["loop"]["gruop_size"] = 4;
  testing::write_file(dir / "c.json", j.dump());
  const auto r = run_cli("loop --config " + q(dir / "c.json") + " --out " + q(dir / "run"), (dir / "err").string());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(testing::read_file(dir / "err").find("gruop_size"), std::string::npos);
}

TEST(Cli, ToyDemoIsDeterministic) {
  testing::TempDir dir;
  const std::string flags = " --seed 0 --ut-steps 3 --code-steps 3 --iterations 1";
  const auto a = run_cli("toy-demo --out " + q(dir / "a") + flags);
  const auto b = run_cli("toy-demo --out " + q(dir / "b") + flags);
  ASSERT_EQ(a.status, 0);
  ASSERT_EQ(b.status, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("r_disc"), std::string::npos);
  const auto curves = testing::read_file(dir / "a" / "curves" / "rewards.csv");
  EXPECT_EQ(curves, testing::read_file(dir / "b" / "curves" / "rewards.csv"));
  EXPECT_NE(curves.find("# config_hash="), std::string::npos);
  EXPECT_EQ(testing::read_file(dir / "a" / "records" / "phase-ut-iter1.jsonl"),
            testing::read_file(dir / "b" / "records" / "phase-ut-iter1.jsonl"));
  // A different seed changes the sampled completions.
  const auto c = run_cli("toy-demo --out " + q(dir / "c") + " --seed 1 --ut-steps 3 --code-steps 3 --iterations 1");
  ASSERT_EQ(c.status, 0);
  EXPECT_NE(testing::read_file(dir / "c" / "records" / "phase-ut-iter1.jsonl"),
            testing::read_file(dir / "a" / "records" / "phase-ut-iter1.jsonl"));
}

TEST(Cli, JudgeWithTestList) {
  testing::TempDir dir;
  testing::write_file(dir / "sum.py", testing::kSumProgram);
  testing::write_file(dir / "tests.json", R"([{"input":"2\n1 2\n","output":"3\n"},{"input":"0\n","output":"1\n"}])");
  const auto r = run_cli("judge --code " + q(dir / "sum.py") + " --tests " + q(dir / "tests.json"));
  EXPECT_EQ(r.status, 3);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["passed"], 1);
  EXPECT_EQ(j["cases"][0]["verdict"], "pass");
  EXPECT_EQ(j["cases"][1]["verdict"], "wrong_output");
  testing::write_file(dir / "in.txt", "3\n1 1 1\n");
  const auto run = run_cli("judge --code " + q(dir / "sum.py") + " --input " + q(dir / "in.txt"));
  EXPECT_EQ(run.status, 0);
  EXPECT_EQ(json::parse(run.out)["stdout"], "3\n");
}

TEST(Cli, ParseSubcommands) {
  testing::TempDir dir;
  testing::write_file(dir / "ut.txt", "<reasoning>\nwhy\n</reasoning>\n```\nInput:\n3\n5 5 5\n\nOutput:\n10\n```\n```\nInput:\nx\n```\n");
  const auto u = run_cli("parse-ut " + q(dir / "ut.txt"));
  ASSERT_EQ(u.status, 0);
  const auto uj = json::parse(u.out);
  EXPECT_EQ(uj["unit_test"][0]["input"], "3\n5 5 5");
  EXPECT_EQ(uj["unit_test"][0]["output"], "10");
  EXPECT_EQ(uj["report"]["dropped_blocks"].size(), 1u);
  EXPECT_EQ(uj["reasoning"][0], "why");

  testing::write_file(dir / "code.txt", "```python\nfirst()\n```\n```python\nsecond()\n```\n");
  const auto c = run_cli("parse-code " + q(dir / "code.txt"));
  ASSERT_EQ(c.status, 0);
  EXPECT_EQ(json::parse(c.out)["code"], "second()\n");
  testing::write_file(dir / "none.txt", "no code here");
  EXPECT_EQ(run_cli("parse-code " + q(dir / "none.txt")).status, 3);
  EXPECT_EQ(run_cli("parse-ut - < " + q(dir / "ut.txt")).status, 0);
}

void write_sum_corpus(const std::filesystem::path& path) {
  ProgrammingTask t;
  t.task_id = "p/1";
  t.instruction = "Sum.";
  t.ground_truth_code = testing::kSumProgram;
  t.source = "fixture";
  t.ground_truth_tests.cases = {{"2\n1 2\n", "3\n"}, {"0\n", "0\n"}, {"2\n-1 -1\n", "-2\n"}};
  write_tasks({t}, path);
}

TEST(Cli, IngestFiltersAndSplits) {
  testing::TempDir dir;
  std::string corpus;
  for (int i = 0; i < 10; ++i)
    corpus += R"({"task_id":"t)" + std::to_string(i) +
              R"j(","instruction":"x","solution":"print(1)","tests":[{"input":"","output":"1"}]})j" + "\n";
  corpus += R"({"task_id":"fn","instruction":"x","solution":"s","tests":[{"input":[1],"output":1}]})" "\n";
  testing::write_file(dir / "in.jsonl", corpus);
  const auto r = run_cli("ingest --input " + q(dir / "in.jsonl") + " --out " + q(dir / "train.jsonl") +
                         " --train-fraction 0.8 --val-out " + q(dir / "val.jsonl") + " --seed 3");
  ASSERT_EQ(r.status, 0);
  const auto s = json::parse(r.out);
  EXPECT_EQ(s["read"], 11);
  EXPECT_EQ(s["stdio"], 10);
  EXPECT_EQ(load_tasks(dir / "train.jsonl").size(), 8u);
  EXPECT_EQ(load_tasks(dir / "val.jsonl").size(), 2u);
  testing::write_file(dir / "bad.jsonl", "{\"task_id\":\"a\"}\n");
  EXPECT_EQ(run_cli("ingest --input " + q(dir / "bad.jsonl") + " --out " + q(dir / "o.jsonl")).status, 1);
}

TEST(Cli, RewardSubcommand) {
  testing::TempDir dir;
  write_sum_corpus(dir / "tasks.jsonl");
  UnitTest ut;
  ut.cases = {{"2\n1 2", "3"}, {"1\n-4", "-4"}, {"1\n1", "7"}};
  testing::write_file(dir / "ut.txt", testparse::format_unit_test(ut));
  testing::write_file(dir / "codes" / "a.py", testing::kSumProgram);
  testing::write_file(dir / "codes" / "b.py", "print(3)\n");
  const auto r = run_cli("reward --tasks " + q(dir / "tasks.jsonl") + " --task p/1 --ut " + q(dir / "ut.txt") +
                         " --codes " + q(dir / "codes"));
  ASSERT_EQ(r.status, 0) << r.out;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["n_total"], 3);
  EXPECT_EQ(j["n_valid"], 2);
  EXPECT_DOUBLE_EQ(j["r_disc"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j["r_valid"].get<double>(), 2.0 / 12.0);
  EXPECT_EQ(j["detected"], json::array({false, true}));
  EXPECT_FALSE(j["config_hash"].get<std::string>().empty());
}

TEST(Cli, EvalAndReportSubcommands) {
  testing::TempDir dir;
  write_sum_corpus(dir / "tasks.jsonl");
  testing::write_file(dir / "cands" / "p_1" / "0.py", "print(3)\n");
  testing::write_file(dir / "cands" / "p_1" / "1.py", testing::kSumProgram);
  testing::write_file(dir / "cands" / "p_1" / "2.py", "print(0)\n");
  testing::write_file(dir / "uts" / "p_1.json", R"([{"input":"2\n5 -5\n","output":"0\n"},{"input":"1\n4\n","output":"4\n"}])");
  const auto b = run_cli("eval-bestofn --tasks " + q(dir / "tasks.jsonl") + " --candidates " + q(dir / "cands") +
                         " --ut " + q(dir / "uts") + " --out " + q(dir / "bon"));
  ASSERT_EQ(b.status, 0);
  const auto line = json::parse(testing::read_file(dir / "bon" / "bestofn.jsonl"));
  EXPECT_EQ(line["selected_index"], 1);
  EXPECT_DOUBLE_EQ(line["selected_score"].get<double>(), 1.0);
  EXPECT_TRUE(std::filesystem::exists(dir / "bon" / "report.csv"));

  const auto f = run_cli("eval-fidelity --tasks " + q(dir / "tasks.jsonl") + " --pool " + q(dir / "cands") + " --ut " +
                         q(dir / "uts") + " --out " + q(dir / "fid"));
  ASSERT_EQ(f.status, 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "fid" / "fidelity.jsonl"));

  const auto rep = run_cli("report --bestofn " + q(dir / "bon" / "bestofn.jsonl") + " --fidelity " +
                           q(dir / "fid" / "fidelity.jsonl") + " --out " + q(dir / "rep") + " --by-source");
  ASSERT_EQ(rep.status, 0);
  EXPECT_NE(rep.out.find("source:fixture"), std::string::npos);
  EXPECT_EQ(run_cli("report --out " + q(dir / "empty")).status, 1);
}

TEST(Cli, LoopResumeAndLockedOrInitializedDirs) {
  testing::TempDir dir;
  auto j = toy_config_json();
  j["loop"]["ut_phase"]["max_steps"] = 2;
  j["loop"]["code_phase"]["max_steps"] = 2;
  j["loop"]["iterations"] = 1;
  testing::write_file(dir / "c.json", j.dump(2));
  const std::string cfg = " --config " + q(dir / "c.json");
  ASSERT_EQ(run_cli("loop" + cfg + " --out " + q(dir / "full")).status, 0);
  ASSERT_EQ(run_cli("loop" + cfg + " --out " + q(dir / "part") + " --stop-after 1").status, 0);
  EXPECT_NE(run_cli("loop" + cfg + " --out " + q(dir / "part")).status, 0);
  ASSERT_EQ(run_cli("loop" + cfg + " --resume " + q(dir / "part")).status, 0);
  EXPECT_EQ(testing::read_file(dir / "part" / "curves" / "rewards.csv"),
            testing::read_file(dir / "full" / "curves" / "rewards.csv"));
  EXPECT_NE(run_cli("loop" + cfg).status, 0);
}

}  // namespace
}  // namespace utrl
