// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include "gradflow/frontend.hpp"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun cli(const std::string& args) {
  std::string cmd = std::string(GRADFLOW_CLI) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string corpus(const std::string& name) { return std::string(GRADFLOW_CORPUS_DIR) + "/" + name + ".json"; }

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / "gradflow_cli_test";
  fs::create_directories(d);
  return d / name;
}

TEST(Cli, PlanScaledProducts) {
  CliRun r = cli("plan " + corpus("scaled_products") + " --params N=3620 --memory-limit-mib 500");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("A0: recompute, A1: store, A2: store"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("peak 499.893 MiB"), std::string::npos) << r.out;
}

TEST(Cli, PlanJsonAndRewrittenPrograms) {
  fs::path stem = scratch("l1");
  CliRun r = cli("plan " + corpus("scaled_products") + " --params N=64 --memory-limit-mib 0.16 --json -o " + stem.string());
  ASSERT_EQ(r.code, 0) << r.out;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("values").size(), 3u);
  EXPECT_LE(j.at("peak_bytes").get<std::int64_t>(), j.at("limit_bytes").get<std::int64_t>());
  EXPECT_NO_THROW(gradflow::load_program(stem.string() + ".fwd.json"));
  EXPECT_NO_THROW(gradflow::load_program(stem.string() + ".bwd.json"));
}

TEST(Cli, InfeasibleExitsFour) {
  CliRun r = cli("plan " + corpus("scaled_products") + " --params N=3620 --memory-limit-mib 100");
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.out.find("minimum achievable peak 524176000 bytes"), std::string::npos) << r.out;
}

TEST(Cli, DiffWritesBackwardAndManifest) {
  fs::path stem = scratch("chain");
  CliRun r = cli("diff " + corpus("elementwise_chain") + " -o " + stem.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NO_THROW(gradflow::load_program(stem.string() + ".bwd.json"));
  auto manifest = nlohmann::json::parse(gradflow::read_text_file(stem.string() + ".fwdreq.json"));
  EXPECT_FALSE(manifest.empty());
}

TEST(Cli, WhileLoopExitsThree) {
  CliRun r = cli("diff " + corpus("while_loop") + " -o " + scratch("w").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("UnsupportedLoop"), std::string::npos);
}

TEST(Cli, RunWithLiteralInput) {
  CliRun r = cli("run " + corpus("double_read") + " --params N=3 --input 'X=[1,2,3]'");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("O = 39.0834258626388"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("4.38177329067603"), std::string::npos) << r.out;
}

TEST(Cli, VerifyPassesAndFailsOnTolerance) {
  EXPECT_EQ(cli("verify " + corpus("two_branch") + " --params N=5").code, 0);
  EXPECT_EQ(cli("verify " + corpus("double_read") + " --params N=5 --tol 1e-30").code, 5);
}

TEST(Cli, MemReportStaysUnderLimit) {
  CliRun r = cli("mem-report " + corpus("scaled_products") + " --params N=3620 --memory-limit-mib 500");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("peak 499.893 MiB <= limit 500.000 MiB"), std::string::npos) << r.out;
}

TEST(Cli, FmtIsIdempotentOnCanonicalFiles) {
  CliRun r = cli("fmt " + corpus("seidel"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out, gradflow::read_text_file(corpus("seidel")));
}

TEST(Cli, InputErrors) {
  EXPECT_EQ(cli("fmt /nonexistent/program.json").code, 1);
  fs::path bad = scratch("bad.json");
  gradflow::write_text_file(bad, "{");
  EXPECT_EQ(cli("fmt " + bad.string()).code, 2);
  EXPECT_EQ(cli("plan " + corpus("scaled_products") + " --params N=4").code, 2);
  EXPECT_EQ(cli("run " + corpus("scaled_products")).code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
}

}  // namespace
