// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "gradflow/builder.hpp"
#include "gradflow/frontend.hpp"
#include "gradflow/ir.hpp"
#include "kernels.hpp"

namespace gradflow {
namespace {

bool has_rule(const std::vector<Diagnostic>& ds, const std::string& rule) {
  return std::any_of(ds.begin(), ds.end(), [&](const Diagnostic& d) { return d.rule == rule; });
}

std::vector<Diagnostic> build_errors(ProgramBuilder& b) {
  try {
    b.finish();
  } catch (const ValidationError& e) {
    return e.diagnostics();
  }
  return {};
}

TEST(Frontend, CorpusRoundTrips) {
  for (const auto& k : kernels::corpus()) {
    std::string text = serialize_program(k.program);
    Program back = parse_program(text);
    EXPECT_EQ(serialize_program(back), text) << k.name;
    EXPECT_TRUE(validate(back).empty()) << k.name;
  }
}

TEST(Frontend, CorpusFilesParse) {
  int files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(GRADFLOW_CORPUS_DIR)) {
    if (entry.path().extension() != ".json") continue;
    Program p = load_program(entry.path());
    EXPECT_EQ(serialize_program(p), read_text_file(entry.path())) << entry.path();
    ++files;
  }
  EXPECT_GE(files, 16);
}

TEST(Frontend, RejectsUnknownKeysAndBadExpressions) {
  std::string text = serialize_program(kernels::elementwise_chain());
  std::string extra = text;
  extra.insert(extra.find("\"dependent\""), "\"colour\": \"red\",\n  ");
  EXPECT_THROW(parse_program(extra), SyntaxError);

  std::string bad_expr = text;
  std::size_t at = bad_expr.find("(sin x)");
  ASSERT_NE(at, std::string::npos);
  bad_expr.replace(at, 7, "(sine x)");
  EXPECT_THROW(parse_program(bad_expr), SyntaxError);

  EXPECT_THROW(parse_program("{\"format_version\": 1"), SyntaxError);
}

TEST(Frontend, UncheckedParseDefersValidation) {
  Program p = kernels::elementwise_chain();
  p.dependent = "B";
  std::string text = serialize_program(p);
  EXPECT_THROW(parse_program(text), ValidationError);
  Program q = parse_program_unchecked(text);
  EXPECT_TRUE(has_rule(validate(q), "DependentNotScalar"));
}

TEST(Validate, DuplicateIdAcrossStates) {
  Program p = kernels::elementwise_chain();
  std::get<State>(p.region.elements[1]).id = "s0";
  auto ds = validate(p);
  EXPECT_TRUE(has_rule(ds, "DuplicateId"));
  auto it = std::find_if(ds.begin(), ds.end(), [](const Diagnostic& d) { return d.rule == "DuplicateId"; });
  EXPECT_EQ(it->id, "s0");
}

TEST(Validate, UnknownIndependent) {
  Program p = kernels::elementwise_chain();
  p.independents.push_back("Z");
  EXPECT_TRUE(has_rule(validate(p), "IndependentUnknown"));
}

TEST(Validate, LibraryOutputMayNotAliasInput) {
  ProgramBuilder b;
  b.param("N").add_descriptor("X", DType::Float64, {"N"}, Role::Input).add_descriptor("A", DType::Float64, {"N"});
  b.add_descriptor("O", DType::Float64, {}, Role::Output);
  b.add_state("s0");
  b.add_library_call("cp", LibraryOp::ElementwiseUnary, "A", "X", "", "x");
  b.add_state("s1");
  b.add_library_call("sc", LibraryOp::ElementwiseUnary, "A", "A", "", "(* 2 x)");
  b.add_state("s2");
  b.add_library_call("sum", LibraryOp::ReduceSum, "O", "A");
  b.set_dependent("O").add_independent("X");
  EXPECT_TRUE(has_rule(build_errors(b), "LibraryAlias"));
}

TEST(Validate, MapBodyReadAfterWriteByAnotherNode) {
  ProgramBuilder b;
  b.param("N").add_descriptor("X", DType::Float64, {"N"}, Role::Input).add_descriptor("A", DType::Float64, {"N"});
  b.add_descriptor("O", DType::Float64, {}, Role::Output);
  b.add_state("s0");
  b.begin_map("m", {"i"}, {MapRange{SymExpr::integer(0), SymExpr::name("N")}});
  b.add_compute("w", {{"x", "X", {"i"}}}, {{"a", "(sin x)", "A", {"i"}}});
  b.add_compute("r", {{"a", "A", {"i"}}}, {{"o", "a", "O", {}, Wcr::Sum}});
  b.end_map();
  b.set_dependent("O").add_independent("X");
  EXPECT_TRUE(has_rule(build_errors(b), "MapSelfRead"));
}

TEST(Validate, TaskletBodyNamesMustBeConnectors) {
  ProgramBuilder b;
  b.add_descriptor("X", DType::Float64, {}, Role::Input).add_descriptor("O", DType::Float64, {}, Role::Output);
  b.add_state("s0");
  b.add_compute("t", {{"x", "X", {}}}, {{"o", "(* x y)", "O", {}}});
  b.set_dependent("O").add_independent("X");
  auto ds = build_errors(b);
  EXPECT_FALSE(ds.empty());
}

TEST(Validate, ZeroStepMap) {
  ProgramBuilder b;
  b.param("N").add_descriptor("X", DType::Float64, {"N"}, Role::Input);
  b.add_descriptor("O", DType::Float64, {}, Role::Output);
  b.add_state("s0");
  b.begin_map("m", {"i"}, {MapRange{SymExpr::integer(0), SymExpr::name("N"), SymExpr::integer(0)}});
  b.add_compute("t", {{"x", "X", {"i"}}}, {{"o", "x", "O", {}, Wcr::Sum}});
  b.end_map();
  b.set_dependent("O").add_independent("X");
  EXPECT_TRUE(has_rule(build_errors(b), "ZeroStep"));
}

TEST(Validate, UnknownParameterInShape) {
  ProgramBuilder b;
  b.add_descriptor("X", DType::Float64, {"K"}, Role::Input).add_descriptor("O", DType::Float64, {}, Role::Output);
  b.add_state("s0");
  b.add_library_call("sum", LibraryOp::ReduceSum, "O", "X");
  b.set_dependent("O").add_independent("X");
  EXPECT_FALSE(build_errors(b).empty());
}

TEST(Ir, SizesAndHeaders) {
  Program p = kernels::scaled_products();
  EXPECT_EQ(size_bytes(p.desc("C"), {{"N", 3620}}), 3620LL * 3620 * 4);
  EXPECT_EQ(size_bytes(p.desc("O"), {{"N", 3620}}), 4);
  EXPECT_THROW(size_bytes(p.desc("C"), {}), Error);

  LoopHeader up{"i", SymExpr::integer(1), SymExpr::integer(10), Cmp::Lt, SymExpr::parse("(+ i 3)")};
  EXPECT_EQ(enumerate_header(up, {}, 100), (std::vector<std::int64_t>{1, 4, 7}));
  LoopHeader dbl{"i", SymExpr::integer(1), SymExpr::integer(16), Cmp::Lt, SymExpr::parse("(* i 2)")};
  EXPECT_EQ(enumerate_header(dbl, {}, 100), (std::vector<std::int64_t>{1, 2, 4, 8}));
  LoopHeader stuck{"i", SymExpr::integer(0), SymExpr::integer(1), Cmp::Lt, SymExpr::parse("i")};
  try {
    enumerate_header(stuck, {}, 100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonTermination);
  }
  EXPECT_EQ(enumerate_range(MapRange{SymExpr::integer(5), SymExpr::integer(0), SymExpr::integer(-2)}, {}),
            (std::vector<std::int64_t>{5, 3, 1}));
}

}  // namespace
}  // namespace gradflow
