// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "gradflow/differentiate.hpp"
#include "gradflow/symexpr.hpp"

namespace gradflow {
namespace {

double at_x(const SymExpr& e, double x) { return eval(e, Bindings{{"x", x}}); }

TEST(SymExpr, ParsePrintRoundTrip) {
  for (const char* text : {"(* 2 (sin x))", "(> (at A 0 0) 0)", "(where (< i 3) (+ i 1) 0)", "(// i 2)", "-1.5"}) {
    SymExpr e = SymExpr::parse(text);
    EXPECT_EQ(SymExpr::parse(e.str()), e) << text;
  }
}

TEST(SymExpr, VariadicAddFolds) {
  EXPECT_EQ(eval(SymExpr::parse("(+ a b c)"), Bindings{{"a", 1}, {"b", 2}, {"c", 4}}), 7.0);
  EXPECT_EQ(eval(SymExpr::parse("(- a)"), Bindings{{"a", 3}}), -3.0);
}

TEST(SymExpr, SyntaxErrorCarriesPosition) {
  try {
    SymExpr::parse("(+ x (frob y))");
    FAIL() << "expected SyntaxError";
  } catch (const SyntaxError& e) {
    EXPECT_EQ(e.position(), 6u);
  }
  EXPECT_THROW(SymExpr::parse("(+ x"), SyntaxError);
  EXPECT_THROW(SymExpr::parse("(sin x y)"), SyntaxError);
}

TEST(SymExpr, IntegerSemantics) {
  IntBindings b{{"i", -7}};
  EXPECT_EQ(eval_int(SymExpr::parse("(// i 2)"), b), -4);
  EXPECT_EQ(eval_int(SymExpr::parse("(% i 3)"), b), 2);
  EXPECT_THROW(eval_int(SymExpr::parse("(// i 0)"), b), Error);
  EXPECT_THROW(eval_int(SymExpr::parse("(+ i k)"), b), Error);
}

TEST(SymExpr, DomainErrors) {
  try {
    eval(SymExpr::parse("(log x)"), Bindings{{"x", 0.0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DomainError);
  }
  EXPECT_THROW(eval(SymExpr::parse("(/ 1 x)"), Bindings{{"x", 0.0}}), Error);
}

TEST(SymExpr, SimplifyFoldsIdentities) {
  EXPECT_EQ(simplify(SymExpr::parse("(+ (* 1 x) 0)")), SymExpr::name("x"));
  EXPECT_TRUE(simplify(SymExpr::parse("(* 0 (sin x))")).is_const(0.0));
  EXPECT_TRUE(simplify(SymExpr::parse("(+ 2 3)")).is_const(5.0));
}

TEST(SymExpr, AffineForms) {
  auto a = as_affine(SymExpr::parse("(+ (* 2 i) (- j 3))"));
  ASSERT_TRUE(a);
  EXPECT_EQ(a->constant, -3);
  EXPECT_EQ(a->terms.size(), 2u);
  EXPECT_FALSE(as_affine(SymExpr::parse("(* i j)")));
  EXPECT_FALSE(as_affine(SymExpr::parse("(* 0.5 i)")));
}

TEST(SymExpr, OpCount) {
  EXPECT_EQ(op_count(SymExpr::parse("x")), 0);
  EXPECT_EQ(op_count(SymExpr::parse("(* a b)")), 1);
  EXPECT_EQ(op_count(SymExpr::parse("(+ (* a b) (sin b))")), 3);
}

TEST(Differentiate, MatchesCentralDifferences) {
  const char* bodies[] = {"(* x x)",       "(sin (* 2 x))", "(exp (tanh x))", "(/ 1 (+ 1 (* x x)))",
                          "(sqrt (+ 2 x))", "(log (+ 3 x))", "(pow x 3)",      "(cos (* x (sin x)))"};
  for (const char* text : bodies) {
    SymExpr f = SymExpr::parse(text);
    SymExpr df = differentiate(f, "x");
    for (double x : {-0.7, 0.3, 1.1}) {
      double h = 1e-6;
      double fd = (at_x(f, x + h) - at_x(f, x - h)) / (2 * h);
      EXPECT_NEAR(at_x(df, x), fd, 1e-6 * std::max(1.0, std::abs(fd))) << text << " at " << x;
    }
  }
}

TEST(Differentiate, ConstantAndOtherNames) {
  EXPECT_TRUE(differentiate(SymExpr::parse("(sin y)"), "x").is_const(0.0));
  EXPECT_EQ(differentiate(SymExpr::parse("(* y x)"), "x"), SymExpr::name("y"));
}

TEST(Differentiate, KinksWarnAndPickSubgradient) {
  std::vector<std::string> warnings;
  SymExpr d = differentiate(SymExpr::parse("(abs x)"), "x", &warnings);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_EQ(at_x(d, 0.0), 0.0);
  EXPECT_EQ(at_x(d, -2.0), -1.0);
  SymExpr m = differentiate(SymExpr::parse("(max x 1)"), "x");
  EXPECT_EQ(at_x(m, 1.0), 1.0);
  EXPECT_EQ(at_x(m, 0.0), 0.0);
}

}  // namespace
}  // namespace gradflow
