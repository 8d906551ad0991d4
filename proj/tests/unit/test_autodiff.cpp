// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <set>

#include "gradflow/backward.hpp"
#include "gradflow/builder.hpp"
#include "gradflow/ccs.hpp"
#include "gradflow/verification.hpp"
#include "kernels.hpp"

namespace gradflow {
namespace {

ErrorCode error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

class CorpusGradient : public ::testing::TestWithParam<int> {};

TEST_P(CorpusGradient, MatchesFiniteDifferences) {
  const kernels::Kernel k = kernels::corpus().at(GetParam());
  ArrayMap in = random_inputs(k.program, k.params, 7);
  ArrayMap g = reverse_mode_gradient(k.program, in, k.params);
  FdResult fd = finite_difference_gradient(k.program, in, k.params);
  GradientComparison c = compare_gradients(g, fd, 1e-5);
  EXPECT_LE(c.max_rel_error, 1e-5) << k.name;
  EXPECT_TRUE(c.failing.empty()) << k.name;
  EXPECT_GT(c.compared, 0) << k.name;
}

INSTANTIATE_TEST_SUITE_P(Kernels, CorpusGradient, ::testing::Range(0, static_cast<int>(kernels::corpus().size())),
                         [](const ::testing::TestParamInfo<int>& info) {
                           return kernels::corpus().at(info.param).name;
                         });

TEST(Backward, ScaledProductsForwardsTheThreeProducts) {
  BackwardResult bwd = build_backward(kernels::scaled_products());
  std::set<std::string> names;
  for (const auto& item : bwd.requirement.items) names.insert(item.key.first);
  EXPECT_EQ(names, (std::set<std::string>{"A0", "A1", "A2"}));
  EXPECT_TRUE(bwd.program.descriptors.count(bwd.gradient_of.at("D")));
}

TEST(Backward, ProgramInputsAreNotForwarded) {
  BackwardResult bwd = build_backward(kernels::matmul_sum());
  for (const auto& item : bwd.requirement.items) {
    EXPECT_NE(item.key, (ValueKey{"A", 0}));
    EXPECT_NE(item.key, (ValueKey{"B", 0}));
  }
}

TEST(Ccs, DeadNodesAreNotReversed) {
  Program p = kernels::dead_nodes(true);
  Ccs ccs = extract_ccs(p);
  EXPECT_TRUE(ccs.tracked.count("B"));
  EXPECT_FALSE(ccs.tracked.count("E"));
  EXPECT_FALSE(ccs.tracked.count("F"));
  BackwardResult bwd = build_backward(p);
  for (const auto& [fwd, nodes] : bwd.reversed) {
    EXPECT_EQ(fwd.find("cos"), std::string::npos) << fwd;
    EXPECT_EQ(fwd.find("scale"), std::string::npos) << fwd;
  }
  EXPECT_FALSE(bwd.program.descriptors.count("grad_E"));
  EXPECT_FALSE(bwd.program.descriptors.count("grad_F"));
}

TEST(Ccs, RestrictionDropsDeadWork) {
  Program p = kernels::dead_nodes(true);
  Program r = restrict_to_ccs(p, extract_ccs(p));
  EXPECT_TRUE(validate(r).empty());
  ArrayMap in = random_inputs(p, {{"N", 5}}, 3);
  auto full = run_forward(p, in, {{"N", 5}});
  auto small = run_forward(r, in, {{"N", 5}});
  EXPECT_EQ(full.outputs.at("O"), small.outputs.at("O"));
  EXPECT_LT(small.op_count, full.op_count);
}

TEST(Ccs, LoopCarriedNeedsOneWarmupIteration) {
  Ccs ccs = extract_ccs(kernels::loop_carried());
  EXPECT_EQ(ccs.warmup.at("walk"), 1);
  EXPECT_TRUE(ccs.loop_tracked.at("walk").count("A"));
}

TEST(Ccs, StraightLoopNeedsNoWarmup) {
  Ccs ccs = extract_ccs(kernels::loop_with_branch());
  EXPECT_EQ(ccs.warmup.at("walk"), 0);
}

TEST(Ccs, BranchConditionInputsAreControl) {
  Ccs ccs = extract_ccs(kernels::two_branch());
  EXPECT_TRUE(ccs.control.count("X"));
  EXPECT_TRUE(ccs.gradient.count("B"));
}

TEST(Ccs, WhileLoopsAreUnsupported) {
  EXPECT_EQ(error_of([] { extract_ccs(kernels::while_loop()); }), ErrorCode::UnsupportedLoop);
  EXPECT_EQ(error_of([] { build_backward(kernels::while_loop()); }), ErrorCode::UnsupportedLoop);
}

TEST(Ccs, UnwrittenDependentIsUnreachable) {
  ProgramBuilder b;
  b.param("N").add_descriptor("X", DType::Float64, {"N"}, Role::Input);
  b.add_descriptor("A", DType::Float64, {"N"}).add_descriptor("O", DType::Float64, {}, Role::Output);
  b.add_state("s0");
  b.add_library_call("cp", LibraryOp::ElementwiseUnary, "A", "X", "", "(sin x)");
  Program p = b.set_dependent("O").add_independent("X").finish();
  EXPECT_EQ(error_of([&] { extract_ccs(p); }), ErrorCode::DependentUnreachable);
}

TEST(Backward, OverwrittenArrayIsClearedBetweenWrites) {
  Program p = kernels::overwrite_clear();
  ArrayMap in = random_inputs(p, {{"N", 6}}, 11);
  ArrayMap g = reverse_mode_gradient(p, in, {{"N", 6}});
  const auto& x = in.at("X").data;
  const auto& gx = g.at("X").data;
  for (int i = 0; i < 6; ++i) {
    double a = x[i] * x[i];
    double want = i < 2 ? 3 * std::sin(a) + 3 * x[i] * std::cos(a) * 2 * x[i]
                        : std::sin(a) * 2 * x[i] + a * std::cos(a) * 2 * x[i];
    EXPECT_NEAR(gx[i], want, 1e-12) << i;
  }
}

TEST(Backward, InverseMustRetraceIterates) {
  Program p = kernels::doubling_loop(true);
  std::get<LoopRegion>(p.region.elements[1]).inverse = SymExpr::parse("(- i 1)");
  ArrayMap in = random_inputs(p, {{"N", 16}}, 5);
  EXPECT_EQ(error_of([&] { reverse_mode_gradient(p, in, {{"N", 16}}); }), ErrorCode::MissingInverse);
}

TEST(Backward, AffineHeadersReverse) {
  LoopHeader out;
  LoopHeader up{"i", SymExpr::integer(1), SymExpr::integer(10), Cmp::Lt, SymExpr::parse("(+ i 3)")};
  ASSERT_TRUE(reverse_affine_header(up, out));
  EXPECT_EQ(enumerate_header(out, {}, 100), (std::vector<std::int64_t>{7, 4, 1}));
  LoopHeader down{"j", SymExpr::integer(9), SymExpr::integer(-1), Cmp::Gt, SymExpr::parse("(- j 2)")};
  ASSERT_TRUE(reverse_affine_header(down, out));
  EXPECT_EQ(enumerate_header(out, {}, 100), (std::vector<std::int64_t>{1, 3, 5, 7, 9}));
  LoopHeader dbl{"i", SymExpr::integer(1), SymExpr::integer(16), Cmp::Lt, SymExpr::parse("(* i 2)")};
  EXPECT_FALSE(reverse_affine_header(dbl, out));
}

TEST(Backward, KinksWarn) {
  ProgramBuilder b;
  b.param("N").add_descriptor("X", DType::Float64, {"N"}, Role::Input);
  b.add_descriptor("O", DType::Float64, {}, Role::Output);
  b.add_state("s0");
  b.begin_map("m", {"i"}, {MapRange{SymExpr::integer(0), SymExpr::name("N")}});
  b.add_compute("t", {{"x", "X", {"i"}}}, {{"o", "(abs x)", "O", {}, Wcr::Sum}});
  b.end_map();
  Program p = b.set_dependent("O").add_independent("X").finish();
  BackwardResult bwd = build_backward(p);
  EXPECT_FALSE(bwd.warnings.empty());
}

}  // namespace
}  // namespace gradflow
