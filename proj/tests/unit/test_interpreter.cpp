// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "gradflow/backward.hpp"
#include "gradflow/builder.hpp"
#include "gradflow/interpreter.hpp"
#include "kernels.hpp"

namespace gradflow {
namespace {

Array vec(std::vector<double> v) {
  Array a = Array::zeros({static_cast<std::int64_t>(v.size())});
  a.data = std::move(v);
  return a;
}

ErrorCode forward_error(const Program& p, const ArrayMap& in, const IntBindings& params) {
  try {
    run_forward(p, in, params);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

TEST(Interpreter, ElementwiseChainHandOracle) {
  std::vector<double> x{0.1, -0.4, 0.7};
  auto r = run_forward(kernels::elementwise_chain(), {{"X", vec(x)}}, {{"N", 3}});
  double want = 0;
  for (double v : x) want += std::sin(v) * std::exp(v);
  EXPECT_DOUBLE_EQ(r.outputs.at("O").value(), want);
  EXPECT_EQ(r.outputs.at("B").data[1], std::sin(-0.4));
}

TEST(Interpreter, TriangularNestHandOracle) {
  std::vector<double> x{0.3, -0.2, 0.5, 0.1};
  auto r = run_forward(kernels::triangular_nest(), {{"X", vec(x)}}, {{"N", 4}});
  std::vector<double> a = x;
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < i; ++j) a[i] = a[i] + 0.5 * std::sin(a[j]);
  double want = 0;
  for (double v : a) want += v;
  EXPECT_DOUBLE_EQ(r.outputs.at("O").value(), want);
}

TEST(Interpreter, MatMulHandOracle) {
  Array A = Array::zeros({2, 2}), B = Array::zeros({2, 1});
  A.data = {1, 2, 3, 4};
  B.data = {0.5, -1};
  auto r = run_forward(kernels::matmul_sum(), {{"A", A}, {"B", B}}, {{"N", 2}, {"K", 2}, {"M", 1}});
  EXPECT_EQ(r.outputs.at("C").data, (std::vector<double>{-1.5, -2.5}));
  EXPECT_DOUBLE_EQ(r.outputs.at("O").value(), std::sin(-1.5) + std::sin(-2.5));
}

TEST(Interpreter, Float32RoundsOnWrite) {
  ProgramBuilder b;
  b.add_descriptor("X", DType::Float32, {}, Role::Input).add_descriptor("O", DType::Float32, {}, Role::Output);
  b.add_state("s0");
  b.add_compute("t", {{"x", "X", {}}}, {{"o", "(/ (* x x) 3)", "O", {}}});
  Program p = b.set_dependent("O").add_independent("X").finish();
  double x = static_cast<float>(0.1);
  auto r = run_forward(p, {{"X", Array::scalar(x, DType::Float32)}}, {});
  EXPECT_EQ(r.outputs.at("O").value(), static_cast<double>(static_cast<float>(x * x / 3)));
  EXPECT_NE(r.outputs.at("O").value(), x * x / 3);
}

TEST(Interpreter, OutOfBoundsRead) {
  ProgramBuilder b;
  b.param("N").add_descriptor("X", DType::Float64, {"N"}, Role::Input);
  b.add_descriptor("O", DType::Float64, {}, Role::Output);
  b.add_state("s0");
  b.begin_map("m", {"i"}, {MapRange{SymExpr::integer(0), SymExpr::name("N")}});
  b.add_compute("t", {{"x", "X", {"(+ i 1)"}}}, {{"o", "x", "O", {}, Wcr::Sum}});
  b.end_map();
  Program p = b.set_dependent("O").add_independent("X").finish();
  EXPECT_EQ(forward_error(p, {{"X", vec({1, 2, 3})}}, {{"N", 3}}), ErrorCode::OutOfBounds);
}

TEST(Interpreter, DomainErrorSurfaces) {
  ProgramBuilder b;
  b.add_descriptor("X", DType::Float64, {}, Role::Input).add_descriptor("O", DType::Float64, {}, Role::Output);
  b.add_state("s0");
  b.add_compute("t", {{"x", "X", {}}}, {{"o", "(log x)", "O", {}}});
  Program p = b.set_dependent("O").add_independent("X").finish();
  EXPECT_EQ(forward_error(p, {{"X", Array::scalar(-1.0)}}, {}), ErrorCode::DomainError);
}

TEST(Interpreter, TripLimitStopsRunawayLoops) {
  ProgramBuilder b;
  b.add_descriptor("X", DType::Float64, {}, Role::Input).add_descriptor("O", DType::Float64, {}, Role::Output);
  b.begin_loop("stuck", "i", "1", Cmp::Lt, "2", "(* i 1)");
  b.add_state("s0");
  b.add_compute("t", {{"x", "X", {}}}, {{"o", "x", "O", {}, Wcr::Sum}});
  b.end_loop();
  Program p = b.set_dependent("O").add_independent("X").finish();
  ::setenv("GRADFLOW_TRIP_LIMIT", "1000", 1);
  ErrorCode code = forward_error(p, {{"X", Array::scalar(1.0)}}, {});
  ::unsetenv("GRADFLOW_TRIP_LIMIT");
  EXPECT_EQ(code, ErrorCode::NonTermination);
}

TEST(Interpreter, MissingInputIsReported) {
  EXPECT_THROW(run_forward(kernels::elementwise_chain(), {}, {{"N", 3}}), Error);
  EXPECT_THROW(run_forward(kernels::elementwise_chain(), {{"X", vec({1, 2})}}, {{"N", 3}}), Error);
}

TEST(Interpreter, BranchTraceAndSignature) {
  Program p = kernels::two_branch();
  auto pos = run_forward(p, {{"X", vec({0.5, 1, 2})}}, {{"N", 3}});
  auto neg = run_forward(p, {{"X", vec({-0.5, 1, 2})}}, {{"N", 3}});
  EXPECT_EQ(pos.tape.arm("sign", {}), 0);
  EXPECT_EQ(neg.tape.arm("sign", {}), 1);
  EXPECT_NE(pos.signature, neg.signature);
  EXPECT_EQ(neg.outputs.at("O").value(), -0.125 + 1 + 8);
}

TEST(Interpreter, StorePolicySnapshotsPerIteration) {
  Program p = kernels::doubling_loop(false);
  auto r = run_forward(p, {{"X", vec({0.5, 1, 2, 3, 4, 5, 6, 7})}}, {{"N", 8}}, {ValueKey{"acc", 1}});
  EXPECT_FALSE(r.tape.stored_values.empty());
}

TEST(Backward, DoubleReadHandDerivative) {
  Program p = kernels::double_read();
  BackwardResult bwd = build_backward(p);
  std::vector<double> x{0.3, -1.2, 0.8, 2.0, -0.1};
  StorePolicy store;
  for (const auto& item : bwd.requirement.items) store.insert(item.key);
  auto fwd = run_forward(p, {{"X", vec(x)}}, {{"N", 5}}, store);
  ArrayMap g = run_backward(bwd.program, fwd.tape);
  const Array& gx = g.at(bwd.gradient_of.at("X"));
  for (std::size_t i = 0; i < x.size(); ++i) {
    double want = 3 * x[i] * x[i] + std::sin(x[i]) + x[i] * std::cos(x[i]);
    EXPECT_NEAR(gx.data[i], want, 1e-12);
  }
}

TEST(Backward, SeedScalesGradient) {
  Program p = kernels::elementwise_chain();
  BackwardResult bwd = build_backward(p);
  StorePolicy store;
  for (const auto& item : bwd.requirement.items) store.insert(item.key);
  auto fwd = run_forward(p, {{"X", vec({0.2, 0.4})}}, {{"N", 2}}, store);
  ArrayMap g1 = run_backward(bwd.program, fwd.tape, 1.0);
  ArrayMap g2 = run_backward(bwd.program, fwd.tape, 2.0);
  const std::string gx = bwd.gradient_of.at("X");
  for (int i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(g2.at(gx).data[i], 2 * g1.at(gx).data[i]);
}

TEST(Backward, MissingTapeValueIsReported) {
  Program p = kernels::elementwise_chain();
  BackwardResult bwd = build_backward(p);
  auto fwd = run_forward(p, {{"X", vec({0.2, 0.4})}}, {{"N", 2}});
  try {
    run_backward(bwd.program, fwd.tape);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingTapeValue);
  }
}

TEST(Interpreter, RandomInputsAreSeeded) {
  Program p = kernels::matmul_sum();
  IntBindings params{{"N", 3}, {"K", 4}, {"M", 2}};
  EXPECT_EQ(random_inputs(p, params, 3), random_inputs(p, params, 3));
  EXPECT_NE(random_inputs(p, params, 3), random_inputs(p, params, 4));
  ArrayMap in = random_inputs(p, params, 3);
  for (double v : in.at("A").data) {
    EXPECT_GE(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

}  // namespace
}  // namespace gradflow
