// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "gradflow/checkpointing.hpp"
#include "gradflow/verification.hpp"
#include "json.hpp"
#include "kernels.hpp"
#include "planned.hpp"
#include "random_programs.hpp"

namespace gradflow {
namespace {

constexpr std::int64_t kS2 = 16;  // one 2x2 float32 array

kernels::Planning scaled_products_n2() { return kernels::prepare_planning(kernels::scaled_products(), {{"N", 2}}); }

TEST(Forwarded, ScaledProductsSizesAndCosts) {
  auto pl = scaled_products_n2();
  ASSERT_EQ(pl.values.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    const ForwardedValue& fv = pl.values[i];
    EXPECT_EQ(fv.name, "A" + std::to_string(i));
    EXPECT_EQ(fv.S, kS2);
    EXPECT_EQ(fv.exec_count, 1);
    EXPECT_EQ(fv.c, 4 * (i + 1));
    EXPECT_EQ(fv.R, kS2 * i);
    EXPECT_FALSE(fv.fixed_store);
    ASSERT_TRUE(fv.block.has_value());
  }
}

TEST(MemoryModel, ScaledProductsEventLevels) {
  auto pl = scaled_products_n2();
  ASSERT_EQ(pl.sequences.size(), 1u);
  const auto& ev = pl.sequences[0].events;
  ASSERT_GE(ev.size(), 2u);
  EXPECT_EQ(ev[0].level.constant, kS2);
  EXPECT_EQ(ev[0].level.eval({1, 1, 1}), kS2);
  EXPECT_EQ(ev[1].level.constant, kS2);
  EXPECT_EQ(ev[1].level.eval({1, 0, 0}), 2 * kS2);
  EXPECT_EQ(ev[1].level.eval({0, 1, 1}), kS2);
  EXPECT_EQ(ev.back().level.eval({1, 1, 1}), 0);
  EXPECT_EQ(ev.back().level.eval({0, 0, 0}), 0);
}

TEST(MemoryModel, ScaledProductsPeaks) {
  auto pl = scaled_products_n2();
  ILPProblem prob = build_ilp(pl.sequences, pl.values, 0);
  EXPECT_EQ(evaluate_peak(prob, {1, 1, 1}), 11 * kS2);
  EXPECT_EQ(evaluate_peak(prob, {0, 1, 1}), 10 * kS2);
  EXPECT_EQ(evaluate_objective(prob, {0, 1, 1}), 4);
  EXPECT_EQ(evaluate_objective(prob, {0, 0, 0}), 24);
}

TEST(Ilp, StoreAllWhenItFits) {
  auto pl = scaled_products_n2();
  ILPSolution s = solve_ilp(build_ilp(pl.sequences, pl.values, 11 * kS2));
  EXPECT_EQ(s.v, (std::vector<int>{1, 1, 1}));
  EXPECT_EQ(s.objective, 0);
  EXPECT_EQ(s.method, "store-all");
}

TEST(Ilp, ScaledProductsAtTenArrays) {
  auto pl = scaled_products_n2();
  ILPSolution s = solve_ilp(build_ilp(pl.sequences, pl.values, 10 * kS2));
  EXPECT_EQ(s.v, (std::vector<int>{0, 1, 1}));
  EXPECT_EQ(s.objective, 4);
  EXPECT_EQ(s.peak, 10 * kS2);
  ILPSolution again = solve_ilp(build_ilp(pl.sequences, pl.values, s.peak));
  EXPECT_EQ(again.v, s.v);
}

TEST(Ilp, InfeasibleReportsMinimumPeak) {
  auto pl = scaled_products_n2();
  ILPProblem prob = build_ilp(pl.sequences, pl.values, 4 * kS2);
  std::int64_t mn = minimum_peak(prob);
  try {
    solve_ilp(prob);
    FAIL();
  } catch (const InfeasibleError& e) {
    EXPECT_EQ(e.min_peak_bytes(), mn);
    EXPECT_EQ(e.limit_bytes(), 4 * kS2);
  }
  EXPECT_THROW(brute_force_plan(pl.values, pl.sequences, 4 * kS2), InfeasibleError);
}

TEST(Ilp, FixedValuesStayStored) {
  auto pl = scaled_products_n2();
  ILPProblem prob = build_ilp(pl.sequences, pl.values, 10 * kS2);
  prob.fixed[0] = true;
  try {
    ILPSolution s = solve_ilp(prob);
    EXPECT_EQ(s.v[0], 1);
  } catch (const InfeasibleError&) {
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) EXPECT_GT(evaluate_peak(prob, {1, a, b}), 10 * kS2);
  }
}

TEST(Ilp, ObjectiveFallsAsTheLimitGrows) {
  for (std::uint64_t seed : {3u, 8u, 21u, 40u}) {
    Program p = kernels::random_planning_program(seed);
    auto pl = kernels::prepare_planning(p, {});
    ILPProblem base = build_ilp(pl.sequences, pl.values, 0);
    std::int64_t lo = minimum_peak(base);
    std::int64_t hi = evaluate_peak(base, std::vector<int>(pl.values.size(), 1));
    std::int64_t prev = -1;
    for (int step = 0; step <= 8; ++step) {
      std::int64_t m = lo + (hi - lo) * step / 8;
      ILPSolution s = solve_ilp(build_ilp(pl.sequences, pl.values, m));
      EXPECT_LE(s.peak, m);
      if (prev >= 0) EXPECT_LE(s.objective, prev) << "seed " << seed << " M " << m;
      prev = s.objective;
    }
    EXPECT_EQ(prev, 0);
  }
}

TEST(Ilp, MatchesBruteForceOnRandomPrograms) {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    Program p = kernels::random_planning_program(seed);
    auto pl = kernels::prepare_planning(p, {});
    ILPProblem base = build_ilp(pl.sequences, pl.values, 0);
    std::int64_t lo = minimum_peak(base);
    std::int64_t hi = evaluate_peak(base, std::vector<int>(pl.values.size(), 1));
    std::int64_t m = lo + (hi - lo) / 3;
    ILPSolution s = solve_ilp(build_ilp(pl.sequences, pl.values, m));
    BruteForcePlan bf = brute_force_plan(pl.values, pl.sequences, m);
    EXPECT_EQ(s.v, bf.v) << "seed " << seed;
    EXPECT_EQ(s.objective, bf.objective) << "seed " << seed;
  }
}

TEST(ApplyPlan, GradientsDoNotDependOnThePlan) {
  Program p = kernels::scaled_products();
  IntBindings params{{"N", 4}};
  auto pl = kernels::prepare_planning(p, params);
  ArrayMap in = random_inputs(p, params, 17);
  ArrayMap reference = reverse_mode_gradient(p, in, params);
  for (int mask = 0; mask < 8; ++mask) {
    std::vector<int> v{mask & 1, (mask >> 1) & 1, (mask >> 2) & 1};
    AppliedPlan ap = apply_plan(p, pl.bwd.program, pl.values, v);
    EXPECT_TRUE(validate(ap.forward).empty());
    EXPECT_TRUE(validate(ap.backward).empty());
    ArrayMap g = kernels::planned_gradients(p, pl.bwd, ap, in, params);
    EXPECT_EQ(g.at("D"), reference.at("D")) << "mask " << mask;
  }
}

TEST(ApplyPlan, LoopValuesRoundTrip) {
  for (const char* name : {"ping_pong", "triangular_nest", "doubling_replay", "two_branch", "loop_carried"}) {
    for (const auto& k : kernels::corpus()) {
      if (k.name != name) continue;
      auto pl = kernels::prepare_planning(k.program, k.params);
      ArrayMap in = random_inputs(k.program, k.params, 23);
      ArrayMap reference = reverse_mode_gradient(k.program, in, k.params);
      std::vector<int> v(pl.values.size(), 1);
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!pl.values[i].fixed_store && pl.values[i].block) v[i] = 0;
      }
      for (const auto& choice : {std::vector<int>(pl.values.size(), 1), v}) {
        AppliedPlan ap = apply_plan(k.program, pl.bwd.program, pl.values, choice);
        ArrayMap g = kernels::planned_gradients(k.program, pl.bwd, ap, in, k.params);
        for (const auto& [ind, arr] : reference) EXPECT_EQ(g.at(ind), arr) << name;
      }
    }
  }
}

TEST(Planner, ReportJson) {
  PlanResult r = plan(kernels::scaled_products(), {{"N", 2}}, 10 * kS2);
  auto j = nlohmann::json::parse(plan_report_json(r));
  EXPECT_EQ(j.at("values").size(), 3u);
  EXPECT_EQ(j.at("values")[0].at("decision"), "recompute");
  EXPECT_EQ(j.at("values")[1].at("decision"), "store");
  EXPECT_EQ(j.at("objective_flops"), 4);
  EXPECT_EQ(j.at("peak_bytes"), 10 * kS2);
  EXPECT_EQ(j.at("limit_bytes"), 10 * kS2);
  EXPECT_EQ(j.at("paths_checked"), 1);
}

}  // namespace
}  // namespace gradflow
