// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradflow/backward.hpp"
#include "gradflow/builder.hpp"
#include "gradflow/ccs.hpp"
#include "gradflow/checkpointing.hpp"
#include "gradflow/verification.hpp"
#include "kernels.hpp"
#include "planned.hpp"
#include "random_programs.hpp"

namespace gradflow {
namespace {

constexpr double kMiB = 1024.0 * 1024.0;

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool within(double got, double want, double rel) { return std::abs(got - want) <= rel * std::abs(want); }

std::vector<int> bits(int mask, int k) {
  std::vector<int> v(k);
  for (int i = 0; i < k; ++i) v[i] = (mask >> i) & 1;
  return v;
}

std::string show(const std::vector<int>& v) {
  std::string s = "(";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s + ")";
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

const std::int64_t kPlanN = 3620;
const std::int64_t kLimit500 = 500LL * 1024 * 1024;

Verdict scaled_products_planning() {
  Verdict v;
  IntBindings params{{"N", kPlanN}};
  PlanResult r = plan(kernels::scaled_products(), params, kLimit500);
  v.require(r.values.size() == 3, "three forwarded values");
  if (r.values.size() != 3) return v;
  const double c_expected[3] = {13, 26, 39};
  const double r_expected[3] = {0, 50, 100};
  for (int i = 0; i < 3; ++i) {
    const ForwardedValue& fv = r.values[i];
    v.require(fv.name == "A" + std::to_string(i), "value order");
    v.require(within(fv.S / kMiB, 50.0, 1e-3), "S_" + std::to_string(i) + " within 0.1% of 50 MiB");
    v.require(within(fv.c / 1e6, c_expected[i], 0.10), "c_" + std::to_string(i) + " within 10%");
    if (i == 0) {
      v.require(fv.R == 0, "R_0 = 0");
    } else {
      v.require(within(fv.R / kMiB, r_expected[i], 1e-3), "R_" + std::to_string(i) + " within 0.1%");
    }
  }
  const std::vector<int>& x = r.solution.v;
  v.require(x == std::vector<int>{0, 1, 1}, "recompute A0, store A1 and A2");
  v.require(r.solution.objective == r.values[0].c, "objective = c_0");
  v.require(r.solution.peak <= kLimit500, "peak within limit");
  v.require(r.solution.wall_ms < 100.0, "solver under 100 ms");
  v.detail << fmt(" S=(%.3f,", r.values[0].S / kMiB) << fmt("%.3f,", r.values[1].S / kMiB)
           << fmt("%.3f) MiB", r.values[2].S / kMiB) << fmt(" c=(%.3f,", r.values[0].c / 1e6)
           << fmt("%.3f,", r.values[1].c / 1e6) << fmt("%.3f) MFLOP", r.values[2].c / 1e6)
           << fmt(" R=(%.3f,", r.values[0].R / kMiB) << fmt("%.3f,", r.values[1].R / kMiB)
           << fmt("%.3f) MiB", r.values[2].R / kMiB) << " v=" << show(x)
           << fmt(" objective=%.3f MFLOP", r.solution.objective / 1e6)
           << fmt(" peak=%.3f MiB", r.solution.peak / kMiB) << fmt(" solver=%.3f ms", r.solution.wall_ms)
           << " (" << r.solution.method << ")";
  return v;
}

Verdict configuration_sweep() {
  Verdict v;
  Program p = kernels::scaled_products();
  IntBindings params{{"N", kPlanN}};
  auto pl = kernels::prepare_planning(p, params);
  ILPProblem prob = build_ilp(pl.sequences, pl.values, kLimit500);
  std::set<int> sim_feasible;
  std::int64_t best_obj = -1;
  std::vector<int> best;
  v.detail << " peaks:";
  for (int mask = 0; mask < 8; ++mask) {
    std::vector<int> x = bits(mask, 3);
    AppliedPlan ap = apply_plan(p, pl.bwd.program, pl.values, x);
    MemoryTimeline tl = simulate_memory(ap.forward, ap.backward, params, pl.sequences.at(0).choice);
    v.require(tl.peak == evaluate_peak(prob, x), "simulated peak equals model for " + show(x));
    v.require(tl.final_total == 0, "timeline returns to zero");
    v.detail << " " << show(x) << fmt("=%.1f", tl.peak / kMiB);
    if (tl.peak <= kLimit500) {
      sim_feasible.insert(mask);
      std::int64_t obj = evaluate_objective(prob, x);
      if (best_obj < 0 || obj < best_obj || (obj == best_obj && x > best)) {
        best_obj = obj;
        best = x;
      }
    }
  }
  BruteForcePlan bf = brute_force_plan(pl.values, pl.sequences, kLimit500);
  ILPSolution sol = solve_ilp(prob);
  v.require(static_cast<std::int64_t>(sim_feasible.size()) == bf.feasible_count, "feasible set size matches");
  v.require(bf.v == best, "brute force picks the cheapest simulated-feasible configuration");
  v.require(sol.v == bf.v && sol.objective == bf.objective, "ILP equals brute force");
  v.detail << " MiB; feasible " << sim_feasible.size() << "/8, ILP " << show(sol.v) << ", brute force "
           << show(bf.v);
  return v;
}

Verdict gradient_oracles() {
  Verdict v;
  auto t0 = std::chrono::steady_clock::now();
  std::vector<kernels::Kernel> ks = kernels::corpus();
  double worst = 0;
  std::string worst_name;
  std::int64_t compared = 0, excluded = 0;
  for (const auto& k : ks) {
    ArrayMap in = random_inputs(k.program, k.params, 7);
    ArrayMap g = reverse_mode_gradient(k.program, in, k.params);
    FdResult fd = finite_difference_gradient(k.program, in, k.params);
    GradientComparison c = compare_gradients(g, fd, 1e-5);
    v.require(c.max_rel_error <= 1e-5 && c.failing.empty(), k.name);
    v.require(c.compared > 0, k.name + " has compared elements");
    compared += c.compared;
    excluded += c.excluded;
    if (c.max_rel_error >= worst) {
      worst = c.max_rel_error;
      worst_name = k.name;
    }
  }
  double secs = elapsed_s(t0);
  v.require(ks.size() >= 10, "at least 10 kernels");
  v.require(secs < 60.0, "under 60 s");
  v.detail << " " << ks.size() << " kernels, max rel err " << fmt("%.2e", worst) << " (" << worst_name << "), "
           << compared << " elements compared, " << excluded << " excluded, " << fmt("%.1f s", secs);
  return v;
}

Verdict ilp_exactness() {
  Verdict v;
  int solved = 0, infeasible = 0;
  std::size_t max_k = 0, multi_path = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Program p = kernels::random_planning_program(seed);
    IntBindings params;
    auto pl = kernels::prepare_planning(p, params);
    std::size_t k = pl.values.size();
    max_k = std::max(max_k, k);
    if (pl.sequences.size() > 1) ++multi_path;
    v.require(k >= 1 && k <= 12, "seed " + std::to_string(seed) + " has 1..12 values");
    ILPProblem base = build_ilp(pl.sequences, pl.values, 0);
    std::int64_t all = evaluate_peak(base, std::vector<int>(k, 1));
    std::int64_t mn = minimum_peak(base);
    std::mt19937_64 rng(seed);
    std::int64_t m = std::uniform_int_distribution<std::int64_t>(mn - (all - mn) / 10, all)(rng);
    ILPProblem prob = build_ilp(pl.sequences, pl.values, m);
    bool ilp_inf = false, bf_inf = false;
    ILPSolution sol;
    BruteForcePlan bf;
    try {
      sol = solve_ilp(prob);
    } catch (const InfeasibleError&) {
      ilp_inf = true;
    }
    try {
      bf = brute_force_plan(pl.values, pl.sequences, m);
    } catch (const InfeasibleError&) {
      bf_inf = true;
    }
    std::string tag = "seed " + std::to_string(seed);
    v.require(ilp_inf == bf_inf, tag + " feasibility agrees");
    if (ilp_inf || bf_inf) {
      ++infeasible;
      continue;
    }
    v.require(sol.v == bf.v && sol.objective == bf.objective, tag + " assignment and objective");
    AppliedPlan ap = apply_plan(p, pl.bwd.program, pl.values, sol.v);
    std::int64_t t_star = 0;
    for (const PathSequence& seq : pl.sequences) {
      MemoryTimeline tl = simulate_memory(ap.forward, ap.backward, params, seq.choice);
      std::int64_t model = 0;
      for (const MemoryEvent& e : seq.events) model = std::max(model, e.level.eval(sol.v));
      v.require(tl.peak == model, tag + " path " + seq.name + " simulated peak equals model");
      v.require(tl.final_total == 0, tag + " timeline returns to zero");
      t_star = std::max(t_star, tl.peak);
    }
    v.require(t_star == sol.peak && t_star <= m, tag + " t* <= M");
    ++solved;
  }
  v.detail << " " << solved << " solved, " << infeasible << " infeasible (both agree), max k " << max_k << ", "
           << multi_path << " with two paths";
  return v;
}

// Probe program: `loop` with a body that stamps a running counter into
// P[i + offset]. The visit order is the iterates sorted by stamp.
std::vector<std::int64_t> probe_order(const LoopRegion& loop, std::int64_t offset, std::int64_t size,
                                      const IntBindings& params) {
  ProgramBuilder b;
  for (const auto& [name, value] : params) b.param(name);
  b.add_descriptor("C0", DType::Float64, {}, Role::Input)
      .add_descriptor("cnt", DType::Float64, {})
      .add_descriptor("P", DType::Float64, {std::to_string(size)}, Role::Output);
  b.add_state("probe_init");
  b.add_compute("probe_seed", {{"z", "C0", {}}}, {{"c", "z", "cnt", {}}});
  b.begin_loop("probe_loop", "i", "0", Cmp::Lt, "1", "(+ i 1)");
  b.add_state("probe_body");
  b.add_compute("stamp", {{"k", "cnt", {}}},
                {{"p", "k", "P", {"(+ i " + std::to_string(offset) + ")"}}, {"n", "(+ k 1)", "cnt", {}}});
  b.end_loop();
  Program p = b.set_dependent("cnt").add_independent("C0").finish();
  LoopRegion& l = std::get<LoopRegion>(p.region.elements[1]);
  l.header = loop.header;
  l.header.iterator = "i";
  l.inverse = loop.inverse;
  l.mode = loop.mode;
  l.forward_header = loop.forward_header;
  auto r = run_forward(p, {{"C0", Array::scalar(1.0)}}, params);
  const Array& P = r.outputs.at("P");
  std::vector<std::pair<double, std::int64_t>> stamped;
  for (std::int64_t j = 0; j < size; ++j) {
    if (P.data[j] != 0.0) stamped.emplace_back(P.data[j], j - offset);
  }
  std::sort(stamped.begin(), stamped.end());
  std::vector<std::int64_t> order;
  for (const auto& s : stamped) order.push_back(s.second);
  return order;
}

// A differentiable loop over X[i + offset] with the given header.
Program header_program(const LoopHeader& h, const std::optional<std::string>& inverse, std::int64_t offset,
                       std::int64_t size) {
  ProgramBuilder b;
  b.add_descriptor("X", DType::Float64, {std::to_string(size)}, Role::Input)
      .add_descriptor("acc", DType::Float64, {})
      .add_descriptor("O", DType::Float64, {}, Role::Output);
  b.add_state("init");
  b.add_compute("seed", {{"x", "X", {std::to_string(offset)}}}, {{"a", "x", "acc", {}}});
  b.begin_loop("walk", "i", h.init.str(), h.cmp, h.bound.str(), h.update.str(), inverse);
  b.add_state("body");
  b.add_compute("step", {{"a", "acc", {}}, {"x", "X", {"(+ i " + std::to_string(offset) + ")"}}},
                {{"o", "(sin (+ a x))", "acc", {}}});
  b.end_loop();
  b.add_state("fin");
  b.add_compute("out", {{"a", "acc", {}}}, {{"o", "a", "O", {}}});
  return b.set_dependent("O").add_independent("X").finish();
}

const LoopRegion& backward_loop(const Program& bwd) {
  for (const Element& e : bwd.region.elements) {
    if (const auto* l = std::get_if<LoopRegion>(&e)) return *l;
  }
  throw Error(ErrorCode::Internal, "backward program has no loop");
}

Verdict loop_reversal() {
  Verdict v;
  int nonempty = 0, lt = 0, gt = 0, neg_stride = 0;
  const std::int64_t offset = 20, size = 41;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    LoopHeader h = kernels::random_affine_header(seed);
    std::string tag = "header " + std::to_string(seed);
    std::vector<std::int64_t> fwd = enumerate_header(h, {}, 1000);
    Program p = header_program(h, std::nullopt, offset, size);
    BackwardResult bwd = build_backward(p);
    const LoopRegion& bl = backward_loop(bwd.program);
    std::vector<std::int64_t> rev(fwd.rbegin(), fwd.rend());
    v.require(enumerate_header(bl.header, {}, 1000) == rev, tag + " reversed header enumeration");
    LoopRegion fl = std::get<LoopRegion>(p.region.elements[1]);
    v.require(probe_order(fl, offset, size, {}) == fwd, tag + " forward probe");
    v.require(probe_order(bl, offset, size, {}) == rev, tag + " backward probe");
    if (!fwd.empty()) ++nonempty;
    (h.cmp == Cmp::Lt ? lt : gt)++;
    if (as_affine(h.update)->constant < 0) ++neg_stride;
  }
  v.require(lt > 0 && gt > 0 && neg_stride > 0 && nonempty > 0, "both senses and strides covered");

  Program d = kernels::doubling_loop(true);
  IntBindings params{{"N", 16}};
  BackwardResult bwd = build_backward(d);
  const LoopRegion& fl = std::get<LoopRegion>(d.region.elements[1]);
  const LoopRegion& bl = backward_loop(bwd.program);
  std::vector<std::int64_t> fwd = probe_order(fl, 0, 16, params);
  std::vector<std::int64_t> back = probe_order(bl, 0, 16, params);
  v.require(bl.mode == LoopMode::Inverse, "doubling loop reversed through its inverse");
  v.require(fwd == std::vector<std::int64_t>{1, 2, 4, 8}, "doubling forward [1,2,4,8]");
  v.require(back == std::vector<std::int64_t>{8, 4, 2, 1}, "doubling backward [8,4,2,1]");
  v.detail << " 1000 headers (" << lt << " '<', " << gt << " '>', " << neg_stride << " negative strides, "
           << 1000 - nonempty << " zero-trip); doubling forward " << show(std::vector<int>(fwd.begin(), fwd.end()))
           << " backward " << show(std::vector<int>(back.begin(), back.end()));
  return v;
}

Verdict ccs_soundness() {
  Verdict v;
  int programs = 0;
  std::int64_t ops_full = 0, ops_ccs = 0;
  for (const auto& k : kernels::corpus()) {
    Program r = restrict_to_ccs(k.program, extract_ccs(k.program));
    v.require(validate(r).empty(), k.name + " restriction is valid");
    ArrayMap in = random_inputs(k.program, k.params, 29);
    auto full = run_forward(k.program, in, k.params);
    auto small = run_forward(r, in, k.params);
    v.require(full.outputs.at(k.program.dependent) == small.outputs.at(k.program.dependent),
              k.name + " dependent bit-exact");
    ops_full += full.op_count;
    ops_ccs += small.op_count;
    ++programs;
  }
  IntBindings params{{"N", 9}};
  Program with = kernels::dead_nodes(true), without = kernels::dead_nodes(false);
  ArrayMap in = random_inputs(without, params, 31);
  v.require(run_forward(with, in, params).outputs.at("O") == run_forward(without, in, params).outputs.at("O"),
            "dead nodes leave O unchanged");
  v.require(reverse_mode_gradient(with, in, params).at("X") == reverse_mode_gradient(without, in, params).at("X"),
            "dead nodes leave the gradient unchanged");
  v.detail << " " << programs << " programs bit-exact, forward ops " << ops_full << " -> " << ops_ccs
           << " under the CCS; dead-node variants agree";
  return v;
}

Verdict plan_invariance() {
  Verdict v;
  Program p = kernels::scaled_products(DType::Float32);
  IntBindings params{{"N", 64}};
  auto pl = kernels::prepare_planning(p, params);
  ArrayMap in = random_inputs(p, params, 41);
  std::int64_t S = pl.values.at(0).S;
  ILPProblem prob = build_ilp(pl.sequences, pl.values, 10 * S);
  ILPSolution sol = solve_ilp(prob);
  std::vector<int> store(3, 1), recompute(3, 0);
  auto grad = [&](const std::vector<int>& x) {
    AppliedPlan ap = apply_plan(p, pl.bwd.program, pl.values, x);
    return kernels::planned_gradients(p, pl.bwd, ap, in, params).at("D");
  };
  Array g_store = grad(store), g_rec = grad(recompute), g_ilp = grad(sol.v);
  bool rec_feasible = evaluate_peak(prob, recompute) <= 10 * S;
  v.require(g_store == g_ilp, "ILP plan equals all-store");
  if (rec_feasible) v.require(g_store == g_rec, "all-recompute equals all-store");
  v.require(g_store == grad({1, 0, 1}) && g_store == grad({0, 1, 0}), "mixed plans equal all-store");
  double norm = 0;
  for (double x : g_store.data) norm += x * x;
  v.detail << " N=64 float32, M=10S, ILP " << show(sol.v) << ", all-recompute "
           << (rec_feasible ? "feasible" : "infeasible") << ", " << g_store.size() << " gradient entries"
           << fmt(", |grad D|=%.6f", std::sqrt(norm));
  return v;
}

}  // namespace
}  // namespace gradflow

int main() {
  using namespace gradflow;
  struct Criterion {
    const char* name;
    std::function<Verdict()> run;
  };
  const Criterion criteria[] = {
      {"1 scaled-products planning (N=3620, 500 MiB)", scaled_products_planning},
      {"2 eight-configuration sweep", configuration_sweep},
      {"3 gradient oracle suite (rel err <= 1e-5, < 60 s)", gradient_oracles},
      {"4 ILP exactness on 100 random instances", ilp_exactness},
      {"5 loop-reversal property", loop_reversal},
      {"6 CCS soundness", ccs_soundness},
      {"7 plan invariance (scaled products, N=64)", plan_invariance},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << " exception: " << e.what();
    }
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS " : "FAIL ") << c.name << ":" << v.detail.str() << std::endl;
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << (7 - failed) << "/7" << std::endl;
  return failed ? 1 : 0;
}
