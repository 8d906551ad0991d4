// SPDX-License-Identifier: Apache-2.0
//
// Store-or-recompute planning for forwarded values: sizes and costs, memory
// event sequences per control-flow path, an exact 0/1 ILP and the rewrite of
// the forward and backward programs for a chosen assignment.
//
// Memory model (bytes of payload, scalars and program inputs excluded):
//   forward arrays are allocated at their first write and freed when the
//   forward pass ends; a stored value costs S times the execution count of its
//   snapshot point; gradients are allocated at their first write and freed at
//   the end of the backward pass; a recompute block allocates R + S and
//   releases R right away; stored and recomputed values are released after the
//   outermost loop (or state) holding their last backward read.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gradflow/analysis.hpp"
#include "gradflow/backward.hpp"
#include "gradflow/ir.hpp"

namespace gradflow {

/// Recompute block: one backward state rebuilding a value from program inputs.
struct RecomputeBlock {
  State state;                                      // nodes in dependency order
  std::map<std::string, DataDescriptor> buffers;    // scratch and result descriptors
  std::vector<std::string> scratch;
  std::string result;
};

struct ForwardedValue {
  int id = 0;
  ValueKey key;
  std::string name;            // descriptor, or descriptor@version when ambiguous
  bool scalar = false;
  std::int64_t S = 0;          // bytes of one snapshot
  std::int64_t exec_count = 1; // snapshots taken per run
  std::int64_t c = 0;          // recompute FLOPs
  std::int64_t R = 0;          // recompute scratch peak, bytes
  bool fixed_store = false;    // must be stored
  std::string fixed_reason;
  ProgramPoint anchor;         // snapshot point in the forward program
  ProgramPoint use_point;      // block insertion point in the backward program
  bool used = false;           // read by the backward program at all
  std::optional<RecomputeBlock> block;
};

/// One value per forwarding requirement, ordered by production time.
std::vector<ForwardedValue> collect_forwarded(const Program& forward, const BackwardResult& bwd,
                                              const IntBindings& params);

/// Dependency closure of `fv` over program inputs as a backward state. Throws
/// IrrecomputableValue.
RecomputeBlock recompute_subgraph(const Program& forward, const VersionInfo& versions, const ValueKey& key,
                                  int id);

/// constant + sum(coef[i] * v_i), bytes.
struct AffineBytes {
  std::int64_t constant = 0;
  std::map<int, std::int64_t> coef;

  std::int64_t eval(const std::vector<int>& v) const;
  AffineBytes& operator+=(const AffineBytes& o);
};

struct MemoryEvent {
  std::string label;
  AffineBytes delta;
  AffineBytes level;  // running total after the event
};

struct PathSequence {
  std::string name;
  PathChoice choice;
  std::vector<MemoryEvent> events;
};

/// Throws PathExplosion past 2^16 paths.
std::vector<PathSequence> build_memory_sequences(const Program& forward, const Program& backward,
                                                 const std::vector<ForwardedValue>& fvs, const IntBindings& params);

struct ILPProblem {
  std::vector<std::int64_t> cost;  // c_i, paid when v_i = 0
  std::vector<bool> fixed;         // v_i forced to 1
  std::vector<AffineBytes> constraints;
  std::int64_t limit = 0;          // M, bytes
  std::size_t paths = 0;
};

struct ILPSolution {
  std::vector<int> v;
  std::int64_t objective = 0;
  std::int64_t peak = 0;
  std::int64_t nodes = 0;
  double wall_ms = 0.0;
  std::string method;  // "store-all", "branch-and-bound" or "exhaustive"
};

ILPProblem build_ilp(const std::vector<PathSequence>& sequences, const std::vector<ForwardedValue>& fvs,
                     std::int64_t limit_bytes);
/// Largest constraint value under `v`.
std::int64_t evaluate_peak(const ILPProblem& p, const std::vector<int>& v);
std::int64_t evaluate_objective(const ILPProblem& p, const std::vector<int>& v);
/// Exact optimum; among equal objectives the lexicographically largest v.
/// Throws InfeasibleError with the minimum achievable peak.
ILPSolution solve_ilp(const ILPProblem& p);
/// Minimum over assignments of the peak.
std::int64_t minimum_peak(const ILPProblem& p);

struct AppliedPlan {
  Program forward;
  Program backward;
};

/// Stored values get a snapshot copy (`X__st<i>`) in the forward program;
/// recomputed values get their block before the first backward use.
AppliedPlan apply_plan(const Program& forward, const Program& backward, const std::vector<ForwardedValue>& fvs,
                       const std::vector<int>& v);

struct PlanResult {
  BackwardResult bwd;
  std::vector<ForwardedValue> values;
  std::vector<PathSequence> sequences;
  ILPProblem problem;
  ILPSolution solution;
  AppliedPlan applied;
};

/// End to end: backward construction, value collection, sequences, ILP and
/// rewrite.
PlanResult plan(const Program& forward, const IntBindings& params, std::int64_t limit_bytes);

/// JSON report: values (id, name, S_bytes, c_flops, R_bytes, decision),
/// objective_flops, peak_bytes, limit_bytes, solver_ms, paths_checked.
std::string plan_report_json(const PlanResult& r);

}  // namespace gradflow
