// SPDX-License-Identifier: Apache-2.0
//
// Oracles used by the tests and the CLI: central finite differences, an
// exhaustive store/recompute enumeration and a memory timeline simulator that
// walks the rewritten programs.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gradflow/analysis.hpp"
#include "gradflow/checkpointing.hpp"
#include "gradflow/interpreter.hpp"
#include "gradflow/ir.hpp"

namespace gradflow {

struct FdResult {
  ArrayMap gradients;                                // keyed by independent
  std::map<std::string, std::vector<bool>> excluded;  // elements near a kink or branch boundary
  double eps = 0.0;                                   // relative step scale used
};

/// Central differences of sum(dependent) with step eps * max(1, |x|) per
/// element. eps <= 0 selects sqrt of the machine epsilon of the independent's
/// type. Elements whose neighbourhood of 10 steps changes a branch or kink
/// outcome are excluded.
FdResult finite_difference_gradient(const Program& p, const ArrayMap& inputs, const IntBindings& params,
                                    double eps = 0.0);

/// Store-all forward run followed by the backward program; keyed by
/// independent.
ArrayMap reverse_mode_gradient(const Program& p, const ArrayMap& inputs, const IntBindings& params);

struct GradientComparison {
  double max_rel_error = 0.0;
  std::map<std::string, double> per_array;
  std::vector<std::pair<std::string, std::int64_t>> failing;  // (independent, flat index)
  std::int64_t compared = 0;
  std::int64_t excluded = 0;
};

/// |g - fd| / max(1, |fd|) over non-excluded elements.
GradientComparison compare_gradients(const ArrayMap& analytic, const FdResult& fd, double tolerance);

struct BruteForcePlan {
  std::vector<int> v;
  std::int64_t objective = 0;
  std::int64_t peak = 0;
  std::int64_t feasible_count = 0;
};

/// All 2^k assignments over the event sequences directly. Same tie-break as
/// solve_ilp. Throws InfeasibleError; InvalidArgument past 20 free values.
BruteForcePlan brute_force_plan(const std::vector<ForwardedValue>& fvs, const std::vector<PathSequence>& sequences,
                                std::int64_t limit_bytes);

struct TimelineEvent {
  std::string label;
  std::int64_t delta = 0;
  std::int64_t running = 0;
};

struct MemoryTimeline {
  std::vector<TimelineEvent> events;
  std::int64_t peak = 0;
  std::int64_t final_total = 0;
};

/// Allocation and release walk of a planned forward and backward pair along
/// one path. Throws NegativeResident when the running total drops below zero.
MemoryTimeline simulate_memory(const Program& forward, const Program& backward, const IntBindings& params,
                               const PathChoice& path);

}  // namespace gradflow
