// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "gradflow/analysis.hpp"
#include "gradflow/ir.hpp"

namespace gradflow {

/// Scalar floating-point operations of one node execution summed over its
/// iteration space. Tasklets count their body operations plus one addition per
/// `sum` output; MatMul is 2mnk, ReduceSum is numel, elementwise nodes are
/// numel times the body operations.
std::int64_t node_flops(const Program& p, const Graph& g, const Node& n, const IntBindings& bindings);

/// FLOPs per control-flow path (see enumerate_paths), keyed by path_name.
/// Branches inside loops contribute their most expensive arm. Throws
/// UnresolvableTripCount when a trip count cannot be evaluated.
std::map<std::string, std::int64_t> count_flops(const Program& p, const IntBindings& params);

/// FLOPs of a region fragment (branches must be absent or resolved by `path`).
std::int64_t count_flops_region(const Program& p, const Region& r, const IntBindings& params,
                                const PathChoice& path = {});

/// Largest per-path count.
std::int64_t count_flops_max(const Program& p, const IntBindings& params);

}  // namespace gradflow
