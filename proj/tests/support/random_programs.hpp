// SPDX-License-Identifier: Apache-2.0
//
// Seeded random programs for planner and loop-reversal property tests.
#pragma once

#include <cstdint>

#include "gradflow/ir.hpp"

namespace gradflow::kernels {

/// Chains of sin, square and scaling stages over one to three independent
/// lanes of different sizes, optionally with a top-level branch, reduced into
/// one scalar. The forwarding requirement has between 1 and `max_values`
/// entries.
Program random_planning_program(std::uint64_t seed, int max_values = 12);

/// Random affine header: init and bound in [-20, 20], stride magnitude in
/// [1, 5] of either sign, either comparison. Mostly running loops; a stride
/// pointing away from the bound comes with a zero-trip header.
LoopHeader random_affine_header(std::uint64_t seed);

}  // namespace gradflow::kernels
