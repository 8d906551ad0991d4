// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "gradflow/checkpointing.hpp"
#include "gradflow/interpreter.hpp"

namespace gradflow::kernels {

/// Forward run of the rewritten forward program (snapshots come from its
/// stored copies, not from a store policy) followed by the rewritten backward
/// program. Keyed by independent.
ArrayMap planned_gradients(const Program& forward, const BackwardResult& bwd, const AppliedPlan& applied,
                           const ArrayMap& inputs, const IntBindings& params);

/// Everything up to the ILP for one program: backward, values and sequences.
struct Planning {
  BackwardResult bwd;
  std::vector<ForwardedValue> values;
  std::vector<PathSequence> sequences;
};
Planning prepare_planning(const Program& forward, const IntBindings& params);

}  // namespace gradflow::kernels
