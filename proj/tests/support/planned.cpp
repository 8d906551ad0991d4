// SPDX-License-Identifier: Apache-2.0
#include "planned.hpp"

namespace gradflow::kernels {

ArrayMap planned_gradients(const Program& forward, const BackwardResult& bwd, const AppliedPlan& applied,
                           const ArrayMap& inputs, const IntBindings& params) {
  Executor fwd(applied.forward, params);
  ExecutionResult r = fwd.forward(inputs);
  ArrayMap grads = run_backward(applied.backward, r.tape);
  ArrayMap out;
  for (const std::string& ind : forward.independents) out.emplace(ind, grads.at(bwd.gradient_of.at(ind)));
  return out;
}

Planning prepare_planning(const Program& forward, const IntBindings& params) {
  Planning p;
  p.bwd = build_backward(forward);
  p.values = collect_forwarded(forward, p.bwd, params);
  p.sequences = build_memory_sequences(forward, p.bwd.program, p.values, params);
  return p;
}

}  // namespace gradflow::kernels
