// SPDX-License-Identifier: Apache-2.0
#include "json.hpp"

#include "gradflow/checkpointing.hpp"

namespace gradflow {

PlanResult plan(const Program& forward, const IntBindings& params, std::int64_t limit_bytes) {
  PlanResult r;
  r.bwd = build_backward(forward);
  r.values = collect_forwarded(forward, r.bwd, params);
  r.sequences = build_memory_sequences(forward, r.bwd.program, r.values, params);
  r.problem = build_ilp(r.sequences, r.values, limit_bytes);
  r.solution = solve_ilp(r.problem);
  r.applied = apply_plan(forward, r.bwd.program, r.values, r.solution.v);
  return r;
}

std::string plan_report_json(const PlanResult& r) {
  nlohmann::ordered_json j;
  j["values"] = nlohmann::ordered_json::array();
  for (const ForwardedValue& fv : r.values) {
    nlohmann::ordered_json v;
    v["id"] = fv.id;
    v["name"] = fv.name;
    v["descriptor"] = fv.key.first;
    v["version"] = fv.key.second;
    v["S_bytes"] = fv.S;
    v["c_flops"] = fv.c;
    v["R_bytes"] = fv.R;
    v["decision"] = r.solution.v.at(fv.id) ? "store" : "recompute";
    if (fv.fixed_store) v["fixed"] = fv.fixed_reason;
    j["values"].push_back(std::move(v));
  }
  j["objective_flops"] = r.solution.objective;
  j["peak_bytes"] = r.solution.peak;
  j["limit_bytes"] = r.problem.limit;
  j["solver_ms"] = r.solution.wall_ms;
  j["solver_method"] = r.solution.method;
  j["solver_nodes"] = r.solution.nodes;
  j["paths_checked"] = r.problem.paths;
  return j.dump(2) + "\n";
}

}  // namespace gradflow
