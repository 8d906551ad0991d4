// SPDX-License-Identifier: Apache-2.0
//
// Programmatic construction of programs. Calls nest like the region tree:
// begin_loop/end_loop, begin_branch/begin_arm/end_arm/end_branch and
// begin_map/end_map open and close scopes; add_state starts a new state in the
// innermost open region.
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gradflow/ir.hpp"

namespace gradflow {

/// One input of add_compute: connector, array and element subset.
struct ComputeIn {
  std::string conn;
  std::string data;
  std::vector<std::string> subset;
};

/// One output of add_compute.
struct ComputeOut {
  std::string conn;
  std::string expr;
  std::string data;
  std::vector<std::string> subset;
  Wcr wcr = Wcr::Overwrite;
};

class ProgramBuilder {
 public:
  ProgramBuilder();
  ~ProgramBuilder();
  ProgramBuilder(const ProgramBuilder&) = delete;
  ProgramBuilder& operator=(const ProgramBuilder&) = delete;

  ProgramBuilder& param(const std::string& name);
  ProgramBuilder& add_descriptor(const std::string& name, DType dtype, const std::vector<std::string>& shape,
                                 Role role = Role::Intermediate, Lifetime lifetime = Lifetime::Program);

  ProgramBuilder& add_state(const std::string& id);

  // Dataflow nodes go into the current state or the innermost open map body.
  ProgramBuilder& add_access(const std::string& id, const std::string& data);
  ProgramBuilder& add_tasklet(const std::string& id, const std::vector<std::string>& inputs,
                              const std::vector<std::pair<std::string, std::string>>& outputs);
  ProgramBuilder& add_library(const std::string& id, LibraryOp op, const std::string& expr = "");
  ProgramBuilder& add_memlet(const std::string& id, const std::string& src, const std::string& src_conn,
                             const std::string& dst, const std::string& dst_conn,
                             const std::optional<std::vector<std::string>>& subset = std::nullopt,
                             Wcr wcr = Wcr::Overwrite);
  ProgramBuilder& begin_map(const std::string& id, const std::vector<std::string>& params,
                            const std::vector<MapRange>& ranges);
  ProgramBuilder& end_map();

  /// Tasklet plus its access nodes and memlets.
  ProgramBuilder& add_compute(const std::string& id, const std::vector<ComputeIn>& ins,
                              const std::vector<ComputeOut>& outs);
  /// Library node plus its access nodes and memlets; `y` may be empty.
  ProgramBuilder& add_library_call(const std::string& id, LibraryOp op, const std::string& out,
                                   const std::string& x, const std::string& y = "", const std::string& expr = "",
                                   Wcr wcr = Wcr::Overwrite);

  ProgramBuilder& begin_loop(const std::string& id, const std::string& iterator, const std::string& init,
                             Cmp cmp, const std::string& bound, const std::string& update,
                             const std::optional<std::string>& inverse = std::nullopt);
  ProgramBuilder& end_loop();
  ProgramBuilder& begin_branch(const std::string& id);
  /// Empty condition: else-arm.
  ProgramBuilder& begin_arm(const std::string& condition);
  ProgramBuilder& end_arm();
  ProgramBuilder& end_branch();

  ProgramBuilder& set_dependent(const std::string& name);
  ProgramBuilder& add_independent(const std::string& name);

  /// Validates; throws ValidationError.
  Program finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gradflow
