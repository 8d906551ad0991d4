// SPDX-License-Identifier: Apache-2.0
//
// Backward program construction: every reversed forward element gets a
// counterpart that accumulates into gradient arrays (`grad_<name>`), placed in
// reverse program order.
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "gradflow/analysis.hpp"
#include "gradflow/ccs.hpp"
#include "gradflow/ir.hpp"

namespace gradflow {

/// One forward value read by the backward program.
struct ForwardedItem {
  ValueKey key;
  std::vector<std::string> producers;  // states holding the possible last writers
  std::string size;                    // byte size as an expression
};

struct ForwardingRequirement {
  std::vector<ForwardedItem> items;  // sorted by key
  bool contains(const ValueKey& k) const;
};

struct BackwardResult {
  Program program;
  ForwardingRequirement requirement;
  Ccs ccs;
  VersionInfo versions;                                     // of the forward program
  std::map<std::string, std::string> gradient_of;           // forward descriptor -> gradient descriptor
  std::map<std::string, std::vector<std::string>> reversed;  // forward node -> backward nodes
  std::vector<std::string> warnings;
};

/// Reversed header for the supported affine forms (constant integer stride
/// matching the comparison); a zero-trip header otherwise. Returns false when
/// the update is not `iterator + constant`.
bool reverse_affine_header(const LoopHeader& h, LoopHeader& out);

/// Backward loop: affine reversal, inverse replay or iterate-record replay.
/// Body and peel are left empty.
LoopRegion reverse_loop_header(const LoopRegion& loop);

BackwardResult build_backward(const Program& p);

}  // namespace gradflow
