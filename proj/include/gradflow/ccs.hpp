// SPDX-License-Identifier: Apache-2.0
//
// Critical computation subgraph: the forward elements that can influence the
// dependent output, found by a reverse traversal with a growing tracked set.
#pragma once

#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "gradflow/ir.hpp"

namespace gradflow {

struct CcsRegion;

/// Node ids of one state (map body nodes included).
struct CcsState {
  std::set<std::string> kept;      // influences the output or a kept condition
  std::set<std::string> data;      // writes a tracked descriptor
  std::set<std::string> reversed;  // gets a backward counterpart
  friend bool operator==(const CcsState&, const CcsState&) = default;
};

struct CcsLoop {
  Box<CcsRegion> body;            // stable evaluation
  std::vector<CcsRegion> peel;    // first k backward iterations
  int evaluations = 0;
};

struct CcsBranch {
  std::vector<CcsRegion> arms;
  bool kept = false;
  bool over_approximated = false;
};

struct CcsElement {
  std::variant<CcsState, CcsLoop, CcsBranch> kind;
};

struct CcsRegion {
  std::vector<CcsElement> elements;
};

bool operator==(const CcsRegion& a, const CcsRegion& b);
bool operator==(const CcsLoop& a, const CcsLoop& b);
bool operator==(const CcsBranch& a, const CcsBranch& b);
bool operator==(const CcsElement& a, const CcsElement& b);

struct Ccs {
  CcsRegion root;
  std::set<std::string> tracked;   // descriptors contributing to the output
  std::set<std::string> control;   // descriptors feeding kept branch conditions
  std::set<std::string> varied;    // descriptors depending on an independent
  std::set<std::string> gradient;  // varied and tracked
  std::map<std::string, int> warmup;                            // loop id -> k
  std::map<std::string, std::set<std::string>> loop_tracked;    // loop id -> stable set
};

/// Throws DependentUnreachable, UnsupportedLoop (while regions, k above the
/// descriptor count) and NoFixpoint.
Ccs extract_ccs(const Program& p);

/// Result of the loop fixpoint for one loop given the tracked set after it.
struct LoopFixpoint {
  CcsRegion body;
  std::vector<CcsRegion> peel;
  std::set<std::string> tracked;
  int warmup = 0;
  int evaluations = 0;
};
LoopFixpoint loop_ccs_fixpoint(const Program& p, const LoopRegion& loop, const std::set<std::string>& seed_tracked);

/// The forward program reduced to kept elements (stable loop bodies, branch
/// arms restricted individually, conditions kept).
Program restrict_to_ccs(const Program& p, const Ccs& ccs);

}  // namespace gradflow
