// SPDX-License-Identifier: Apache-2.0
//
// Structural analyses over the region tree: locations, last-writer version
// labels, store anchors, execution counts and control-flow paths.
#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gradflow/ir.hpp"

namespace gradflow {

/// One descent step: element index in the current region and the sub-region
/// taken (branch arm index; 0 for a loop body, 1 + j for loop peel j).
struct Step {
  int element = 0;
  int sub = 0;
  friend bool operator==(const Step&, const Step&) = default;
  friend auto operator<=>(const Step&, const Step&) = default;
};

/// A compute node inside a state.
struct NodeLoc {
  std::vector<Step> steps;
  int element = 0;
  int node = 0;
  friend bool operator==(const NodeLoc&, const NodeLoc&) = default;
};

/// An insertion point: before element `element` of the region reached by
/// `region`, or before node `node` of that element's state when node >= 0.
struct ProgramPoint {
  std::vector<Step> region;
  int element = 0;
  int node = -1;
  friend bool operator==(const ProgramPoint&, const ProgramPoint&) = default;
};

const Region& region_at(const Region& top, const std::vector<Step>& steps);
Region& region_at(Region& top, const std::vector<Step>& steps);
/// Loops enclosing the region reached by `steps`, outermost first.
std::vector<const LoopRegion*> loops_on(const Region& top, const std::vector<Step>& steps);
bool inside_loop_or_branch(const std::vector<Step>& steps);

using ValueKey = std::pair<std::string, int>;  // descriptor, version

struct VersionLabel {
  std::set<int> writers;  // write-site indices; -1 is the initial value
  std::string scope;      // innermost enclosing loop that varies the value
  friend bool operator==(const VersionLabel&, const VersionLabel&) = default;
};

struct WriteSite {
  std::string node_id;
  std::string state_id;
  NodeLoc loc;
  std::vector<std::string> loops;  // enclosing loop ids, outermost first
};

struct VersionInfo {
  std::vector<WriteSite> sites;
  std::map<std::string, int> site_of_node;
  std::map<std::string, std::vector<VersionLabel>> labels;
  std::map<std::string, ValueKey> memlet_value;  // read memlet id -> value
  std::map<ValueKey, std::vector<NodeLoc>> readers;

  const VersionLabel& label(const ValueKey& v) const;
};

/// Last-writer analysis. Every read of a descriptor inside a top-level compute
/// node gets the label (possible last writers, variant scope); labels are
/// numbered densely per descriptor with version 0 the untouched initial value.
VersionInfo analyze_versions(const Program& p);

/// Where a snapshot of `v` is taken: hoisted to dominate all readers, and out
/// of loops that do not vary the value.
ProgramPoint store_anchor(const Program& p, const VersionInfo& vi, const ValueKey& v);

/// Top-level insertion point before the first top-level element containing any
/// of `uses`.
ProgramPoint first_use_point(const std::vector<NodeLoc>& uses);

/// Number of times the region reached by `steps` is entered, counting every
/// loop iteration; branches are assumed taken.
std::int64_t execution_count(const Program& p, const std::vector<Step>& steps, const IntBindings& params,
                             std::int64_t trip_limit);

/// Choice of arm (or -1 for none) for every branch outside loops reachable
/// along one control-flow path, keyed by branch id.
using PathChoice = std::map<std::string, int>;
std::vector<PathChoice> enumerate_paths(const Program& p, std::size_t limit = std::size_t{1} << 16);
std::string path_name(const PathChoice& c);

/// Locations of all compute nodes reading descriptor `data` through a memlet
/// with the given version tag (backward programs).
std::vector<NodeLoc> versioned_readers(const Program& p, const std::string& data, int version);

}  // namespace gradflow
