// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include "gradflow/checkpointing.hpp"

namespace gradflow {

namespace {

std::vector<int> point_key(const ProgramPoint& p) {
  std::vector<int> k;
  for (const Step& s : p.region) {
    k.push_back(s.element);
    k.push_back(s.sub);
  }
  k.push_back(p.element);
  k.push_back(p.node);
  return k;
}

std::string unique_name(const Program& p, std::string base) {
  while (p.descriptors.count(base)) base += "_";
  return base;
}

void check(const Program& p, const char* which) {
  for (const Diagnostic& d : validate(p)) {
    if (d.severity == Diagnostic::Severity::Error) {
      throw Error(ErrorCode::Internal, std::string(which) + " program after planning: " + format_diagnostic(d));
    }
  }
}

void insert_copy(Program& fwd, const ForwardedValue& fv, const std::string& copy) {
  std::string tag = "__st" + std::to_string(fv.id);
  Region& r = region_at(fwd.region, fv.anchor.region);
  Memlet in{tag + ".mr", tag + ".r", "", tag + ".copy", "x", std::nullopt, Wcr::Overwrite, std::nullopt};
  Memlet out{tag + ".mw", tag + ".copy", "out", tag + ".w", "", std::nullopt, Wcr::Overwrite, std::nullopt};
  std::vector<Node> nodes{Node{tag + ".r", AccessNode{fv.key.first}},
                          Node{tag + ".copy", LibraryNode{LibraryOp::ElementwiseUnary, SymExpr::name("x")}},
                          Node{tag + ".w", AccessNode{copy}}};
  if (fv.anchor.node < 0) {
    State s;
    s.id = tag;
    s.graph.nodes = std::move(nodes);
    s.graph.edges = {std::move(in), std::move(out)};
    r.elements.insert(r.elements.begin() + fv.anchor.element, Element{std::move(s)});
    return;
  }
  Graph& g = std::get<State>(r.elements.at(fv.anchor.element)).graph;
  g.nodes.insert(g.nodes.begin() + fv.anchor.node, nodes.begin(), nodes.end());
  g.edges.push_back(std::move(in));
  g.edges.push_back(std::move(out));
}

struct Rename {
  std::string to;
  std::optional<int> version;
};

void rename_graph(Graph& g, const std::map<ValueKey, Rename>& renames) {
  for (Node& n : g.nodes) {
    if (auto* m = std::get_if<MapNode>(&n.kind)) rename_graph(*m->body, renames);
  }
  std::map<std::string, std::string> access_data;
  for (const Node& n : g.nodes) {
    if (const AccessNode* a = n.access()) access_data[n.id] = a->data;
  }
  std::map<std::string, std::string> retarget;  // access node id -> new data
  for (Memlet& e : g.edges) {
    auto src = access_data.find(e.src);
    if (src == access_data.end()) continue;
    auto it = renames.find({src->second, e.version.value_or(0)});
    if (it == renames.end()) continue;
    retarget[e.src] = it->second.to;
    e.version = it->second.version;
  }
  for (Node& n : g.nodes) {
    auto it = retarget.find(n.id);
    if (it != retarget.end()) std::get<AccessNode>(n.kind).data = it->second;
  }
}

void rename_region(Region& r, const std::map<ValueKey, Rename>& renames) {
  for (Element& e : r.elements) {
    if (auto* s = std::get_if<State>(&e)) {
      rename_graph(s->graph, renames);
    } else if (auto* l = std::get_if<LoopRegion>(&e)) {
      rename_region(*l->body, renames);
      for (Region& p : l->peel) rename_region(p, renames);
    } else if (auto* b = std::get_if<BranchRegion>(&e)) {
      for (BranchArm& a : b->arms) rename_region(*a.body, renames);
    } else {
      rename_region(*std::get<WhileRegion>(e).body, renames);
    }
  }
}

}  // namespace

AppliedPlan apply_plan(const Program& forward, const Program& backward, const std::vector<ForwardedValue>& fvs,
                       const std::vector<int>& v) {
  if (v.size() != fvs.size()) throw Error(ErrorCode::InvalidArgument, "assignment size does not match values");
  AppliedPlan out{forward, backward};
  std::map<ValueKey, Rename> renames;
  std::vector<const ForwardedValue*> stored, recomputed;
  for (const ForwardedValue& fv : fvs) {
    bool store = v[fv.id] || fv.fixed_store || !fv.block;
    if (store) {
      stored.push_back(&fv);
    } else if (fv.used) {
      recomputed.push_back(&fv);
    }
  }

  std::map<int, std::string> copies;
  for (const ForwardedValue* fv : stored) {
    DataDescriptor d = forward.desc(fv->key.first);
    d.role = Role::StoredCopy;
    d.lifetime = Lifetime::Scoped;
    d.gradient_of.clear();
    std::string name = unique_name(out.forward, fv->key.first + "__st" + std::to_string(fv->id));
    out.forward.descriptors[name] = d;
    out.backward.descriptors[name] = d;
    copies[fv->id] = name;
    renames[fv->key] = Rename{name, 0};
  }
  std::sort(stored.begin(), stored.end(), [](const ForwardedValue* a, const ForwardedValue* b) {
    auto ka = point_key(a->anchor), kb = point_key(b->anchor);
    if (ka != kb) return ka > kb;
    return a->id > b->id;
  });
  for (const ForwardedValue* fv : stored) insert_copy(out.forward, *fv, copies.at(fv->id));

  for (const ForwardedValue* fv : recomputed) {
    for (const auto& [name, d] : fv->block->buffers) {
      if (out.backward.descriptors.count(name)) {
        throw Error(ErrorCode::Internal, "recompute buffer '" + name + "' collides with a descriptor");
      }
      out.backward.descriptors[name] = d;
    }
    renames[fv->key] = Rename{fv->block->result, std::nullopt};
  }
  rename_region(out.backward.region, renames);

  std::sort(recomputed.begin(), recomputed.end(), [](const ForwardedValue* a, const ForwardedValue* b) {
    if (a->use_point.element != b->use_point.element) return a->use_point.element > b->use_point.element;
    return a->id > b->id;
  });
  for (const ForwardedValue* fv : recomputed) {
    auto& elems = out.backward.region.elements;
    elems.insert(elems.begin() + fv->use_point.element, Element{fv->block->state});
  }

  check(out.forward, "forward");
  check(out.backward, "backward");
  return out;
}

}  // namespace gradflow
