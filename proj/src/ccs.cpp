// SPDX-License-Identifier: Apache-2.0
#include "gradflow/ccs.hpp"

#include <algorithm>

namespace gradflow {

bool operator==(const CcsRegion& a, const CcsRegion& b) { return a.elements == b.elements; }
bool operator==(const CcsLoop& a, const CcsLoop& b) { return *a.body == *b.body && a.peel == b.peel; }
bool operator==(const CcsBranch& a, const CcsBranch& b) { return a.arms == b.arms && a.kept == b.kept; }
bool operator==(const CcsElement& a, const CcsElement& b) { return a.kind == b.kind; }

namespace {

struct Flow {
  std::set<std::string> tracked;
  std::set<std::string> control;
  friend bool operator==(const Flow&, const Flow&) = default;
};

bool intersects(const std::vector<std::string>& xs, const std::set<std::string>& s) {
  return std::any_of(xs.begin(), xs.end(), [&](const std::string& x) { return s.count(x) > 0; });
}

void insert_all(std::set<std::string>& s, const std::vector<std::string>& xs) { s.insert(xs.begin(), xs.end()); }

class Extractor {
 public:
  explicit Extractor(const Program& p) : p_(p) {}

  std::map<std::string, int> warmup;
  std::map<std::string, std::set<std::string>> loop_tracked;

  CcsRegion region(const Region& r, Flow& f) {
    CcsRegion out;
    out.elements.resize(r.elements.size());
    for (std::size_t k = r.elements.size(); k-- > 0;) {
      const Element& e = r.elements[k];
      if (const auto* s = std::get_if<State>(&e)) {
        CcsState cs;
        graph(s->graph, f, cs);
        out.elements[k].kind = std::move(cs);
      } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
        LoopFixpoint fx = fixpoint(*l, f);
        CcsLoop cl;
        cl.body = std::move(fx.body);
        cl.peel = std::move(fx.peel);
        cl.evaluations = fx.evaluations;
        out.elements[k].kind = std::move(cl);
      } else if (const auto* b = std::get_if<BranchRegion>(&e)) {
        out.elements[k].kind = branch(*b, f);
      } else {
        const auto& w = std::get<WhileRegion>(e);
        throw Error(ErrorCode::UnsupportedLoop, "while region '" + w.id + "' cannot be differentiated");
      }
    }
    return out;
  }

  LoopFixpoint fixpoint(const LoopRegion& l, Flow& f) {
    std::vector<CcsRegion> evals;
    std::size_t guard = 2 * p_.descriptors.size() + 2;
    while (true) {
      Flow in = f;
      evals.push_back(region(*l.body, in));
      Flow next = f;
      next.tracked.insert(in.tracked.begin(), in.tracked.end());
      next.control.insert(in.control.begin(), in.control.end());
      if (next == f) break;
      f = std::move(next);
      if (evals.size() > guard) throw Error(ErrorCode::NoFixpoint, "loop '" + l.id + "' does not stabilize");
    }
    LoopFixpoint out;
    out.evaluations = static_cast<int>(evals.size());
    int last_diff = -1;
    for (int j = 0; j + 1 < static_cast<int>(evals.size()); ++j) {
      if (!(evals[j] == evals.back())) last_diff = j;
    }
    out.warmup = last_diff + 1;
    if (out.warmup > static_cast<int>(p_.descriptors.size())) {
      throw Error(ErrorCode::UnsupportedLoop, "loop '" + l.id + "' needs " + std::to_string(out.warmup) +
                                                  " peeled iterations");
    }
    out.peel.assign(evals.begin(), evals.begin() + out.warmup);
    out.body = std::move(evals.back());
    out.tracked = f.tracked;
    warmup[l.id] = out.warmup;
    loop_tracked[l.id] = f.tracked;
    return out;
  }

 private:
  void graph(const Graph& g, Flow& f, CcsState& cs) {
    for (std::size_t k = g.nodes.size(); k-- > 0;) {
      const Node& n = g.nodes[k];
      if (n.is_access()) continue;
      if (const MapNode* m = n.map()) {
        std::size_t before = cs.kept.size();
        graph(*m->body, f, cs);
        if (cs.kept.size() != before) cs.kept.insert(n.id);
        continue;
      }
      NodeEffects fx = node_effects(g, n);
      bool data = intersects(fx.writes, f.tracked);
      bool ctrl = intersects(fx.writes, f.control);
      if (data) insert_all(f.tracked, fx.reads);
      if (ctrl) insert_all(f.control, fx.reads);
      if (data) cs.data.insert(n.id);
      if (data || ctrl) cs.kept.insert(n.id);
    }
  }

  CcsBranch branch(const BranchRegion& b, Flow& f) {
    CcsBranch out;
    Flow merged;
    bool has_else = false;
    for (const BranchArm& a : b.arms) {
      Flow in = f;
      out.arms.push_back(region(*a.body, in));
      merged.tracked.insert(in.tracked.begin(), in.tracked.end());
      merged.control.insert(in.control.begin(), in.control.end());
      if (!a.condition) has_else = true;
    }
    if (!has_else) {
      merged.tracked.insert(f.tracked.begin(), f.tracked.end());
      merged.control.insert(f.control.begin(), f.control.end());
    }
    out.kept = std::any_of(out.arms.begin(), out.arms.end(), [](const CcsRegion& r) { return any_kept(r); });
    if (out.kept) {
      for (const BranchArm& a : b.arms) {
        if (!a.condition) continue;
        std::set<std::string> cond = arrays_read(*a.condition);
        merged.control.insert(cond.begin(), cond.end());
      }
    }
    out.over_approximated = out.kept;
    f = std::move(merged);
    return out;
  }

 public:
  static bool any_kept(const CcsRegion& r) {
    for (const CcsElement& e : r.elements) {
      if (const auto* s = std::get_if<CcsState>(&e.kind)) {
        if (!s->kept.empty()) return true;
      } else if (const auto* l = std::get_if<CcsLoop>(&e.kind)) {
        if (any_kept(*l->body)) return true;
        for (const CcsRegion& pr : l->peel) {
          if (any_kept(pr)) return true;
        }
      } else if (std::get<CcsBranch>(e.kind).kept) {
        return true;
      }
    }
    return false;
  }

 private:
  const Program& p_;
};

// Forward propagation of "depends on an independent".
void vary_region(const Region& r, std::set<std::string>& varied);

void vary_graph(const Graph& g, std::set<std::string>& varied) {
  for (const Node& n : g.nodes) {
    if (n.is_access()) continue;
    NodeEffects fx = node_effects(g, n);
    if (intersects(fx.reads, varied)) insert_all(varied, fx.writes);
  }
}

void vary_region(const Region& r, std::set<std::string>& varied) {
  for (const Element& e : r.elements) {
    if (const auto* s = std::get_if<State>(&e)) {
      vary_graph(s->graph, varied);
    } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
      while (true) {
        std::size_t before = varied.size();
        for (const Region& pr : l->peel) vary_region(pr, varied);
        vary_region(*l->body, varied);
        if (varied.size() == before) break;
      }
    } else if (const auto* b = std::get_if<BranchRegion>(&e)) {
      for (const BranchArm& a : b->arms) vary_region(*a.body, varied);
    } else {
      const auto& w = std::get<WhileRegion>(e);
      while (true) {
        std::size_t before = varied.size();
        vary_region(*w.body, varied);
        if (varied.size() == before) break;
      }
    }
  }
}

void mark_graph(const Graph& g, const std::set<std::string>& grad, CcsState& cs) {
  for (const Node& n : g.nodes) {
    if (n.is_access()) continue;
    if (const MapNode* m = n.map()) {
      std::size_t before = cs.reversed.size();
      mark_graph(*m->body, grad, cs);
      if (cs.reversed.size() != before) cs.reversed.insert(n.id);
      continue;
    }
    if (!cs.data.count(n.id)) continue;
    NodeEffects fx = node_effects(g, n);
    if (intersects(fx.reads, grad) || intersects(fx.overwrites, grad)) cs.reversed.insert(n.id);
  }
}

void mark_region(const Region& r, CcsRegion& c, const std::set<std::string>& grad) {
  for (std::size_t k = 0; k < r.elements.size(); ++k) {
    const Element& e = r.elements[k];
    CcsElement& ce = c.elements[k];
    if (const auto* s = std::get_if<State>(&e)) {
      mark_graph(s->graph, grad, std::get<CcsState>(ce.kind));
    } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
      auto& cl = std::get<CcsLoop>(ce.kind);
      mark_region(*l->body, *cl.body, grad);
      for (CcsRegion& pr : cl.peel) mark_region(*l->body, pr, grad);
    } else if (const auto* b = std::get_if<BranchRegion>(&e)) {
      auto& cb = std::get<CcsBranch>(ce.kind);
      for (std::size_t a = 0; a < b->arms.size(); ++a) mark_region(*b->arms[a].body, cb.arms[a], grad);
    }
  }
}

bool writes_anywhere(const Region& r, const std::string& d) {
  for (const Element& e : r.elements) {
    if (const auto* s = std::get_if<State>(&e)) {
      for (const Node& n : s->graph.nodes) {
        if (n.is_access()) continue;
        NodeEffects fx = node_effects(s->graph, n);
        if (std::find(fx.writes.begin(), fx.writes.end(), d) != fx.writes.end()) return true;
      }
    } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
      if (writes_anywhere(*l->body, d)) return true;
      for (const Region& pr : l->peel) {
        if (writes_anywhere(pr, d)) return true;
      }
    } else if (const auto* b = std::get_if<BranchRegion>(&e)) {
      for (const BranchArm& a : b->arms) {
        if (writes_anywhere(*a.body, d)) return true;
      }
    } else if (writes_anywhere(*std::get<WhileRegion>(e).body, d)) {
      return true;
    }
  }
  return false;
}

// Restriction to kept nodes.
Graph restrict_graph(const Graph& g, const std::set<std::string>& kept) {
  Graph out;
  std::set<std::string> keep_ids;
  for (const Node& n : g.nodes) {
    if (!n.is_access() && kept.count(n.id)) keep_ids.insert(n.id);
  }
  std::set<std::string> compute = keep_ids;
  for (const Memlet& e : g.edges) {
    if (compute.count(e.src) || compute.count(e.dst)) {
      keep_ids.insert(e.src);
      keep_ids.insert(e.dst);
    }
  }
  for (const Node& n : g.nodes) {
    if (!keep_ids.count(n.id)) continue;
    Node copy = n;
    if (const MapNode* m = n.map()) {
      std::get<MapNode>(copy.kind).body = restrict_graph(*m->body, kept);
    }
    out.nodes.push_back(std::move(copy));
  }
  for (const Memlet& e : g.edges) {
    if (keep_ids.count(e.src) && keep_ids.count(e.dst)) out.edges.push_back(e);
  }
  return out;
}

Region restrict_region(const Region& r, const CcsRegion& c) {
  Region out;
  for (std::size_t k = 0; k < r.elements.size(); ++k) {
    const Element& e = r.elements[k];
    const CcsElement& ce = c.elements[k];
    if (const auto* s = std::get_if<State>(&e)) {
      State copy{s->id, restrict_graph(s->graph, std::get<CcsState>(ce.kind).kept)};
      out.elements.emplace_back(std::move(copy));
    } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
      const auto& cl = std::get<CcsLoop>(ce.kind);
      LoopRegion copy = *l;
      copy.body = restrict_region(*l->body, *cl.body);
      out.elements.emplace_back(std::move(copy));
    } else if (const auto* b = std::get_if<BranchRegion>(&e)) {
      const auto& cb = std::get<CcsBranch>(ce.kind);
      if (!cb.kept) continue;
      BranchRegion copy = *b;
      for (std::size_t a = 0; a < b->arms.size(); ++a) copy.arms[a].body = restrict_region(*b->arms[a].body, cb.arms[a]);
      out.elements.emplace_back(std::move(copy));
    }
  }
  return out;
}

}  // namespace

LoopFixpoint loop_ccs_fixpoint(const Program& p, const LoopRegion& loop, const std::set<std::string>& seed_tracked) {
  Extractor x(p);
  Flow f{seed_tracked, {}};
  return x.fixpoint(loop, f);
}

Ccs extract_ccs(const Program& p) {
  if (!writes_anywhere(p.region, p.dependent)) {
    throw Error(ErrorCode::DependentUnreachable, "dependent '" + p.dependent + "' is never written");
  }
  Extractor x(p);
  Flow f{{p.dependent}, {}};
  Ccs out;
  out.root = x.region(p.region, f);
  out.tracked = std::move(f.tracked);
  out.control = std::move(f.control);
  out.warmup = std::move(x.warmup);
  out.loop_tracked = std::move(x.loop_tracked);
  out.varied.insert(p.independents.begin(), p.independents.end());
  vary_region(p.region, out.varied);
  for (const std::string& d : out.varied) {
    if (out.tracked.count(d)) out.gradient.insert(d);
  }
  mark_region(p.region, out.root, out.gradient);
  return out;
}

Program restrict_to_ccs(const Program& p, const Ccs& ccs) {
  Program out = p;
  out.region = restrict_region(p.region, ccs.root);
  return out;
}

}  // namespace gradflow
