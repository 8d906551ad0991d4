// SPDX-License-Identifier: Apache-2.0
#include "gradflow/analysis.hpp"

#include <algorithm>
#include <functional>

namespace gradflow {

namespace {

const Region& sub_region(const Element& e, int sub) {
  if (const auto* l = std::get_if<LoopRegion>(&e)) return sub == 0 ? *l->body : l->peel.at(sub - 1);
  if (const auto* b = std::get_if<BranchRegion>(&e)) return *b->arms.at(sub).body;
  if (const auto* w = std::get_if<WhileRegion>(&e)) return *w->body;
  throw Error(ErrorCode::Internal, "state has no sub-region");
}

using Abstract = std::map<std::string, std::set<int>>;

void merge_into(Abstract& dst, const Abstract& src) {
  for (const auto& [d, s] : src) dst[d].insert(s.begin(), s.end());
}

class VersionWalker {
 public:
  VersionWalker(const Program& p, VersionInfo& out) : p_(p), out_(out) {
    index_sites(p.region, {}, {});
  }

  void run() {
    Abstract init;
    for (const auto& [name, d] : p_.descriptors) init[name] = {-1};
    for (auto& [name, d] : p_.descriptors) {
      (void)d;
      out_.labels[name].push_back(VersionLabel{{-1}, ""});
    }
    std::vector<Step> steps;
    std::vector<std::string> loops;
    walk(p_.region, init, steps, loops, true);
  }

 private:
  void index_sites(const Region& r, std::vector<Step> steps, std::vector<std::string> loops) {
    for (int i = 0; i < static_cast<int>(r.elements.size()); ++i) {
      const Element& e = r.elements[i];
      if (const auto* s = std::get_if<State>(&e)) {
        for (int n = 0; n < static_cast<int>(s->graph.nodes.size()); ++n) {
          const Node& node = s->graph.nodes[n];
          if (node.is_access()) continue;
          out_.site_of_node[node.id] = static_cast<int>(out_.sites.size());
          out_.sites.push_back(WriteSite{node.id, s->id, NodeLoc{steps, i, n}, loops});
        }
      } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
        auto st = steps;
        st.push_back({i, 0});
        auto lp = loops;
        lp.push_back(l->id);
        index_sites(*l->body, st, lp);
      } else if (const auto* b = std::get_if<BranchRegion>(&e)) {
        for (int a = 0; a < static_cast<int>(b->arms.size()); ++a) {
          auto st = steps;
          st.push_back({i, a});
          index_sites(*b->arms[a].body, st, loops);
        }
      } else if (const auto* w = std::get_if<WhileRegion>(&e)) {
        auto st = steps;
        st.push_back({i, 0});
        auto lp = loops;
        lp.push_back(w->id);
        index_sites(*w->body, st, lp);
      }
    }
  }

  std::string scope_of(const std::set<int>& writers, const std::vector<std::string>& reader_loops) const {
    for (auto it = reader_loops.rbegin(); it != reader_loops.rend(); ++it) {
      for (int w : writers) {
        if (w < 0) continue;
        const auto& wl = out_.sites[w].loops;
        if (std::find(wl.begin(), wl.end(), *it) != wl.end()) return *it;
      }
    }
    return "";
  }

  int label_for(const std::string& data, const VersionLabel& l) {
    auto& v = out_.labels[data];
    for (int i = 0; i < static_cast<int>(v.size()); ++i) {
      if (v[i] == l) return i;
    }
    v.push_back(l);
    return static_cast<int>(v.size()) - 1;
  }

  void record_reads(const Graph& g, const Node& n, const Abstract& as, const NodeLoc& loc,
                    const std::vector<std::string>& loops) {
    auto visit = [&](const Graph& graph, const Node& node, auto&& self) -> void {
      if (const MapNode* m = node.map()) {
        for (const Node& inner : m->body->nodes) {
          if (!inner.is_access()) self(*m->body, inner, self);
        }
        return;
      }
      for (const Memlet& e : graph.edges) {
        if (e.dst != node.id) continue;
        std::string data = memlet_data(graph, e);
        if (data.empty()) continue;
        const std::set<int>& writers = as.at(data);
        int v = label_for(data, VersionLabel{writers, scope_of(writers, loops)});
        ValueKey key{data, v};
        out_.memlet_value[e.id] = key;
        auto& rs = out_.readers[key];
        if (std::find(rs.begin(), rs.end(), loc) == rs.end()) rs.push_back(loc);
      }
    };
    visit(g, n, visit);
  }

  Abstract walk(const Region& r, Abstract as, std::vector<Step>& steps, std::vector<std::string>& loops,
                bool record) {
    for (int i = 0; i < static_cast<int>(r.elements.size()); ++i) {
      const Element& e = r.elements[i];
      if (const auto* s = std::get_if<State>(&e)) {
        for (int n = 0; n < static_cast<int>(s->graph.nodes.size()); ++n) {
          const Node& node = s->graph.nodes[n];
          if (node.is_access()) continue;
          if (record) record_reads(s->graph, node, as, NodeLoc{steps, i, n}, loops);
          int site = out_.site_of_node.at(node.id);
          for (const std::string& w : node_effects(s->graph, node).writes) as[w] = {site};
        }
      } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
        as = walk_loop(*l->body, l->id, as, steps, loops, i, record);
      } else if (const auto* w = std::get_if<WhileRegion>(&e)) {
        as = walk_loop(*w->body, w->id, as, steps, loops, i, record);
      } else if (const auto* b = std::get_if<BranchRegion>(&e)) {
        Abstract out;
        bool has_else = false;
        for (int a = 0; a < static_cast<int>(b->arms.size()); ++a) {
          if (!b->arms[a].condition) has_else = true;
          steps.push_back({i, a});
          merge_into(out, walk(*b->arms[a].body, as, steps, loops, record));
          steps.pop_back();
        }
        if (!has_else) merge_into(out, as);
        as = std::move(out);
      }
    }
    return as;
  }

  Abstract walk_loop(const Region& body, const std::string& id, Abstract as, std::vector<Step>& steps,
                     std::vector<std::string>& loops, int index, bool record) {
    steps.push_back({index, 0});
    loops.push_back(id);
    while (true) {
      Abstract next = as;
      merge_into(next, walk(body, as, steps, loops, false));
      if (next == as) break;
      as = std::move(next);
    }
    if (record) walk(body, as, steps, loops, true);
    loops.pop_back();
    steps.pop_back();
    return as;
  }

  const Program& p_;
  VersionInfo& out_;
};

std::vector<Step> common_prefix(const std::vector<NodeLoc>& locs) {
  std::vector<Step> prefix = locs.front().steps;
  for (const NodeLoc& l : locs) {
    std::size_t k = 0;
    while (k < prefix.size() && k < l.steps.size() && prefix[k] == l.steps[k]) ++k;
    prefix.resize(k);
  }
  return prefix;
}

ProgramPoint hoist(const Region& top, const std::vector<NodeLoc>& locs, const std::string& scope,
                   bool allow_node_level) {
  std::vector<Step> prefix = common_prefix(locs);
  bool below_scope = scope.empty();
  const Region* r = &top;
  for (std::size_t k = 0; k < prefix.size(); ++k) {
    const Element& e = r->elements[prefix[k].element];
    if (const auto* l = std::get_if<LoopRegion>(&e)) {
      if (below_scope) {
        return ProgramPoint{std::vector<Step>(prefix.begin(), prefix.begin() + k), prefix[k].element, -1};
      }
      if (l->id == scope) below_scope = true;
    }
    r = &sub_region(e, prefix[k].sub);
  }
  std::size_t depth = prefix.size();
  int first = -1;
  bool all_direct = true;
  for (const NodeLoc& l : locs) {
    int el = l.steps.size() > depth ? l.steps[depth].element : l.element;
    if (l.steps.size() > depth) all_direct = false;
    if (first < 0 || el < first) first = el;
  }
  ProgramPoint pt{prefix, first, -1};
  bool same_state = all_direct && std::all_of(locs.begin(), locs.end(), [&](const NodeLoc& l) {
    return l.element == first;
  });
  if (allow_node_level && same_state) {
    int node = locs.front().node;
    for (const NodeLoc& l : locs) node = std::min(node, l.node);
    pt.node = node;
  }
  return pt;
}

}  // namespace

const Region& region_at(const Region& top, const std::vector<Step>& steps) {
  const Region* r = &top;
  for (const Step& s : steps) r = &sub_region(r->elements.at(s.element), s.sub);
  return *r;
}

Region& region_at(Region& top, const std::vector<Step>& steps) {
  return const_cast<Region&>(region_at(static_cast<const Region&>(top), steps));
}

std::vector<const LoopRegion*> loops_on(const Region& top, const std::vector<Step>& steps) {
  std::vector<const LoopRegion*> out;
  const Region* r = &top;
  for (const Step& s : steps) {
    const Element& e = r->elements.at(s.element);
    if (const auto* l = std::get_if<LoopRegion>(&e)) out.push_back(l);
    r = &sub_region(e, s.sub);
  }
  return out;
}

bool inside_loop_or_branch(const std::vector<Step>& steps) { return !steps.empty(); }

const VersionLabel& VersionInfo::label(const ValueKey& v) const { return labels.at(v.first).at(v.second); }

VersionInfo analyze_versions(const Program& p) {
  VersionInfo vi;
  VersionWalker(p, vi).run();
  return vi;
}

ProgramPoint store_anchor(const Program& p, const VersionInfo& vi, const ValueKey& v) {
  auto it = vi.readers.find(v);
  if (it == vi.readers.end() || it->second.empty()) {
    throw Error(ErrorCode::Internal, "value " + v.first + "@" + std::to_string(v.second) + " has no readers");
  }
  return hoist(p.region, it->second, vi.label(v).scope, true);
}

ProgramPoint first_use_point(const std::vector<NodeLoc>& uses) {
  if (uses.empty()) throw Error(ErrorCode::Internal, "first_use_point without uses");
  ProgramPoint pt;
  pt.element = -1;
  for (const NodeLoc& l : uses) {
    int el = l.steps.empty() ? l.element : l.steps.front().element;
    if (pt.element < 0 || el < pt.element) pt.element = el;
  }
  return pt;
}

std::int64_t execution_count(const Program& p, const std::vector<Step>& steps, const IntBindings& params,
                             std::int64_t trip_limit) {
  std::function<std::int64_t(const Region&, std::size_t, IntBindings&)> rec =
      [&](const Region& r, std::size_t k, IntBindings& b) -> std::int64_t {
    if (k == steps.size()) return 1;
    const Element& e = r.elements.at(steps[k].element);
    if (const auto* l = std::get_if<LoopRegion>(&e)) {
      std::int64_t total = 0;
      for (std::int64_t i : enumerate_header(l->header, b, trip_limit)) {
        b[l->header.iterator] = i;
        total += rec(sub_region(e, steps[k].sub), k + 1, b);
      }
      b.erase(l->header.iterator);
      return total;
    }
    if (std::holds_alternative<WhileRegion>(e)) {
      throw Error(ErrorCode::UnresolvableTripCount, "while region has no static trip count");
    }
    return rec(sub_region(e, steps[k].sub), k + 1, b);
  };
  IntBindings b = params;
  return rec(p.region, 0, b);
}

namespace {

std::vector<PathChoice> region_paths(const Region& r, std::size_t limit) {
  std::vector<PathChoice> acc{PathChoice{}};
  for (const Element& e : r.elements) {
    const auto* b = std::get_if<BranchRegion>(&e);
    if (!b) continue;
    std::vector<PathChoice> options;
    bool has_else = false;
    for (int a = 0; a < static_cast<int>(b->arms.size()); ++a) {
      if (!b->arms[a].condition) has_else = true;
      for (PathChoice c : region_paths(*b->arms[a].body, limit)) {
        c[b->replay_of.empty() ? b->id : b->replay_of] = a;
        options.push_back(std::move(c));
      }
    }
    if (!has_else) options.push_back(PathChoice{{b->replay_of.empty() ? b->id : b->replay_of, -1}});
    if (acc.size() * options.size() > limit) {
      throw Error(ErrorCode::PathExplosion, "more than " + std::to_string(limit) + " control-flow paths");
    }
    std::vector<PathChoice> next;
    next.reserve(acc.size() * options.size());
    for (const PathChoice& a : acc) {
      for (const PathChoice& o : options) {
        PathChoice c = a;
        c.insert(o.begin(), o.end());
        next.push_back(std::move(c));
      }
    }
    acc = std::move(next);
  }
  return acc;
}

}  // namespace

std::vector<PathChoice> enumerate_paths(const Program& p, std::size_t limit) {
  return region_paths(p.region, limit);
}

std::string path_name(const PathChoice& c) {
  if (c.empty()) return "main";
  std::string s;
  for (const auto& [id, arm] : c) {
    if (!s.empty()) s += ",";
    s += id + "=" + std::to_string(arm);
  }
  return s;
}

std::vector<NodeLoc> versioned_readers(const Program& p, const std::string& data, int version) {
  std::vector<NodeLoc> out;
  std::function<void(const Region&, std::vector<Step>&)> rec = [&](const Region& r, std::vector<Step>& steps) {
    for (int i = 0; i < static_cast<int>(r.elements.size()); ++i) {
      const Element& e = r.elements[i];
      if (const auto* s = std::get_if<State>(&e)) {
        for (int n = 0; n < static_cast<int>(s->graph.nodes.size()); ++n) {
          const Node& node = s->graph.nodes[n];
          if (node.is_access()) continue;
          bool hit = false;
          auto check = [&](const Graph& g, const Node& nd, auto&& self) -> void {
            if (const MapNode* m = nd.map()) {
              for (const Node& inner : m->body->nodes) {
                if (!inner.is_access()) self(*m->body, inner, self);
              }
              return;
            }
            for (const Memlet& e2 : g.edges) {
              if (e2.dst == nd.id && memlet_data(g, e2) == data && e2.version.value_or(0) == version) hit = true;
            }
          };
          check(s->graph, node, check);
          if (hit) out.push_back(NodeLoc{steps, i, n});
        }
        continue;
      }
      int subs = 0;
      if (const auto* l = std::get_if<LoopRegion>(&e)) subs = 1 + static_cast<int>(l->peel.size());
      if (const auto* b = std::get_if<BranchRegion>(&e)) subs = static_cast<int>(b->arms.size());
      if (std::holds_alternative<WhileRegion>(e)) subs = 1;
      for (int sidx = 0; sidx < subs; ++sidx) {
        steps.push_back({i, sidx});
        rec(sub_region(e, sidx), steps);
        steps.pop_back();
      }
    }
  };
  std::vector<Step> steps;
  rec(p.region, steps);
  return out;
}

}  // namespace gradflow
