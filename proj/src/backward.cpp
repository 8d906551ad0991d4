// SPDX-License-Identifier: Apache-2.0
#include "gradflow/backward.hpp"

#include <algorithm>

#include "gradflow/differentiate.hpp"

namespace gradflow {

bool ForwardingRequirement::contains(const ValueKey& k) const {
  return std::any_of(items.begin(), items.end(), [&](const ForwardedItem& i) { return i.key == k; });
}

bool reverse_affine_header(const LoopHeader& h, LoopHeader& out) {
  std::optional<AffineForm> a = as_affine(h.update);
  if (!a || a->terms.size() != 1 || a->terms[0].first != h.iterator || a->terms[0].second != 1 || a->constant == 0) {
    return false;
  }
  std::int64_t s = a->constant;
  const SymExpr& L = h.init;
  const SymExpr& U = h.bound;
  SymExpr S = SymExpr::integer(s);
  SymExpr one = SymExpr::integer(1);
  out.iterator = h.iterator;
  out.update = simplify(SymExpr::name(h.iterator) - S);
  if (h.cmp == Cmp::Lt && s > 0) {
    out.init = simplify(L + S * SymExpr::binary(ExprOp::FloorDiv, U - one - L, S));
    out.cmp = Cmp::Gt;
    out.bound = simplify(L - one);
  } else if (h.cmp == Cmp::Gt && s < 0) {
    out.init = simplify(L + S * SymExpr::binary(ExprOp::FloorDiv, L - U - one, SymExpr::integer(-s)));
    out.cmp = Cmp::Lt;
    out.bound = simplify(L + one);
  } else {
    out.init = L;
    out.bound = L;
    out.cmp = Cmp::Lt;
    out.update = simplify(SymExpr::name(h.iterator) + one);
  }
  return true;
}

LoopRegion reverse_loop_header(const LoopRegion& loop) {
  LoopRegion out;
  out.id = "b_" + loop.id;
  out.replay_of = loop.id;
  if (reverse_affine_header(loop.header, out.header)) return out;
  out.header = loop.header;
  if (loop.inverse) {
    out.mode = LoopMode::Inverse;
    out.inverse = loop.inverse;
    out.forward_header = loop.header;
  } else {
    out.mode = LoopMode::Replay;
  }
  return out;
}

namespace {

std::vector<SymExpr> index_names(std::size_t rank) {
  std::vector<SymExpr> out;
  for (std::size_t d = 0; d < rank; ++d) out.push_back(SymExpr::name("__i" + std::to_string(d)));
  return out;
}

std::vector<std::string> index_params(std::size_t rank) {
  std::vector<std::string> out;
  for (std::size_t d = 0; d < rank; ++d) out.push_back("__i" + std::to_string(d));
  return out;
}

std::vector<MapRange> full_ranges(const std::vector<SymExpr>& dims) {
  std::vector<MapRange> out;
  for (const SymExpr& d : dims) out.push_back(MapRange{SymExpr::integer(0), d, SymExpr::integer(1)});
  return out;
}

// Tasklet under construction together with its memlets.
struct TaskletDraft {
  std::string id;
  TaskletNode node;
  struct Port {
    std::string conn;
    std::string data;
    std::optional<std::vector<SymExpr>> subset;
    Wcr wcr = Wcr::Overwrite;
    std::optional<int> version;
  };
  std::vector<Port> ins;
  std::vector<Port> outs;

  void input(const std::string& conn, const std::string& data, std::optional<std::vector<SymExpr>> subset,
             std::optional<int> version = std::nullopt) {
    node.inputs.push_back(conn);
    ins.push_back(Port{conn, data, std::move(subset), Wcr::Overwrite, version});
  }
  void output(const std::string& conn, SymExpr expr, const std::string& data,
              std::optional<std::vector<SymExpr>> subset, Wcr wcr) {
    node.outputs.push_back(TaskletOutput{conn, std::move(expr)});
    outs.push_back(Port{conn, data, std::move(subset), wcr, std::nullopt});
  }

  void emit(Graph& g) const {
    for (const Port& p : ins) g.nodes.push_back(Node{id + "." + p.conn, AccessNode{p.data}});
    g.nodes.push_back(Node{id, node});
    for (const Port& p : ins) {
      Memlet m;
      m.id = id + ".m." + p.conn;
      m.src = id + "." + p.conn;
      m.dst = id;
      m.dst_conn = p.conn;
      m.subset = p.subset;
      m.version = p.version;
      g.edges.push_back(std::move(m));
    }
    for (const Port& p : outs) {
      g.nodes.push_back(Node{id + "." + p.conn, AccessNode{p.data}});
      Memlet m;
      m.id = id + ".m." + p.conn;
      m.src = id;
      m.src_conn = p.conn;
      m.dst = id + "." + p.conn;
      m.subset = p.subset;
      m.wcr = p.wcr;
      g.edges.push_back(std::move(m));
    }
  }
};

class Reverser {
 public:
  Reverser(const Program& p, BackwardResult& res) : p_(p), res_(res) {}

  Region region(const Region& r, const CcsRegion& c, const std::string& prefix) {
    Region out;
    for (std::size_t k = r.elements.size(); k-- > 0;) {
      const Element& e = r.elements[k];
      const CcsElement& ce = c.elements[k];
      if (const auto* s = std::get_if<State>(&e)) {
        const auto& cs = std::get<CcsState>(ce.kind);
        State bs{prefix + s->id, {}};
        for (std::size_t n = s->graph.nodes.size(); n-- > 0;) {
          const Node& node = s->graph.nodes[n];
          if (!node.is_access() && cs.reversed.count(node.id)) reverse_node(s->graph, node, cs, prefix, bs.graph);
        }
        if (!bs.graph.nodes.empty()) out.elements.emplace_back(std::move(bs));
      } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
        const auto& cl = std::get<CcsLoop>(ce.kind);
        LoopRegion bl = reverse_loop_header(*l);
        bl.id = prefix + l->id;
        bl.body = region(*l->body, *cl.body, prefix);
        bool any = !bl.body->elements.empty();
        for (std::size_t j = 0; j < cl.peel.size(); ++j) {
          bl.peel.push_back(region(*l->body, cl.peel[j], prefix + "p" + std::to_string(j) + "_"));
          any = any || !bl.peel.back().elements.empty();
        }
        if (any) out.elements.emplace_back(std::move(bl));
      } else if (const auto* b = std::get_if<BranchRegion>(&e)) {
        const auto& cb = std::get<CcsBranch>(ce.kind);
        BranchRegion bb;
        bb.id = prefix + b->id;
        bb.replay_of = b->id;
        bool any = false;
        for (std::size_t a = 0; a < b->arms.size(); ++a) {
          BranchArm arm;
          arm.condition = b->arms[a].condition;
          arm.body = region(*b->arms[a].body, cb.arms[a], prefix);
          any = any || !arm.body->elements.empty();
          bb.arms.push_back(std::move(arm));
        }
        if (any) out.elements.emplace_back(std::move(bb));
      }
    }
    return out;
  }

 private:
  bool in_g(const std::string& d) const { return res_.ccs.gradient.count(d) > 0; }
  const std::string& grad(const std::string& d) const { return res_.gradient_of.at(d); }

  std::optional<int> version_of(const Memlet& e) {
    auto it = res_.versions.memlet_value.find(e.id);
    if (it == res_.versions.memlet_value.end()) return std::nullopt;
    const ValueKey& k = it->second;
    if (!(k.second == 0 && p_.desc(k.first).role == Role::Input)) required.insert(k);
    return k.second;
  }

  void note(const std::string& fwd, const std::string& bwd) { res_.reversed[fwd].push_back(bwd); }

  void reverse_node(const Graph& fg, const Node& n, const CcsState& cs, const std::string& prefix, Graph& out) {
    if (const MapNode* m = n.map()) {
      MapNode bm;
      bm.params = m->params;
      bm.ranges = m->ranges;
      for (std::size_t k = m->body->nodes.size(); k-- > 0;) {
        const Node& inner = m->body->nodes[k];
        if (!inner.is_access() && cs.reversed.count(inner.id)) reverse_node(*m->body, inner, cs, prefix, *bm.body);
      }
      if (bm.body->nodes.empty()) return;
      out.nodes.push_back(Node{prefix + n.id, std::move(bm)});
      note(n.id, prefix + n.id);
    } else if (const TaskletNode* t = n.tasklet()) {
      reverse_tasklet(fg, n, *t, prefix, out);
    } else {
      reverse_library(fg, n, *n.library(), prefix, out);
    }
  }

  void reverse_tasklet(const Graph& fg, const Node& n, const TaskletNode& t, const std::string& prefix, Graph& out) {
    TaskletDraft d;
    d.id = prefix + n.id;
    std::map<std::string, const Memlet*> in_memlet;
    for (const Memlet& e : fg.edges) {
      if (e.dst == n.id) in_memlet[e.dst_conn] = &e;
    }
    std::map<std::string, SymExpr> adjoint;  // output connector -> summed incoming gradient
    std::vector<std::pair<const Memlet*, std::string>> clears;
    std::vector<TaskletDraft::Port> gins;
    int k = 0;
    for (const Memlet& e : fg.edges) {
      if (e.src != n.id) continue;
      std::string data = memlet_data(fg, e);
      ++k;
      if (!in_g(data)) continue;
      std::string conn = "gin_" + e.src_conn + "_" + std::to_string(k);
      gins.push_back(TaskletDraft::Port{conn, grad(data), e.subset, Wcr::Overwrite, std::nullopt});
      auto it = adjoint.find(e.src_conn);
      SymExpr g = SymExpr::name(conn);
      if (it == adjoint.end()) {
        adjoint.emplace(e.src_conn, g);
      } else {
        it->second = it->second + g;
      }
      if (e.wcr == Wcr::Overwrite) clears.emplace_back(&e, "clr_" + e.src_conn + "_" + std::to_string(k));
    }
    std::map<std::string, SymExpr, std::less<>> rename;
    for (const std::string& c : t.inputs) rename.emplace(c, SymExpr::name("f_" + c));
    std::vector<std::pair<std::string, SymExpr>> gouts;
    std::set<std::string> forward_needed;
    for (const std::string& c : t.inputs) {
      const Memlet* e = in_memlet.at(c);
      std::string data = memlet_data(fg, *e);
      if (!in_g(data)) continue;
      std::optional<SymExpr> total;
      for (const TaskletOutput& o : t.outputs) {
        auto a = adjoint.find(o.name);
        if (a == adjoint.end()) continue;
        SymExpr dd = differentiate(o.expr, c, &res_.warnings);
        if (dd.is_const(0.0)) continue;
        for (const std::string& name : free_names(dd)) forward_needed.insert(name);
        SymExpr term = simplify(a->second * substitute(dd, rename));
        total = total ? simplify(*total + term) : term;
      }
      if (total) gouts.emplace_back(c, *total);
    }
    if (gouts.empty() && clears.empty()) return;
    if (!gouts.empty()) {
      for (const auto& g : gins) d.input(g.conn, g.data, g.subset);
    }
    for (const std::string& c : t.inputs) {
      if (!forward_needed.count(c)) continue;
      const Memlet* e = in_memlet.at(c);
      d.input("f_" + c, memlet_data(fg, *e), e->subset, version_of(*e));
    }
    for (const auto& [e, conn] : clears) d.output(conn, SymExpr::integer(0), grad(memlet_data(fg, *e)), e->subset, Wcr::Overwrite);
    for (const auto& [c, expr] : gouts) {
      const Memlet* e = in_memlet.at(c);
      d.output("gout_" + c, expr, grad(memlet_data(fg, *e)), e->subset, Wcr::Sum);
    }
    d.emit(out);
    note(n.id, d.id);
  }

  void reverse_library(const Graph& fg, const Node& n, const LibraryNode& l, const std::string& prefix, Graph& out) {
    const Memlet* mx = nullptr;
    const Memlet* my = nullptr;
    const Memlet* mo = nullptr;
    for (const Memlet& e : fg.edges) {
      if (e.dst == n.id && e.dst_conn == "x") mx = &e;
      if (e.dst == n.id && e.dst_conn == "y") my = &e;
      if (e.src == n.id) mo = &e;
    }
    std::string x = memlet_data(fg, *mx);
    std::string y = my ? memlet_data(fg, *my) : "";
    std::string o = memlet_data(fg, *mo);
    bool clear = mo->wcr == Wcr::Overwrite && in_g(o);
    bool gx = in_g(x);
    bool gy = my && in_g(y);
    std::string id = prefix + n.id;
    if (!in_g(o)) {
      return;
    }
    switch (l.op) {
      case LibraryOp::ElementwiseUnary:
      case LibraryOp::ElementwiseBinary: {
        const auto& shape = p_.desc(o).shape;
        std::vector<SymExpr> idx = index_names(shape.size());
        TaskletDraft d;
        d.id = shape.empty() ? id : id + ".t";
        std::map<std::string, SymExpr, std::less<>> rename{{"x", SymExpr::name("f_x")}, {"y", SymExpr::name("f_y")}};
        std::set<std::string> needed;
        std::vector<std::pair<std::string, SymExpr>> gouts;
        for (const std::string c : {"x", "y"}) {
          if ((c == "x" && !gx) || (c == "y" && !gy)) continue;
          SymExpr dd = differentiate(l.expr, c, &res_.warnings);
          if (dd.is_const(0.0)) continue;
          for (const std::string& nm : free_names(dd)) needed.insert(nm);
          gouts.emplace_back(c, simplify(SymExpr::name("gin") * substitute(dd, rename)));
        }
        if (gouts.empty() && !clear) return;
        if (!gouts.empty()) d.input("gin", grad(o), idx);
        if (needed.count("x")) d.input("f_x", x, idx, version_of(*mx));
        if (needed.count("y")) d.input("f_y", y, idx, version_of(*my));
        if (clear) d.output("clr", SymExpr::integer(0), grad(o), idx, Wcr::Overwrite);
        for (const auto& [c, expr] : gouts) d.output("gout_" + c, expr, grad(c == "x" ? x : y), idx, Wcr::Sum);
        if (shape.empty()) {
          d.emit(out);
        } else {
          MapNode m;
          m.params = index_params(shape.size());
          m.ranges = full_ranges(shape);
          d.emit(*m.body);
          out.nodes.push_back(Node{id, std::move(m)});
        }
        note(n.id, id);
        break;
      }
      case LibraryOp::ReduceSum: {
        if (gx) {
          const auto& shape = p_.desc(x).shape;
          std::vector<SymExpr> idx = index_names(shape.size());
          TaskletDraft d;
          d.id = shape.empty() ? id : id + ".t";
          d.input("gin", grad(o), std::vector<SymExpr>{});
          d.output("gout_x", SymExpr::name("gin"), grad(x), idx, Wcr::Sum);
          if (shape.empty()) {
            d.emit(out);
          } else {
            MapNode m;
            m.params = index_params(shape.size());
            m.ranges = full_ranges(shape);
            d.emit(*m.body);
            out.nodes.push_back(Node{id, std::move(m)});
          }
          note(n.id, id);
        }
        if (clear) {
          TaskletDraft c;
          c.id = id + ".clr";
          c.output("clr", SymExpr::integer(0), grad(o), std::vector<SymExpr>{}, Wcr::Overwrite);
          c.emit(out);
          note(n.id, c.id);
        }
        break;
      }
      case LibraryOp::MatMul: {
        const auto& xs = p_.desc(x).shape;
        const auto& ys = p_.desc(y).shape;
        if (gx || gy) {
          SymExpr i = SymExpr::name("__i0"), kk = SymExpr::name("__i1"), j = SymExpr::name("__i2");
          TaskletDraft d;
          d.id = id + ".t";
          d.input("gin", grad(o), std::vector<SymExpr>{i, j});
          if (gy) d.input("f_x", x, std::vector<SymExpr>{i, kk}, version_of(*mx));
          if (gx) d.input("f_y", y, std::vector<SymExpr>{kk, j}, version_of(*my));
          if (gx) d.output("gout_x", SymExpr::name("gin") * SymExpr::name("f_y"), grad(x), std::vector<SymExpr>{i, kk}, Wcr::Sum);
          if (gy) d.output("gout_y", SymExpr::name("f_x") * SymExpr::name("gin"), grad(y), std::vector<SymExpr>{kk, j}, Wcr::Sum);
          MapNode m;
          m.params = index_params(3);
          m.ranges = full_ranges({xs[0], xs[1], ys[1]});
          d.emit(*m.body);
          out.nodes.push_back(Node{id, std::move(m)});
          note(n.id, id);
        }
        if (clear) {
          TaskletDraft c;
          c.id = id + ".clr.t";
          c.output("clr", SymExpr::integer(0), grad(o), index_names(2), Wcr::Overwrite);
          MapNode m;
          m.params = index_params(2);
          m.ranges = full_ranges({xs[0], ys[1]});
          c.emit(*m.body);
          out.nodes.push_back(Node{id + ".clr", std::move(m)});
          note(n.id, id + ".clr");
        }
        break;
      }
    }
  }

  const Program& p_;
  BackwardResult& res_;

 public:
  std::set<ValueKey> required;
};

std::string unique_name(const Program& p, const std::set<std::string>& taken, std::string base) {
  while (p.descriptors.count(base) || taken.count(base)) base += "_";
  return base;
}

std::string size_expression(const DataDescriptor& d) {
  SymExpr e = SymExpr::integer(element_width(d.dtype));
  for (const SymExpr& s : d.shape) e = e * s;
  return simplify(e).str();
}

}  // namespace

BackwardResult build_backward(const Program& p) {
  BackwardResult res;
  res.ccs = extract_ccs(p);
  res.versions = analyze_versions(p);
  std::set<std::string> need = res.ccs.gradient;
  need.insert(p.independents.begin(), p.independents.end());
  need.insert(p.dependent);
  std::set<std::string> taken;
  for (const std::string& d : need) {
    std::string g = unique_name(p, taken, "grad_" + d);
    taken.insert(g);
    res.gradient_of[d] = g;
  }
  Program& b = res.program;
  b.parameters = p.parameters;
  b.descriptors = p.descriptors;
  for (const auto& [d, g] : res.gradient_of) {
    DataDescriptor gd;
    gd.dtype = p.desc(d).dtype;
    gd.shape = p.desc(d).shape;
    gd.role = Role::Gradient;
    gd.gradient_of = d;
    b.descriptors.emplace(g, std::move(gd));
  }
  Reverser r(p, res);
  b.region = r.region(p.region, res.ccs.root, "b_");
  b.dependent = res.gradient_of.at(p.dependent);
  for (const std::string& x : p.independents) b.independents.push_back(res.gradient_of.at(x));
  for (const ValueKey& k : r.required) {
    ForwardedItem item;
    item.key = k;
    for (int w : res.versions.label(k).writers) {
      if (w < 0) continue;
      const std::string& st = res.versions.sites[w].state_id;
      if (std::find(item.producers.begin(), item.producers.end(), st) == item.producers.end()) {
        item.producers.push_back(st);
      }
    }
    item.size = size_expression(p.desc(k.first));
    res.requirement.items.push_back(std::move(item));
  }
  std::vector<Diagnostic> diags = validate(b);
  for (const Diagnostic& d : diags) {
    if (d.severity == Diagnostic::Severity::Error) {
      throw Error(ErrorCode::Internal, "backward program is malformed: " + format_diagnostic(d));
    }
  }
  return res;
}

}  // namespace gradflow
