// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <set>

#include "gradflow/ir.hpp"

namespace gradflow {

namespace {

class Validator {
 public:
  explicit Validator(const Program& p) : p_(p) {}

  std::vector<Diagnostic> run() {
    std::set<std::string> params(p_.parameters.begin(), p_.parameters.end());
    if (params.size() != p_.parameters.size()) error("DuplicateName", "parameters", "parameter listed twice");
    for (const auto& [name, d] : p_.descriptors) {
      for (const SymExpr& dim : d.shape) {
        for (const std::string& n : free_names(dim)) {
          if (!params.count(n)) error("UnboundName", name, "shape uses unknown parameter '" + n + "'");
        }
        if (!arrays_read(dim).empty()) error("InvalidShape", name, "shape may not read arrays");
      }
      if (!d.gradient_of.empty() && !p_.descriptors.count(d.gradient_of)) {
        error("UnknownDescriptor", name, "gradient_of names unknown descriptor '" + d.gradient_of + "'");
      }
    }
    if (p_.dependent.empty()) {
      error("DependentUnknown", "", "no dependent output designated");
    } else if (!p_.descriptors.count(p_.dependent)) {
      error("DependentUnknown", p_.dependent, "dependent is not a declared descriptor");
    } else if (!p_.desc(p_.dependent).is_scalar()) {
      error("DependentNotScalar", p_.dependent, "dependent output must be rank 0");
    }
    for (const std::string& ind : p_.independents) {
      if (!p_.descriptors.count(ind)) error("IndependentUnknown", ind, "independent is not a declared descriptor");
    }
    region(p_.region, params);
    return std::move(diags_);
  }

 private:
  void error(std::string rule, std::string id, std::string msg) {
    diags_.push_back(Diagnostic{Diagnostic::Severity::Error, std::move(rule), std::move(id), std::move(msg)});
  }

  void claim_id(const std::string& id, const char* what) {
    if (id.empty()) {
      error("MissingId", "", std::string(what) + " without id");
      return;
    }
    if (!ids_.insert(id).second) error("DuplicateId", id, std::string("id used more than once (") + what + ")");
  }

  void check_names(const SymExpr& e, const std::set<std::string>& scope, const std::string& id,
                   const std::string& what) {
    for (const std::string& n : free_names(e)) {
      if (!scope.count(n)) error("UnboundName", id, what + " uses unbound name '" + n + "'");
    }
    check_reads(e, scope, id, what);
  }

  void check_reads(const SymExpr& e, const std::set<std::string>& scope, const std::string& id,
                   const std::string& what) {
    if (e.op() == ExprOp::At) {
      auto it = p_.descriptors.find(e.name());
      if (it == p_.descriptors.end()) {
        error("UnknownDescriptor", id, what + " reads unknown array '" + e.name() + "'");
      } else if (it->second.rank() != e.args().size()) {
        error("ArityMismatch", id, what + " indexes '" + e.name() + "' with " + std::to_string(e.args().size()) +
                                       " indices, rank is " + std::to_string(it->second.rank()));
      }
    }
    for (const SymExpr& a : e.args()) check_reads(a, scope, id, what);
  }

  void region(const Region& r, const std::set<std::string>& scope) {
    for (const Element& e : r.elements) {
      if (const auto* s = std::get_if<State>(&e)) {
        claim_id(s->id, "state");
        graph(s->graph, scope, false);
      } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
        loop(*l, scope);
      } else if (const auto* b = std::get_if<BranchRegion>(&e)) {
        claim_id(b->id, "branch");
        if (b->arms.empty()) error("EmptyBranch", b->id, "branch without arms");
        for (std::size_t a = 0; a < b->arms.size(); ++a) {
          const BranchArm& arm = b->arms[a];
          if (arm.condition) {
            check_names(*arm.condition, scope, b->id, "condition");
          } else if (a + 1 != b->arms.size()) {
            error("ElseNotLast", b->id, "unconditional arm must be the last arm");
          }
          region(*arm.body, scope);
        }
      } else if (const auto* w = std::get_if<WhileRegion>(&e)) {
        claim_id(w->id, "while");
        check_names(w->condition, scope, w->id, "condition");
        region(*w->body, scope);
      }
    }
  }

  void collect_writes(const Region& r, std::set<std::string>& out) {
    for (const Element& e : r.elements) {
      if (const auto* s = std::get_if<State>(&e)) {
        for (const Node& n : s->graph.nodes) {
          if (n.is_access()) continue;
          for (const auto& w : node_effects(s->graph, n).writes) out.insert(w);
        }
      } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
        collect_writes(*l->body, out);
        for (const Region& pr : l->peel) collect_writes(pr, out);
      } else if (const auto* b = std::get_if<BranchRegion>(&e)) {
        for (const BranchArm& a : b->arms) collect_writes(*a.body, out);
      } else if (const auto* w = std::get_if<WhileRegion>(&e)) {
        collect_writes(*w->body, out);
      }
    }
  }

  void loop(const LoopRegion& l, const std::set<std::string>& scope) {
    claim_id(l.id, "loop");
    const LoopHeader& h = l.header;
    if (h.iterator.empty()) error("MissingIterator", l.id, "loop without iterator");
    std::set<std::string> inner = scope;
    inner.insert(h.iterator);
    check_names(h.init, scope, l.id, "loop init");
    check_names(h.bound, inner, l.id, "loop bound");
    check_names(h.update, inner, l.id, "loop update");
    if (l.inverse) check_names(*l.inverse, inner, l.id, "loop inverse");
    if (l.mode == LoopMode::Inverse && !l.inverse) {
      error("MissingInverse", l.id, "inverse-mode loop needs an inverse update");
    }
    if (l.mode == LoopMode::Inverse && !l.forward_header) {
      error("MissingForwardHeader", l.id, "inverse-mode loop needs the forward header");
    }
    if (l.mode == LoopMode::Replay && l.replay_of.empty()) {
      error("MissingReplaySource", l.id, "replay-mode loop needs replay_of");
    }
    std::set<std::string> header_names{h.iterator};
    for (const SymExpr* e : {&h.init, &h.bound, &h.update}) {
      for (const auto& n : free_names(*e)) header_names.insert(n);
    }
    std::set<std::string> writes;
    collect_writes(*l.body, writes);
    for (const Region& pr : l.peel) collect_writes(pr, writes);
    for (const std::string& w : writes) {
      if (header_names.count(w)) {
        error("HeaderMutation", l.id, "loop body writes '" + w + "', which the loop header depends on");
      }
    }
    region(*l.body, inner);
    for (const Region& pr : l.peel) region(pr, inner);
  }

  void graph(const Graph& g, const std::set<std::string>& scope, bool in_map) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      const Node& n = g.nodes[i];
      claim_id(n.id, "node");
      index[n.id] = i;
      if (const AccessNode* a = n.access()) {
        if (!p_.descriptors.count(a->data)) {
          error("UnknownDescriptor", n.id, "access node refers to undeclared '" + a->data + "'");
        }
      } else if (const TaskletNode* t = n.tasklet()) {
        std::set<std::string> ins(t->inputs.begin(), t->inputs.end());
        if (ins.size() != t->inputs.size()) error("DuplicateConnector", n.id, "input connector declared twice");
        std::set<std::string> outs;
        for (const TaskletOutput& o : t->outputs) {
          if (!outs.insert(o.name).second || ins.count(o.name)) {
            error("DuplicateConnector", n.id, "connector '" + o.name + "' declared twice");
          }
          for (const std::string& name : free_names(o.expr)) {
            if (!ins.count(name)) {
              error("TaskletUndeclaredInput", n.id, "body of '" + o.name + "' references undeclared '" + name + "'");
            }
          }
          if (!arrays_read(o.expr).empty()) error("TaskletArrayRead", n.id, "tasklet bodies may not read arrays");
        }
      } else if (const MapNode* m = n.map()) {
        if (m->params.empty() || m->params.size() != m->ranges.size()) {
          error("MapRangeMismatch", n.id, "map needs one range per parameter");
        }
        std::set<std::string> inner = scope;
        for (std::size_t d = 0; d < m->params.size() && d < m->ranges.size(); ++d) {
          const MapRange& r = m->ranges[d];
          check_names(r.begin, inner, n.id, "map range");
          check_names(r.end, inner, n.id, "map range");
          check_names(r.step, inner, n.id, "map range");
          if (r.step.is_const(0.0)) error("ZeroStep", n.id, "map range step is zero");
          inner.insert(m->params[d]);
        }
        graph(*m->body, inner, true);
        map_self_read(*m->body, n.id);
      } else if (const LibraryNode* lib = n.library()) {
        (void)lib;
        if (in_map) error("LibraryInMap", n.id, "library nodes are only allowed at state level");
      }
    }
    std::set<std::string> eids;
    for (const Memlet& e : g.edges) {
      claim_id(e.id, "memlet");
      auto s = index.find(e.src);
      auto d = index.find(e.dst);
      if (s == index.end() || d == index.end()) {
        error("UnknownNode", e.id, "memlet endpoint '" + (s == index.end() ? e.src : e.dst) + "' not in graph");
        continue;
      }
      const Node& sn = g.nodes[s->second];
      const Node& dn = g.nodes[d->second];
      if (s->second >= d->second) error("EdgeOrder", e.id, "memlet must point to a later node");
      if (sn.is_access() == dn.is_access()) {
        error("InvalidEdge", e.id, "memlet must connect an access node and a compute node");
        continue;
      }
      if (sn.map() || dn.map()) {
        error("InvalidEdge", e.id, "maps access data through their body");
        continue;
      }
      const Node& an = sn.is_access() ? sn : dn;
      auto dit = p_.descriptors.find(an.access()->data);
      if (dit == p_.descriptors.end()) continue;
      const DataDescriptor& desc = dit->second;
      if (e.subset) {
        if (e.subset->size() != desc.rank()) {
          error("ArityMismatch", e.id, "subset has " + std::to_string(e.subset->size()) + " indices, '" +
                                           an.access()->data + "' has rank " + std::to_string(desc.rank()));
        }
        for (const SymExpr& ix : *e.subset) check_names(ix, scope, e.id, "subset");
      }
      if (sn.is_access() && e.wcr != Wcr::Overwrite) error("InvalidWcr", e.id, "read memlets carry no wcr");
      const Node& cn = sn.is_access() ? dn : sn;
      const std::string& conn = sn.is_access() ? e.dst_conn : e.src_conn;
      if (const TaskletNode* t = cn.tasklet()) {
        if (!e.subset && !desc.is_scalar()) {
          error("ArityMismatch", e.id, "tasklet memlets address single elements and need a subset");
        }
        if (sn.is_access()) {
          if (std::find(t->inputs.begin(), t->inputs.end(), conn) == t->inputs.end()) {
            error("UnknownConnector", e.id, "'" + conn + "' is not an input of " + cn.id);
          }
        } else if (std::none_of(t->outputs.begin(), t->outputs.end(),
                                [&](const TaskletOutput& o) { return o.name == conn; })) {
          error("UnknownConnector", e.id, "'" + conn + "' is not an output of " + cn.id);
        }
      } else if (cn.library()) {
        if (e.subset) error("LibrarySubset", e.id, "library memlets move whole arrays");
        bool ok = sn.is_access() ? (conn == "x" || conn == "y") : conn == "out";
        if (!ok) error("UnknownConnector", e.id, "library connector '" + conn + "' is invalid");
      }
    }
    for (const Node& n : g.nodes) {
      if (const TaskletNode* t = n.tasklet()) tasklet_edges(g, n, *t);
      if (const LibraryNode* l = n.library()) library_edges(g, n, *l);
    }
  }

  void tasklet_edges(const Graph& g, const Node& n, const TaskletNode& t) {
    for (const std::string& in : t.inputs) {
      auto c = std::count_if(g.edges.begin(), g.edges.end(),
                             [&](const Memlet& e) { return e.dst == n.id && e.dst_conn == in; });
      if (c != 1) error("DanglingConnector", n.id, "input '" + in + "' needs exactly one memlet");
    }
    for (const TaskletOutput& o : t.outputs) {
      bool any = std::any_of(g.edges.begin(), g.edges.end(),
                             [&](const Memlet& e) { return e.src == n.id && e.src_conn == o.name; });
      if (!any) error("DanglingConnector", n.id, "output '" + o.name + "' is never written");
    }
  }

  const DataDescriptor* conn_desc(const Graph& g, const Node& n, const std::string& conn, bool input,
                                  std::string* name) {
    for (const Memlet& e : g.edges) {
      if (input ? (e.dst == n.id && e.dst_conn == conn) : (e.src == n.id && e.src_conn == conn)) {
        std::string d = memlet_data(g, e);
        auto it = p_.descriptors.find(d);
        if (name) *name = d;
        return it == p_.descriptors.end() ? nullptr : &it->second;
      }
    }
    return nullptr;
  }

  void library_edges(const Graph& g, const Node& n, const LibraryNode& l) {
    std::string xn, yn, on;
    const DataDescriptor* x = conn_desc(g, n, "x", true, &xn);
    const DataDescriptor* y = conn_desc(g, n, "y", true, &yn);
    const DataDescriptor* o = conn_desc(g, n, "out", false, &on);
    bool binary = l.op == LibraryOp::MatMul || l.op == LibraryOp::ElementwiseBinary;
    if (!x || !o || (binary && !y)) {
      error("DanglingConnector", n.id, "library node is missing a connector memlet");
      return;
    }
    if (!binary && y) error("UnknownConnector", n.id, "unary library node has a 'y' input");
    if (on == xn || (binary && on == yn)) error("LibraryAlias", n.id, "library output aliases an input");
    auto same = [](const std::vector<SymExpr>& a, const std::vector<SymExpr>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (simplify(a[i]) != simplify(b[i])) return false;
      }
      return true;
    };
    switch (l.op) {
      case LibraryOp::MatMul:
        if (x->rank() != 2 || y->rank() != 2 || o->rank() != 2 || simplify(x->shape[1]) != simplify(y->shape[0]) ||
            simplify(o->shape[0]) != simplify(x->shape[0]) || simplify(o->shape[1]) != simplify(y->shape[1])) {
          error("LibraryShape", n.id, "MatMul needs [m,k] x [k,n] -> [m,n]");
        }
        break;
      case LibraryOp::ReduceSum:
        if (!o->is_scalar()) error("LibraryShape", n.id, "ReduceSum writes a rank-0 output");
        break;
      case LibraryOp::ElementwiseUnary:
      case LibraryOp::ElementwiseBinary: {
        if (!same(x->shape, o->shape) || (binary && !same(y->shape, o->shape))) {
          error("LibraryShape", n.id, "elementwise operands must share the output shape");
        }
        for (const std::string& name : free_names(l.expr)) {
          if (name != "x" && !(binary && name == "y")) {
            error("TaskletUndeclaredInput", n.id, "library expression references '" + name + "'");
          }
        }
        break;
      }
    }
  }

  void map_self_read(const Graph& body, const std::string& map_id) {
    std::map<std::string, std::string> writer;
    for (const Node& n : body.nodes) {
      if (n.is_access()) continue;
      for (const auto& w : node_effects(body, n).writes) writer.emplace(w, n.id);
    }
    for (const Node& n : body.nodes) {
      if (n.is_access()) continue;
      for (const auto& r : node_effects(body, n).reads) {
        auto it = writer.find(r);
        if (it != writer.end() && it->second != n.id) {
          error("MapSelfRead", map_id, "'" + r + "' is written by " + it->second + " and read by " + n.id +
                                           " in the same map body");
        }
      }
    }
  }

  const Program& p_;
  std::vector<Diagnostic> diags_;
  std::set<std::string> ids_;
};

}  // namespace

std::vector<Diagnostic> validate(const Program& p) { return Validator(p).run(); }

}  // namespace gradflow
