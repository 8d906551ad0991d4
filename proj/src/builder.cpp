// SPDX-License-Identifier: Apache-2.0
#include "gradflow/builder.hpp"

#include <set>

namespace gradflow {

namespace {

[[noreturn]] void fail(const std::string& rule, const std::string& id, const std::string& msg) {
  throw ValidationError({Diagnostic{Diagnostic::Severity::Error, rule, id, msg}});
}

std::vector<SymExpr> parse_all(const std::vector<std::string>& xs) {
  std::vector<SymExpr> out;
  out.reserve(xs.size());
  for (const std::string& x : xs) out.push_back(SymExpr::parse(x));
  return out;
}

}  // namespace

struct ProgramBuilder::Impl {
  struct Scope {
    Region* region;
    BranchRegion* branch = nullptr;  // set while collecting arms
    bool loop = false;
  };

  Program p;
  std::vector<Scope> scopes;
  std::vector<Graph*> graphs;  // current state graph, then open map bodies
  std::set<std::string> ids;

  Impl() { scopes.push_back(Scope{&p.region}); }

  void claim(const std::string& id) {
    if (id.empty()) fail("MissingId", "", "element without id");
    if (!ids.insert(id).second) fail("DuplicateId", id, "id used more than once");
  }

  Graph& graph(const std::string& id) {
    if (graphs.empty()) fail("NoState", id, "dataflow node added outside a state");
    return *graphs.back();
  }

  Region& region(const std::string& id) {
    Scope& s = scopes.back();
    if (s.branch) fail("NoArm", id, "branch '" + s.branch->id + "' has no open arm");
    return *s.region;
  }

  void close_state(const std::string& id) {
    if (graphs.size() > 1) fail("OpenMap", id, "map still open");
    graphs.clear();
  }
};

ProgramBuilder::ProgramBuilder() : impl_(std::make_unique<Impl>()) {}
ProgramBuilder::~ProgramBuilder() = default;

ProgramBuilder& ProgramBuilder::param(const std::string& name) {
  impl_->p.parameters.push_back(name);
  return *this;
}

ProgramBuilder& ProgramBuilder::add_descriptor(const std::string& name, DType dtype,
                                               const std::vector<std::string>& shape, Role role,
                                               Lifetime lifetime) {
  if (impl_->p.descriptors.count(name)) fail("DuplicateName", name, "descriptor declared twice");
  DataDescriptor d;
  d.dtype = dtype;
  d.shape = parse_all(shape);
  d.role = role;
  d.lifetime = lifetime;
  impl_->p.descriptors.emplace(name, std::move(d));
  return *this;
}

ProgramBuilder& ProgramBuilder::add_state(const std::string& id) {
  impl_->close_state(id);
  Region& r = impl_->region(id);
  impl_->claim(id);
  r.elements.emplace_back(State{id, {}});
  impl_->graphs.push_back(&std::get<State>(r.elements.back()).graph);
  return *this;
}

ProgramBuilder& ProgramBuilder::add_access(const std::string& id, const std::string& data) {
  Graph& g = impl_->graph(id);
  if (!impl_->p.descriptors.count(data)) fail("UnknownDescriptor", id, "access to undeclared array '" + data + "'");
  impl_->claim(id);
  g.nodes.push_back(Node{id, AccessNode{data}});
  return *this;
}

ProgramBuilder& ProgramBuilder::add_tasklet(const std::string& id, const std::vector<std::string>& inputs,
                                            const std::vector<std::pair<std::string, std::string>>& outputs) {
  Graph& g = impl_->graph(id);
  TaskletNode t;
  t.inputs = inputs;
  for (const auto& [name, expr] : outputs) t.outputs.push_back(TaskletOutput{name, SymExpr::parse(expr)});
  impl_->claim(id);
  g.nodes.push_back(Node{id, std::move(t)});
  return *this;
}

ProgramBuilder& ProgramBuilder::add_library(const std::string& id, LibraryOp op, const std::string& expr) {
  Graph& g = impl_->graph(id);
  if (impl_->graphs.size() > 1) fail("LibraryInMap", id, "library nodes are only allowed at state level");
  LibraryNode l;
  l.op = op;
  if (!expr.empty()) l.expr = SymExpr::parse(expr);
  impl_->claim(id);
  g.nodes.push_back(Node{id, l});
  return *this;
}

ProgramBuilder& ProgramBuilder::add_memlet(const std::string& id, const std::string& src,
                                           const std::string& src_conn, const std::string& dst,
                                           const std::string& dst_conn,
                                           const std::optional<std::vector<std::string>>& subset, Wcr wcr) {
  Graph& g = impl_->graph(id);
  const Node* s = g.find(src);
  const Node* d = g.find(dst);
  if (!s) fail("UnknownNode", id, "memlet source '" + src + "' not in graph");
  if (!d) fail("UnknownNode", id, "memlet destination '" + dst + "' not in graph");
  if (s->is_access() == d->is_access()) fail("InvalidEdge", id, "memlet must connect an access node and a compute node");
  const std::string& data = s->is_access() ? s->access()->data : d->access()->data;
  const DataDescriptor& desc = impl_->p.desc(data);
  if (subset && subset->size() != desc.rank()) {
    fail("ArityMismatch", id, "subset has " + std::to_string(subset->size()) + " indices, '" + data + "' has rank " +
                                  std::to_string(desc.rank()));
  }
  Memlet m;
  m.id = id;
  m.src = src;
  m.src_conn = src_conn;
  m.dst = dst;
  m.dst_conn = dst_conn;
  if (subset) m.subset = parse_all(*subset);
  m.wcr = wcr;
  impl_->claim(id);
  g.edges.push_back(std::move(m));
  return *this;
}

ProgramBuilder& ProgramBuilder::begin_map(const std::string& id, const std::vector<std::string>& params,
                                          const std::vector<MapRange>& ranges) {
  Graph& g = impl_->graph(id);
  if (params.size() != ranges.size()) fail("MapRangeMismatch", id, "map needs one range per parameter");
  MapNode m;
  m.params = params;
  m.ranges = ranges;
  impl_->claim(id);
  g.nodes.push_back(Node{id, std::move(m)});
  impl_->graphs.push_back(std::get<MapNode>(g.nodes.back().kind).body.get());
  return *this;
}

ProgramBuilder& ProgramBuilder::end_map() {
  if (impl_->graphs.size() < 2) fail("NoMap", "", "end_map without an open map");
  impl_->graphs.pop_back();
  return *this;
}

ProgramBuilder& ProgramBuilder::add_compute(const std::string& id, const std::vector<ComputeIn>& ins,
                                            const std::vector<ComputeOut>& outs) {
  std::vector<std::string> conns;
  std::vector<std::pair<std::string, std::string>> bodies;
  for (const ComputeIn& in : ins) {
    add_access(id + ".r." + in.conn, in.data);
    conns.push_back(in.conn);
  }
  for (const ComputeOut& o : outs) bodies.emplace_back(o.conn, o.expr);
  add_tasklet(id, conns, bodies);
  for (const ComputeIn& in : ins) add_memlet(id + ".mr." + in.conn, id + ".r." + in.conn, "", id, in.conn, in.subset);
  for (const ComputeOut& o : outs) {
    add_access(id + ".w." + o.conn, o.data);
    add_memlet(id + ".mw." + o.conn, id, o.conn, id + ".w." + o.conn, "", o.subset, o.wcr);
  }
  return *this;
}

ProgramBuilder& ProgramBuilder::add_library_call(const std::string& id, LibraryOp op, const std::string& out,
                                                 const std::string& x, const std::string& y,
                                                 const std::string& expr, Wcr wcr) {
  add_access(id + ".r.x", x);
  if (!y.empty()) add_access(id + ".r.y", y);
  add_library(id, op, expr);
  add_memlet(id + ".mr.x", id + ".r.x", "", id, "x");
  if (!y.empty()) add_memlet(id + ".mr.y", id + ".r.y", "", id, "y");
  add_access(id + ".w.out", out);
  add_memlet(id + ".mw.out", id, "out", id + ".w.out", "", std::nullopt, wcr);
  return *this;
}

ProgramBuilder& ProgramBuilder::begin_loop(const std::string& id, const std::string& iterator,
                                           const std::string& init, Cmp cmp, const std::string& bound,
                                           const std::string& update, const std::optional<std::string>& inverse) {
  impl_->close_state(id);
  Region& r = impl_->region(id);
  LoopRegion l;
  l.id = id;
  l.header = LoopHeader{iterator, SymExpr::parse(init), SymExpr::parse(bound), cmp, SymExpr::parse(update)};
  if (inverse) l.inverse = SymExpr::parse(*inverse);
  impl_->claim(id);
  r.elements.emplace_back(std::move(l));
  impl_->scopes.push_back(Impl::Scope{std::get<LoopRegion>(r.elements.back()).body.get(), nullptr, true});
  return *this;
}

ProgramBuilder& ProgramBuilder::end_loop() {
  impl_->close_state("");
  if (impl_->scopes.size() < 2 || !impl_->scopes.back().loop) fail("NoLoop", "", "end_loop without an open loop");
  impl_->scopes.pop_back();
  return *this;
}

ProgramBuilder& ProgramBuilder::begin_branch(const std::string& id) {
  impl_->close_state(id);
  Region& r = impl_->region(id);
  impl_->claim(id);
  r.elements.emplace_back(BranchRegion{id, {}, {}});
  impl_->scopes.push_back(Impl::Scope{nullptr, &std::get<BranchRegion>(r.elements.back()), false});
  return *this;
}

ProgramBuilder& ProgramBuilder::begin_arm(const std::string& condition) {
  impl_->close_state("");
  BranchRegion* b = impl_->scopes.back().branch;
  if (!b) fail("NoBranch", "", "begin_arm without an open branch");
  BranchArm a;
  if (!condition.empty()) a.condition = SymExpr::parse(condition);
  b->arms.push_back(std::move(a));
  impl_->scopes.push_back(Impl::Scope{b->arms.back().body.get(), nullptr, false});
  return *this;
}

ProgramBuilder& ProgramBuilder::end_arm() {
  impl_->close_state("");
  if (impl_->scopes.size() < 3 || impl_->scopes.back().loop || !impl_->scopes[impl_->scopes.size() - 2].branch) {
    fail("NoArm", "", "end_arm without an open arm");
  }
  impl_->scopes.pop_back();
  return *this;
}

ProgramBuilder& ProgramBuilder::end_branch() {
  impl_->close_state("");
  if (!impl_->scopes.back().branch) fail("NoBranch", "", "end_branch without an open branch");
  impl_->scopes.pop_back();
  return *this;
}

ProgramBuilder& ProgramBuilder::set_dependent(const std::string& name) {
  impl_->p.dependent = name;
  return *this;
}

ProgramBuilder& ProgramBuilder::add_independent(const std::string& name) {
  impl_->p.independents.push_back(name);
  return *this;
}

Program ProgramBuilder::finish() {
  impl_->close_state("");
  if (impl_->scopes.size() != 1) fail("OpenScope", "", "loop or branch still open");
  std::vector<Diagnostic> diags = validate(impl_->p);
  std::vector<Diagnostic> errors;
  for (const Diagnostic& d : diags) {
    if (d.severity == Diagnostic::Severity::Error) errors.push_back(d);
  }
  if (!errors.empty()) throw ValidationError(std::move(errors));
  return impl_->p;
}

}  // namespace gradflow
