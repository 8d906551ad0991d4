// SPDX-License-Identifier: Apache-2.0
#include "gradflow/interpreter.hpp"

#include <algorithm>
#include <array>
#include <span>
#include <random>
#include <variant>

namespace gradflow {

Array Array::zeros(std::vector<std::int64_t> shape, DType dtype) {
  Array a;
  a.data.assign(static_cast<std::size_t>(numel(shape)), 0.0);
  a.shape = std::move(shape);
  a.dtype = dtype;
  return a;
}

Array Array::scalar(double v, DType dtype) {
  Array a = zeros({}, dtype);
  a.data[0] = dtype == DType::Float32 ? static_cast<double>(static_cast<float>(v)) : v;
  return a;
}

const Array* Tape::find(const ValueKey& key, const Coords& coords) const {
  auto it = stored_values.find(key);
  if (it == stored_values.end()) return nullptr;
  Coords prefix = coords;
  while (true) {
    auto jt = it->second.find(prefix);
    if (jt != it->second.end()) return &jt->second;
    if (prefix.empty()) return nullptr;
    prefix.pop_back();
  }
}

int Tape::arm(const std::string& branch, const Coords& coords) const {
  for (auto it = branch_trace.rbegin(); it != branch_trace.rend(); ++it) {
    if (it->branch == branch && it->coords == coords) return it->arm;
  }
  throw Error(ErrorCode::MissingTapeValue, "no trace entry for branch '" + branch + "'");
}

namespace {

constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline void mix(std::uint64_t& sig, std::uint64_t v) { sig = (sig ^ v) * kFnvPrime; }

inline double round_to(DType t, double v) {
  return t == DType::Float32 ? static_cast<double>(static_cast<float>(v)) : v;
}

bool is_kink(ExprOp op) {
  switch (op) {
    case ExprOp::Abs:
    case ExprOp::Sign:
    case ExprOp::Min:
    case ExprOp::Max:
    case ExprOp::FloorDiv:
    case ExprOp::Mod:
    case ExprOp::Lt:
    case ExprOp::Le:
    case ExprOp::Gt:
    case ExprOp::Ge:
    case ExprOp::Eq:
    case ExprOp::Ne:
      return true;
    default:
      return false;
  }
}

// Stack code for scalar expressions over registers.
enum class VmOp : std::uint8_t { Const, Reg, Unary, Binary, JumpIfZero, Jump };

struct Ins {
  VmOp code;
  ExprOp op = ExprOp::Const;
  int arg = 0;
  double imm = 0.0;
};

struct Code {
  std::vector<Ins> ins;
  int depth = 0;
};

class CodeGen {
 public:
  explicit CodeGen(const std::map<std::string, int, std::less<>>& regs) : regs_(regs) {}

  Code compile(const SymExpr& e) {
    Code c;
    int depth = 0;
    emit(e, c, depth);
    c.depth = max_depth_;
    return c;
  }

 private:
  void push(int& depth) { max_depth_ = std::max(max_depth_, ++depth); }

  void emit(const SymExpr& e, Code& c, int& depth) {
    switch (e.op()) {
      case ExprOp::Const:
        c.ins.push_back({VmOp::Const, ExprOp::Const, 0, e.value()});
        push(depth);
        return;
      case ExprOp::Name: {
        auto it = regs_.find(e.name());
        if (it == regs_.end()) throw Error(ErrorCode::UnboundName, "name '" + e.name() + "' is not an input");
        c.ins.push_back({VmOp::Reg, ExprOp::Name, it->second, 0.0});
        push(depth);
        return;
      }
      case ExprOp::At:
        throw Error(ErrorCode::Internal, "array reads are not allowed in tasklet bodies");
      case ExprOp::Where: {
        emit(e.args()[0], c, depth);
        std::size_t jz = c.ins.size();
        c.ins.push_back({VmOp::JumpIfZero, ExprOp::Where, 0, 0.0});
        --depth;
        emit(e.args()[1], c, depth);
        std::size_t jmp = c.ins.size();
        c.ins.push_back({VmOp::Jump, ExprOp::Where, 0, 0.0});
        --depth;
        c.ins[jz].arg = static_cast<int>(c.ins.size());
        emit(e.args()[2], c, depth);
        c.ins[jmp].arg = static_cast<int>(c.ins.size());
        return;
      }
      default:
        break;
    }
    for (const SymExpr& a : e.args()) emit(a, c, depth);
    if (op_arity(e.op()) == 1) {
      c.ins.push_back({VmOp::Unary, e.op(), 0, 0.0});
    } else {
      c.ins.push_back({VmOp::Binary, e.op(), 0, 0.0});
      --depth;
    }
  }

  const std::map<std::string, int, std::less<>>& regs_;
  int max_depth_ = 0;
};

struct VmState {
  std::vector<double> stack;
  std::int64_t ops = 0;
  std::uint64_t sig = 0;
};

double run_code(const Code& c, const double* regs, VmState& vm) {
  double* st = vm.stack.data();
  int sp = 0;
  const std::size_t n = c.ins.size();
  for (std::size_t pc = 0; pc < n; ++pc) {
    const Ins& in = c.ins[pc];
    switch (in.code) {
      case VmOp::Const:
        st[sp++] = in.imm;
        break;
      case VmOp::Reg:
        st[sp++] = regs[in.arg];
        break;
      case VmOp::Unary: {
        double a = st[sp - 1];
        ++vm.ops;
        if (in.op == ExprOp::Abs || in.op == ExprOp::Sign) mix(vm.sig, (a > 0) + 2 * (a < 0));
        st[sp - 1] = detail::apply_real_unary(in.op, a);
        break;
      }
      case VmOp::Binary: {
        double b = st[--sp];
        double a = st[sp - 1];
        ++vm.ops;
        double r = detail::apply_real(in.op, a, b);
        if (is_kink(in.op)) {
          if (in.op == ExprOp::Min || in.op == ExprOp::Max) {
            mix(vm.sig, (a < b) + 2 * (a == b));
          } else {
            mix(vm.sig, static_cast<std::uint64_t>(static_cast<std::int64_t>(std::floor(r))));
          }
        }
        st[sp - 1] = r;
        break;
      }
      case VmOp::JumpIfZero: {
        double cnd = st[--sp];
        mix(vm.sig, cnd != 0.0);
        if (cnd == 0.0) pc = static_cast<std::size_t>(in.arg) - 1;
        break;
      }
      case VmOp::Jump:
        pc = static_cast<std::size_t>(in.arg) - 1;
        break;
    }
  }
  return st[sp - 1];
}

// Integer expression over iterator/parameter slots, with an affine fast path.
struct CInt {
  std::int64_t constant = 0;
  std::vector<std::pair<int, std::int64_t>> terms;
  std::optional<SymExpr> general;
};

struct CAccess {
  int desc = -1;
  std::vector<CInt> index;
  bool external = false;
  ValueKey key;
  Wcr wcr = Wcr::Overwrite;
  std::string memlet;
  int cache = -1;
};

struct CTasklet {
  std::vector<CAccess> in;
  struct Out {
    Code code;
    std::vector<CAccess> dst;
  };
  std::vector<Out> out;
};

struct CNode;

struct CMap {
  std::vector<int> slots;
  std::vector<std::array<CInt, 3>> ranges;
  std::vector<CNode> body;
};

struct CLibrary {
  LibraryOp op = LibraryOp::ElementwiseUnary;
  Code code;
  CAccess x, y, out;
  bool has_y = false;
};

struct CNode {
  std::string id;
  std::variant<CTasklet, CMap, CLibrary> kind;
  std::vector<int> stores_before;
  std::vector<int> writes;
  std::vector<int> copy_writes;  // stored-copy descriptors, recorded on the tape
  int site = -1;
};

struct CRegion;

struct CState {
  std::string id;
  std::vector<CNode> nodes;
};

struct CLoop {
  std::string id;
  std::string replay_of;
  LoopMode mode = LoopMode::Forward;
  int slot = -1;
  CInt init, bound, update;
  Cmp cmp = Cmp::Lt;
  std::optional<CInt> inverse;
  std::optional<std::array<CInt, 3>> fwd;  // init, bound, update
  Cmp fwd_cmp = Cmp::Lt;
  bool record_iterates = false;
  std::unique_ptr<CRegion> body;
  std::vector<CRegion> peel;
};

struct CBranch {
  std::string id;
  std::string replay_of;
  std::vector<std::optional<SymExpr>> conds;
  std::vector<CRegion> arms;
};

struct CWhile {
  std::string id;
  SymExpr cond;
  std::unique_ptr<CRegion> body;
};

struct CElement {
  std::vector<int> stores_before;
  std::variant<CState, std::unique_ptr<CLoop>, std::unique_ptr<CBranch>, std::unique_ptr<CWhile>> kind;
};

struct CRegion {
  std::vector<CElement> elements;
};

struct CStore {
  ValueKey key;
  int desc = -1;
  std::set<int> writers;
};

}  // namespace

struct Executor::Impl {
  Program program;
  IntBindings params;
  std::int64_t trip_limit = default_trip_limit();
  std::map<std::string, int, std::less<>> desc_slot;
  std::vector<std::string> desc_name;
  std::vector<const DataDescriptor*> descs;
  std::vector<std::vector<std::int64_t>> shapes;
  std::vector<bool> written;
  std::vector<bool> read;
  std::map<std::string, int, std::less<>> name_slot;
  int n_slots = 0;
  int n_cache = 0;
  int max_depth = 1;
  std::vector<CStore> stores;
  std::vector<std::pair<ProgramPoint, int>> anchors;
  std::optional<VersionInfo> versions;
  CRegion root;
  int dependent = -1;

  // ---- compilation ----

  int slot_for(const std::string& name) {
    auto it = name_slot.find(name);
    if (it != name_slot.end()) return it->second;
    name_slot.emplace(name, n_slots);
    return n_slots++;
  }

  CInt compile_int(const SymExpr& e) {
    CInt c;
    if (auto af = as_affine(e)) {
      bool ok = true;
      for (const auto& [n, k] : af->terms) {
        auto it = name_slot.find(n);
        if (it == name_slot.end()) {
          ok = false;
          break;
        }
        c.terms.emplace_back(it->second, k);
      }
      if (ok) {
        c.constant = af->constant;
        return c;
      }
      c.terms.clear();
    }
    c.general = e;
    return c;
  }

  CAccess compile_access(const Graph& g, const Memlet& m) {
    CAccess a;
    std::string data = memlet_data(g, m);
    a.desc = desc_slot.at(data);
    if (m.subset) {
      for (const SymExpr& ix : *m.subset) a.index.push_back(compile_int(ix));
    }
    a.key = ValueKey{data, m.version.value_or(0)};
    a.wcr = m.wcr;
    a.memlet = m.id;
    a.cache = n_cache++;
    return a;
  }

  void mark_effects(const Graph& g) {
    for (const Memlet& m : g.edges) {
      std::string d = memlet_data(g, m);
      if (d.empty()) continue;
      const Node* src = g.find(m.src);
      if (src && src->is_access()) {
        read[desc_slot.at(d)] = true;
      } else {
        written[desc_slot.at(d)] = true;
      }
    }
    for (const Node& n : g.nodes) {
      if (const MapNode* mp = n.map()) mark_effects(*mp->body);
    }
  }

  void mark_region(const Region& r) {
    for (const Element& e : r.elements) {
      if (const auto* s = std::get_if<State>(&e)) {
        mark_effects(s->graph);
      } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
        mark_region(*l->body);
        for (const Region& pr : l->peel) mark_region(pr);
      } else if (const auto* b = std::get_if<BranchRegion>(&e)) {
        for (const BranchArm& a : b->arms) mark_region(*a.body);
      } else if (const auto* w = std::get_if<WhileRegion>(&e)) {
        mark_region(*w->body);
      }
    }
  }

  void declare_names(const Region& r) {
    for (const Element& e : r.elements) {
      if (const auto* s = std::get_if<State>(&e)) {
        declare_graph(s->graph);
      } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
        slot_for(l->header.iterator);
        declare_names(*l->body);
        for (const Region& pr : l->peel) declare_names(pr);
      } else if (const auto* b = std::get_if<BranchRegion>(&e)) {
        for (const BranchArm& a : b->arms) declare_names(*a.body);
      } else if (const auto* w = std::get_if<WhileRegion>(&e)) {
        slot_for("__while_" + w->id);
        declare_names(*w->body);
      }
    }
  }

  void declare_graph(const Graph& g) {
    for (const Node& n : g.nodes) {
      if (const MapNode* m = n.map()) {
        for (const std::string& p : m->params) slot_for(p);
        declare_graph(*m->body);
      }
    }
  }

  std::vector<int> stores_at(const std::vector<Step>& steps, int element, int node) const {
    std::vector<int> out;
    for (const auto& [pt, idx] : anchors) {
      if (pt.region == steps && pt.element == element && pt.node == node) out.push_back(idx);
    }
    return out;
  }

  Code compile_code(const SymExpr& e, const std::map<std::string, int, std::less<>>& regs) {
    Code c = CodeGen(regs).compile(e);
    max_depth = std::max(max_depth, c.depth);
    return c;
  }

  CNode compile_node(const Graph& g, const Node& n) {
    CNode cn;
    cn.id = n.id;
    if (versions) {
      auto it = versions->site_of_node.find(n.id);
      if (it != versions->site_of_node.end()) cn.site = it->second;
    }
    for (const std::string& w : node_effects(g, n).writes) {
      int s = desc_slot.at(w);
      cn.writes.push_back(s);
      if (descs[s]->role == Role::StoredCopy) cn.copy_writes.push_back(s);
    }
    if (const TaskletNode* t = n.tasklet()) {
      CTasklet ct;
      std::map<std::string, int, std::less<>> regs;
      for (std::size_t i = 0; i < t->inputs.size(); ++i) {
        regs[t->inputs[i]] = static_cast<int>(i);
        const Memlet* m = nullptr;
        for (const Memlet& e : g.edges) {
          if (e.dst == n.id && e.dst_conn == t->inputs[i]) m = &e;
        }
        if (!m) throw Error(ErrorCode::Internal, "input '" + t->inputs[i] + "' of " + n.id + " has no memlet");
        ct.in.push_back(compile_access(g, *m));
      }
      for (const TaskletOutput& o : t->outputs) {
        CTasklet::Out out;
        out.code = compile_code(o.expr, regs);
        for (const Memlet& e : g.edges) {
          if (e.src == n.id && e.src_conn == o.name) out.dst.push_back(compile_access(g, e));
        }
        ct.out.push_back(std::move(out));
      }
      cn.kind = std::move(ct);
    } else if (const MapNode* m = n.map()) {
      CMap cm;
      for (std::size_t d = 0; d < m->params.size(); ++d) {
        cm.slots.push_back(name_slot.at(m->params[d]));
        const MapRange& r = m->ranges[d];
        cm.ranges.push_back({compile_int(r.begin), compile_int(r.end), compile_int(r.step)});
      }
      for (const Node& inner : m->body->nodes) {
        if (!inner.is_access()) cm.body.push_back(compile_node(*m->body, inner));
      }
      cn.kind = std::move(cm);
    } else if (const LibraryNode* l = n.library()) {
      CLibrary cl;
      cl.op = l->op;
      for (const Memlet& e : g.edges) {
        if (e.dst == n.id && e.dst_conn == "x") cl.x = compile_access(g, e);
        if (e.dst == n.id && e.dst_conn == "y") {
          cl.y = compile_access(g, e);
          cl.has_y = true;
        }
        if (e.src == n.id) cl.out = compile_access(g, e);
      }
      if (l->op == LibraryOp::ElementwiseUnary || l->op == LibraryOp::ElementwiseBinary) {
        cl.code = compile_code(l->expr, {{"x", 0}, {"y", 1}});
      }
      cn.kind = std::move(cl);
    }
    return cn;
  }

  static bool affine_step(const LoopHeader& h) {
    auto af = as_affine(h.update);
    if (!af || af->terms.size() != 1 || af->terms[0].first != h.iterator || af->terms[0].second != 1) return false;
    return af->constant != 0;
  }

  CRegion compile_region(const Region& r, std::vector<Step>& steps) {
    CRegion cr;
    for (int i = 0; i < static_cast<int>(r.elements.size()); ++i) {
      const Element& e = r.elements[i];
      CElement ce;
      ce.stores_before = stores_at(steps, i, -1);
      if (const auto* s = std::get_if<State>(&e)) {
        CState cs;
        cs.id = s->id;
        for (int n = 0; n < static_cast<int>(s->graph.nodes.size()); ++n) {
          const Node& node = s->graph.nodes[n];
          if (node.is_access()) continue;
          CNode cn = compile_node(s->graph, node);
          cn.stores_before = stores_at(steps, i, n);
          cs.nodes.push_back(std::move(cn));
        }
        ce.kind = std::move(cs);
      } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
        auto cl = std::make_unique<CLoop>();
        cl->id = l->id;
        cl->replay_of = l->replay_of;
        cl->mode = l->mode;
        cl->slot = name_slot.at(l->header.iterator);
        cl->init = compile_int(l->header.init);
        cl->bound = compile_int(l->header.bound);
        cl->update = compile_int(l->header.update);
        cl->cmp = l->header.cmp;
        if (l->inverse) cl->inverse = compile_int(*l->inverse);
        if (l->forward_header) {
          cl->fwd = std::array<CInt, 3>{compile_int(l->forward_header->init), compile_int(l->forward_header->bound),
                                        compile_int(l->forward_header->update)};
          cl->fwd_cmp = l->forward_header->cmp;
        }
        cl->record_iterates = l->mode == LoopMode::Forward && !l->inverse && !affine_step(l->header);
        steps.push_back({i, 0});
        cl->body = std::make_unique<CRegion>(compile_region(*l->body, steps));
        steps.pop_back();
        for (int j = 0; j < static_cast<int>(l->peel.size()); ++j) {
          steps.push_back({i, j + 1});
          cl->peel.push_back(compile_region(l->peel[j], steps));
          steps.pop_back();
        }
        ce.kind = std::move(cl);
      } else if (const auto* b = std::get_if<BranchRegion>(&e)) {
        auto cb = std::make_unique<CBranch>();
        cb->id = b->id;
        cb->replay_of = b->replay_of;
        for (int a = 0; a < static_cast<int>(b->arms.size()); ++a) {
          cb->conds.push_back(b->arms[a].condition);
          steps.push_back({i, a});
          cb->arms.push_back(compile_region(*b->arms[a].body, steps));
          steps.pop_back();
        }
        ce.kind = std::move(cb);
      } else if (const auto* w = std::get_if<WhileRegion>(&e)) {
        auto cw = std::make_unique<CWhile>();
        cw->id = w->id;
        cw->cond = w->condition;
        steps.push_back({i, 0});
        cw->body = std::make_unique<CRegion>(compile_region(*w->body, steps));
        steps.pop_back();
        ce.kind = std::move(cw);
      }
      cr.elements.push_back(std::move(ce));
    }
    return cr;
  }

  Impl(const Program& p, IntBindings prm, const StorePolicy& store) : program(p), params(std::move(prm)) {
    for (const auto& [name, d] : program.descriptors) {
      desc_slot.emplace(name, static_cast<int>(desc_name.size()));
      desc_name.push_back(name);
      descs.push_back(&d);
    }
    for (const std::string& prm_name : program.parameters) {
      if (!params.count(prm_name)) throw Error(ErrorCode::UnboundName, "parameter '" + prm_name + "' is not bound");
    }
    for (const DataDescriptor* d : descs) {
      std::vector<std::int64_t> shape = bind_shape(*d, params);
      for (std::int64_t s : shape) {
        if (s < 1) throw Error(ErrorCode::ShapeMismatch, "descriptor dimension must be positive");
      }
      shapes.push_back(std::move(shape));
    }
    written.assign(descs.size(), false);
    read.assign(descs.size(), false);
    mark_region(program.region);
    for (const auto& [name, v] : params) {
      (void)v;
      slot_for(name);
    }
    declare_names(program.region);
    if (!store.empty()) {
      versions = analyze_versions(program);
      for (const ValueKey& key : store) {
        if (!desc_slot.count(key.first)) {
          throw Error(ErrorCode::Internal, "store policy names unknown descriptor '" + key.first + "'");
        }
        if (key.second == 0 && program.desc(key.first).role == Role::Input) continue;
        const auto& labels = versions->labels.at(key.first);
        if (key.second < 0 || key.second >= static_cast<int>(labels.size())) {
          throw Error(ErrorCode::Internal, "store policy names unknown version of '" + key.first + "'");
        }
        int idx = static_cast<int>(stores.size());
        stores.push_back(CStore{key, desc_slot.at(key.first), labels[key.second].writers});
        anchors.emplace_back(store_anchor(program, *versions, key), idx);
      }
    }
    std::vector<Step> steps;
    root = compile_region(program.region, steps);
    auto it = desc_slot.find(program.dependent);
    if (it != desc_slot.end()) dependent = it->second;
  }

  // ---- execution ----

  struct Frame {
    std::vector<Array> arrays;
    std::vector<std::int64_t> ienv;
    Coords coords;
    std::vector<int> last_writer;
    Tape* out = nullptr;
    const Tape* in = nullptr;
    VmState vm;
    std::vector<std::pair<std::uint64_t, const Array*>> cache;
    std::uint64_t epoch = 1;
    std::vector<double> regs;
  };

  std::optional<std::int64_t> lookup_int(const Frame& f, std::string_view n) const {
    auto it = name_slot.find(n);
    if (it == name_slot.end()) return std::nullopt;
    return f.ienv[it->second];
  }

  double read_element(const Frame& f, const std::string& array, std::span<const std::int64_t> idx) const {
    auto it = desc_slot.find(array);
    if (it == desc_slot.end()) throw Error(ErrorCode::UnboundName, "unknown array '" + array + "'");
    const Array& a = f.arrays[it->second];
    if (idx.size() != a.shape.size()) throw Error(ErrorCode::ShapeMismatch, "wrong index arity for '" + array + "'");
    std::int64_t off = 0;
    for (std::size_t d = 0; d < idx.size(); ++d) {
      if (idx[d] < 0 || idx[d] >= a.shape[d]) {
        throw Error(ErrorCode::OutOfBounds, "read of '" + array + "' index " + std::to_string(idx[d]) +
                                                " outside [0," + std::to_string(a.shape[d]) + ")");
      }
      off = off * a.shape[d] + idx[d];
    }
    return a.data[off];
  }

  std::int64_t eval_cint(const CInt& c, const Frame& f) const {
    if (!c.general) {
      std::int64_t v = c.constant;
      for (const auto& [slot, k] : c.terms) v += k * f.ienv[slot];
      return v;
    }
    return evaluate_as<std::int64_t>(
        *c.general, [&](std::string_view n) { return lookup_int(f, n); },
        [&](const std::string& a, std::span<const std::int64_t> idx) {
          return detail::to_exact_int(read_element(f, a, idx));
        });
  }

  double eval_real(const SymExpr& e, const Frame& f) const {
    return evaluate_as<double>(
        e,
        [&](std::string_view n) -> std::optional<double> {
          auto v = lookup_int(f, n);
          if (!v) return std::nullopt;
          return static_cast<double>(*v);
        },
        [&](const std::string& a, std::span<const std::int64_t> idx) { return read_element(f, a, idx); });
  }

  const Array& resolve(const CAccess& a, Frame& f) const {
    if (!a.external || !f.in) return f.arrays[a.desc];
    auto& slot = f.cache[a.cache];
    if (slot.first == f.epoch) return *slot.second;
    const Array* arr = f.in->find(a.key, f.coords);
    if (!arr) {
      throw Error(ErrorCode::MissingTapeValue,
                  "no tape value for " + a.key.first + " version " + std::to_string(a.key.second));
    }
    slot = {f.epoch, arr};
    return *arr;
  }

  std::int64_t offset(const CAccess& a, const Array& arr, const Frame& f) const {
    std::int64_t off = 0;
    for (std::size_t d = 0; d < a.index.size(); ++d) {
      std::int64_t ix = eval_cint(a.index[d], f);
      if (ix < 0 || ix >= arr.shape[d]) {
        std::string idx;
        for (std::size_t k = 0; k < a.index.size(); ++k) {
          if (k) idx += ",";
          idx += std::to_string(eval_cint(a.index[k], f));
        }
        throw Error(ErrorCode::OutOfBounds, "memlet " + a.memlet + " index [" + idx + "] outside '" +
                                                desc_name[a.desc] + "'");
      }
      off = off * arr.shape[d] + ix;
    }
    return off;
  }

  void store(Array& dst, std::int64_t off, double v, Wcr wcr) const {
    double r = wcr == Wcr::Sum ? dst.data[off] + v : v;
    dst.data[off] = round_to(dst.dtype, r);
  }

  void exec_tasklet(const CTasklet& t, Frame& f) const {
    double* regs = f.regs.data();
    for (std::size_t i = 0; i < t.in.size(); ++i) {
      const CAccess& a = t.in[i];
      const Array& arr = resolve(a, f);
      regs[i] = arr.data[offset(a, arr, f)];
    }
    for (const CTasklet::Out& o : t.out) {
      double v = run_code(o.code, regs, f.vm);
      for (const CAccess& d : o.dst) {
        Array& arr = f.arrays[d.desc];
        store(arr, offset(d, arr, f), v, d.wcr);
        if (d.wcr == Wcr::Sum) ++f.vm.ops;
      }
    }
  }

  void exec_map_dims(const CMap& m, std::size_t d, Frame& f) const {
    if (d == m.slots.size()) {
      for (const CNode& n : m.body) exec_node_kind(n, f);
      return;
    }
    std::int64_t b = eval_cint(m.ranges[d][0], f);
    std::int64_t e = eval_cint(m.ranges[d][1], f);
    std::int64_t s = eval_cint(m.ranges[d][2], f);
    if (s == 0) throw Error(ErrorCode::DomainError, "map range with zero step");
    for (std::int64_t i = b; s > 0 ? i < e : i > e; i += s) {
      f.ienv[m.slots[d]] = i;
      exec_map_dims(m, d + 1, f);
    }
  }

  void exec_library(const CLibrary& l, Frame& f) const {
    const Array& x = resolve(l.x, f);
    const Array* y = l.has_y ? &resolve(l.y, f) : nullptr;
    Array& out = f.arrays[l.out.desc];
    Wcr w = l.out.wcr;
    switch (l.op) {
      case LibraryOp::MatMul: {
        std::int64_t m = x.shape[0], k = x.shape[1], n = y->shape[1];
        std::vector<double> acc(static_cast<std::size_t>(m * n), 0.0);
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t kk = 0; kk < k; ++kk) {
            double a = x.data[i * k + kk];
            for (std::int64_t j = 0; j < n; ++j) acc[i * n + j] += a * y->data[kk * n + j];
          }
        }
        for (std::int64_t i = 0; i < m * n; ++i) store(out, i, acc[i], w);
        f.vm.ops += 2 * m * n * k;
        break;
      }
      case LibraryOp::ReduceSum: {
        double s = 0.0;
        for (double v : x.data) s += v;
        store(out, 0, s, w);
        f.vm.ops += x.size();
        break;
      }
      case LibraryOp::ElementwiseUnary:
      case LibraryOp::ElementwiseBinary: {
        double regs[2] = {0.0, 0.0};
        for (std::int64_t i = 0; i < out.size(); ++i) {
          regs[0] = x.data[i];
          if (y) regs[1] = y->data[i];
          store(out, i, run_code(l.code, regs, f.vm), w);
        }
        break;
      }
    }
  }

  void exec_node_kind(const CNode& n, Frame& f) const {
    if (const auto* t = std::get_if<CTasklet>(&n.kind)) {
      exec_tasklet(*t, f);
    } else if (const auto* m = std::get_if<CMap>(&n.kind)) {
      exec_map_dims(*m, 0, f);
    } else {
      exec_library(std::get<CLibrary>(n.kind), f);
    }
  }

  void take_snapshots(const std::vector<int>& idx, Frame& f) const {
    if (!f.out) return;
    for (int i : idx) {
      const CStore& s = stores[i];
      int lw = f.last_writer[s.desc];
      if (!s.writers.count(lw)) {
        throw Error(ErrorCode::Internal, "snapshot of " + s.key.first + " version " + std::to_string(s.key.second) +
                                             " taken after an unexpected writer");
      }
      f.out->stored_values[s.key][f.coords] = f.arrays[s.desc];
    }
  }

  void exec_node(const CNode& n, Frame& f) const {
    take_snapshots(n.stores_before, f);
    exec_node_kind(n, f);
    for (int w : n.writes) f.last_writer[w] = n.site;
    if (f.out) {
      for (int c : n.copy_writes) f.out->stored_values[{desc_name[c], 0}][f.coords] = f.arrays[c];
    }
  }

  void enter(Frame& f, std::int64_t i) const {
    f.coords.push_back(i);
    ++f.epoch;
  }

  void leave(Frame& f) const {
    f.coords.pop_back();
    ++f.epoch;
  }

  bool test(Cmp c, std::int64_t i, std::int64_t b) const { return c == Cmp::Lt ? i < b : i > b; }

  void check_trips(std::int64_t n, const std::string& id) const {
    if (n > trip_limit) {
      throw Error(ErrorCode::NonTermination,
                  "loop '" + id + "' exceeded the trip limit of " + std::to_string(trip_limit));
    }
  }

  void run_iteration(const CLoop& l, std::int64_t j, std::int64_t i, Frame& f) const {
    f.ienv[l.slot] = i;
    enter(f, i);
    exec_region(j < static_cast<std::int64_t>(l.peel.size()) ? l.peel[j] : *l.body, f);
    leave(f);
  }

  void exec_loop(const CLoop& l, Frame& f) const {
    if (l.mode == LoopMode::Replay) {
      if (!f.in) throw Error(ErrorCode::MissingTapeValue, "replay loop '" + l.id + "' needs a tape");
      auto it = f.in->iterate_records.find({l.replay_of, f.coords});
      if (it == f.in->iterate_records.end()) {
        throw Error(ErrorCode::MissingTapeValue, "no iterate record for loop '" + l.replay_of + "'");
      }
      const auto& seq = it->second;
      std::int64_t j = 0;
      for (auto r = seq.rbegin(); r != seq.rend(); ++r, ++j) run_iteration(l, j, *r, f);
      return;
    }
    if (l.mode == LoopMode::Inverse) {
      const auto& fh = *l.fwd;
      std::int64_t i = eval_cint(fh[0], f);
      std::vector<std::int64_t> iterates;
      while (true) {
        f.ienv[l.slot] = i;
        if (!test(l.fwd_cmp, i, eval_cint(fh[1], f))) break;
        iterates.push_back(i);
        check_trips(static_cast<std::int64_t>(iterates.size()), l.id);
        i = eval_cint(fh[2], f);
      }
      const auto n = static_cast<std::int64_t>(iterates.size());
      if (n > 0) i = iterates.back();
      for (std::int64_t j = 0; j < n; ++j) {
        if (i != iterates[n - 1 - j]) {
          throw Error(ErrorCode::MissingInverse, "inverse update of loop '" + l.id + "' does not retrace the iterates");
        }
        run_iteration(l, j, i, f);
        if (j + 1 < n) {
          f.ienv[l.slot] = i;
          i = eval_cint(*l.inverse, f);
        }
      }
      return;
    }
    std::int64_t i = eval_cint(l.init, f);
    std::int64_t j = 0;
    std::vector<std::int64_t>* rec = nullptr;
    if (l.record_iterates && f.out) {
      rec = &f.out->iterate_records[{l.id, f.coords}];
      rec->clear();
    }
    while (true) {
      f.ienv[l.slot] = i;
      if (!test(l.cmp, i, eval_cint(l.bound, f))) break;
      check_trips(j + 1, l.id);
      if (rec) rec->push_back(i);
      run_iteration(l, j, i, f);
      ++j;
      f.ienv[l.slot] = i;
      i = eval_cint(l.update, f);
    }
  }

  void exec_branch(const CBranch& b, Frame& f) const {
    int arm = -1;
    if (!b.replay_of.empty() && f.in) {
      arm = f.in->arm(b.replay_of, f.coords);
    } else {
      for (int a = 0; a < static_cast<int>(b.conds.size()); ++a) {
        if (!b.conds[a] || eval_real(*b.conds[a], f) != 0.0) {
          arm = a;
          break;
        }
      }
      if (f.out) f.out->branch_trace.push_back(BranchRecord{b.id, f.coords, arm});
    }
    mix(f.vm.sig, static_cast<std::uint64_t>(arm + 1));
    if (arm >= 0) exec_region(b.arms[arm], f);
  }

  void exec_while(const CWhile& w, Frame& f) const {
    std::int64_t n = 0;
    while (eval_real(w.cond, f) != 0.0) {
      check_trips(++n, w.id);
      enter(f, n - 1);
      exec_region(*w.body, f);
      leave(f);
    }
  }

  void exec_region(const CRegion& r, Frame& f) const {
    for (const CElement& e : r.elements) {
      take_snapshots(e.stores_before, f);
      if (const auto* s = std::get_if<CState>(&e.kind)) {
        for (const CNode& n : s->nodes) exec_node(n, f);
      } else if (const auto* l = std::get_if<std::unique_ptr<CLoop>>(&e.kind)) {
        exec_loop(**l, f);
      } else if (const auto* b = std::get_if<std::unique_ptr<CBranch>>(&e.kind)) {
        exec_branch(**b, f);
      } else {
        exec_while(*std::get<std::unique_ptr<CWhile>>(e.kind), f);
      }
    }
  }

  Frame make_frame() const {
    Frame f;
    f.arrays.reserve(descs.size());
    for (std::size_t i = 0; i < descs.size(); ++i) f.arrays.push_back(Array::zeros(shapes[i], descs[i]->dtype));
    f.ienv.assign(static_cast<std::size_t>(n_slots), 0);
    for (const auto& [name, v] : params) f.ienv[name_slot.at(name)] = v;
    f.last_writer.assign(descs.size(), -1);
    f.vm.stack.assign(static_cast<std::size_t>(max_depth) + 1, 0.0);
    f.cache.assign(static_cast<std::size_t>(n_cache), {0, nullptr});
    std::size_t regs = 2;
    collect_regs(root, regs);
    f.regs.assign(regs, 0.0);
    return f;
  }

  static void collect_node_regs(const CNode& n, std::size_t& regs) {
    if (const auto* t = std::get_if<CTasklet>(&n.kind)) regs = std::max(regs, t->in.size());
    if (const auto* m = std::get_if<CMap>(&n.kind)) {
      for (const CNode& b : m->body) collect_node_regs(b, regs);
    }
  }

  static void collect_regs(const CRegion& r, std::size_t& regs) {
    for (const CElement& e : r.elements) {
      if (const auto* s = std::get_if<CState>(&e.kind)) {
        for (const CNode& n : s->nodes) collect_node_regs(n, regs);
      } else if (const auto* l = std::get_if<std::unique_ptr<CLoop>>(&e.kind)) {
        collect_regs(*(*l)->body, regs);
        for (const CRegion& p : (*l)->peel) collect_regs(p, regs);
      } else if (const auto* b = std::get_if<std::unique_ptr<CBranch>>(&e.kind)) {
        for (const CRegion& a : (*b)->arms) collect_regs(a, regs);
      } else {
        collect_regs(*std::get<std::unique_ptr<CWhile>>(e.kind)->body, regs);
      }
    }
  }
};

namespace {

void set_external(CRegion& r, const std::vector<bool>& ext);

void set_external_node(CNode& n, const std::vector<bool>& ext) {
  auto fix = [&](CAccess& a) { a.external = ext[a.desc]; };
  if (auto* t = std::get_if<CTasklet>(&n.kind)) {
    for (CAccess& a : t->in) fix(a);
  } else if (auto* m = std::get_if<CMap>(&n.kind)) {
    for (CNode& b : m->body) set_external_node(b, ext);
  } else if (auto* l = std::get_if<CLibrary>(&n.kind)) {
    fix(l->x);
    if (l->has_y) fix(l->y);
  }
}

void set_external(CRegion& r, const std::vector<bool>& ext) {
  for (CElement& e : r.elements) {
    if (auto* s = std::get_if<CState>(&e.kind)) {
      for (CNode& n : s->nodes) set_external_node(n, ext);
    } else if (auto* l = std::get_if<std::unique_ptr<CLoop>>(&e.kind)) {
      set_external(*(*l)->body, ext);
      for (CRegion& p : (*l)->peel) set_external(p, ext);
    } else if (auto* b = std::get_if<std::unique_ptr<CBranch>>(&e.kind)) {
      for (CRegion& a : (*b)->arms) set_external(a, ext);
    } else {
      set_external(*std::get<std::unique_ptr<CWhile>>(e.kind)->body, ext);
    }
  }
}

}  // namespace

Executor::Executor(const Program& p, IntBindings params, StorePolicy store)
    : impl_(std::make_unique<Impl>(p, std::move(params), store)) {
  std::vector<bool> ext(impl_->descs.size());
  for (std::size_t i = 0; i < ext.size(); ++i) {
    ext[i] = impl_->read[i] && !impl_->written[i] && static_cast<int>(i) != impl_->dependent;
  }
  set_external(impl_->root, ext);
}

Executor::~Executor() = default;
Executor::Executor(Executor&&) noexcept = default;
Executor& Executor::operator=(Executor&&) noexcept = default;

const Program& Executor::program() const { return impl_->program; }

ExecutionResult Executor::forward(const ArrayMap& inputs) const {
  const Impl& im = *impl_;
  Impl::Frame f = im.make_frame();
  ExecutionResult res;
  res.tape.params = im.params;
  f.out = &res.tape;
  for (std::size_t i = 0; i < im.descs.size(); ++i) {
    if (im.descs[i]->role != Role::Input) continue;
    const std::string& name = im.desc_name[i];
    auto it = inputs.find(name);
    if (it == inputs.end()) throw Error(ErrorCode::ShapeMismatch, "missing input '" + name + "'");
    if (it->second.shape != im.shapes[i]) {
      throw Error(ErrorCode::ShapeMismatch, "input '" + name + "' has the wrong shape");
    }
    Array& a = f.arrays[i];
    for (std::int64_t k = 0; k < a.size(); ++k) a.data[k] = round_to(a.dtype, it->second.data[k]);
    res.tape.stored_values[{name, 0}][{}] = a;
  }
  im.exec_region(im.root, f);
  for (std::size_t i = 0; i < im.descs.size(); ++i) {
    if (im.descs[i]->role != Role::Input || static_cast<int>(i) == im.dependent) {
      res.outputs.emplace(im.desc_name[i], std::move(f.arrays[i]));
    }
  }
  res.op_count = f.vm.ops;
  res.signature = f.vm.sig;
  return res;
}

ArrayMap Executor::backward(const Tape& tape, double seed, std::int64_t* op_count) const {
  const Impl& im = *impl_;
  Impl::Frame f = im.make_frame();
  f.in = &tape;
  if (im.dependent >= 0) {
    Array& d = f.arrays[im.dependent];
    std::fill(d.data.begin(), d.data.end(), round_to(d.dtype, seed));
  }
  im.exec_region(im.root, f);
  ArrayMap out;
  for (std::size_t i = 0; i < im.descs.size(); ++i) {
    if (im.descs[i]->role == Role::Gradient) out.emplace(im.desc_name[i], std::move(f.arrays[i]));
  }
  if (op_count) *op_count = f.vm.ops;
  return out;
}

ExecutionResult run_forward(const Program& p, const ArrayMap& inputs, const IntBindings& params,
                            const StorePolicy& store) {
  return Executor(p, params, store).forward(inputs);
}

ArrayMap run_backward(const Program& backward, const Tape& tape, double seed) {
  return Executor(backward, tape.params).backward(tape, seed);
}

ArrayMap random_inputs(const Program& p, const IntBindings& params, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  ArrayMap out;
  for (const auto& [name, d] : p.descriptors) {
    if (d.role != Role::Input) continue;
    Array a = Array::zeros(bind_shape(d, params), d.dtype);
    for (double& v : a.data) v = round_to(d.dtype, dist(rng));
    out.emplace(name, std::move(a));
  }
  return out;
}

}  // namespace gradflow
