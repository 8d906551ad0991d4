// SPDX-License-Identifier: Apache-2.0
#include "gradflow/flops.hpp"

#include <algorithm>

namespace gradflow {

namespace {

std::int64_t range_length(std::int64_t b, std::int64_t e, std::int64_t s) {
  if (s == 0) throw Error(ErrorCode::DomainError, "map range with zero step");
  if (s > 0) return e > b ? (e - b + s - 1) / s : 0;
  return b > e ? (b - e - s - 1) / (-s) : 0;
}

std::int64_t tasklet_flops(const Graph& g, const Node& n, const TaskletNode& t) {
  std::int64_t f = 0;
  for (const TaskletOutput& o : t.outputs) f += op_count(o.expr);
  for (const Memlet& e : g.edges) {
    if (e.src == n.id && e.wcr == Wcr::Sum) ++f;
  }
  return f;
}

const DataDescriptor* conn_desc(const Program& p, const Graph& g, const Node& n, const char* conn) {
  for (const Memlet& e : g.edges) {
    bool hit = (e.dst == n.id && e.dst_conn == conn) || (e.src == n.id && e.src_conn == conn);
    if (hit) return &p.desc(memlet_data(g, e));
  }
  return nullptr;
}

std::int64_t map_flops(const Program& p, const MapNode& m, std::size_t d, IntBindings& b) {
  bool nested = std::any_of(m.body->nodes.begin(), m.body->nodes.end(), [](const Node& x) { return x.map(); });
  std::int64_t lo = eval_int(m.ranges[d].begin, b);
  std::int64_t hi = eval_int(m.ranges[d].end, b);
  std::int64_t st = eval_int(m.ranges[d].step, b);
  if (d + 1 == m.params.size() && !nested) {
    std::int64_t per = 0;
    for (const Node& inner : m.body->nodes) {
      if (!inner.is_access()) per += node_flops(p, *m.body, inner, b);
    }
    return per * range_length(lo, hi, st);
  }
  std::int64_t total = 0;
  for (std::int64_t i = lo; st > 0 ? i < hi : i > hi; i += st) {
    b[m.params[d]] = i;
    if (d + 1 == m.params.size()) {
      for (const Node& inner : m.body->nodes) {
        if (!inner.is_access()) total += node_flops(p, *m.body, inner, b);
      }
    } else {
      total += map_flops(p, m, d + 1, b);
    }
  }
  b.erase(m.params[d]);
  return total;
}

class Counter {
 public:
  Counter(const Program& p, const PathChoice& path) : p_(p), path_(path) {}

  std::int64_t region(const Region& r, IntBindings& b, bool in_loop) {
    std::int64_t total = 0;
    for (const Element& e : r.elements) {
      if (const auto* s = std::get_if<State>(&e)) {
        for (const Node& n : s->graph.nodes) {
          if (!n.is_access()) total += node_flops(p_, s->graph, n, b);
        }
      } else if (const auto* l = std::get_if<LoopRegion>(&e)) {
        total += loop(*l, b);
      } else if (const auto* br = std::get_if<BranchRegion>(&e)) {
        if (in_loop) {
          std::int64_t best = 0;
          for (const BranchArm& a : br->arms) best = std::max(best, region(*a.body, b, true));
          total += best;
        } else {
          auto it = path_.find(br->replay_of.empty() ? br->id : br->replay_of);
          int arm = it == path_.end() ? 0 : it->second;
          if (arm >= 0) total += region(*br->arms.at(arm).body, b, false);
        }
      } else if (const auto* w = std::get_if<WhileRegion>(&e)) {
        throw Error(ErrorCode::UnresolvableTripCount, "while region '" + w->id + "' has no static trip count");
      }
    }
    return total;
  }

 private:
  std::int64_t loop(const LoopRegion& l, IntBindings& b) {
    std::vector<std::int64_t> its;
    if (l.mode == LoopMode::Inverse && l.forward_header) {
      its = enumerate_header(*l.forward_header, b, default_trip_limit());
      std::reverse(its.begin(), its.end());
    } else if (l.mode == LoopMode::Replay) {
      throw Error(ErrorCode::UnresolvableTripCount, "replayed loop '" + l.id + "' has a dynamic trip count");
    } else {
      its = enumerate_header(l.header, b, default_trip_limit());
    }
    std::int64_t total = 0;
    for (std::size_t j = 0; j < its.size(); ++j) {
      b[l.header.iterator] = its[j];
      total += region(j < l.peel.size() ? l.peel[j] : *l.body, b, true);
    }
    b.erase(l.header.iterator);
    return total;
  }

  const Program& p_;
  const PathChoice& path_;
};

template <typename F>
auto resolving(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::UnboundName) throw Error(ErrorCode::UnresolvableTripCount, e.what());
    throw;
  }
}

}  // namespace

std::int64_t node_flops(const Program& p, const Graph& g, const Node& n, const IntBindings& bindings) {
  if (const TaskletNode* t = n.tasklet()) return tasklet_flops(g, n, *t);
  if (const MapNode* m = n.map()) {
    IntBindings b = bindings;
    return map_flops(p, *m, 0, b);
  }
  if (const LibraryNode* l = n.library()) {
    const DataDescriptor* x = conn_desc(p, g, n, "x");
    const DataDescriptor* y = conn_desc(p, g, n, "y");
    const DataDescriptor* o = conn_desc(p, g, n, "out");
    if (!x || !o) throw Error(ErrorCode::Internal, "library node " + n.id + " is not connected");
    std::int64_t extra = 0;
    for (const Memlet& e : g.edges) {
      if (e.src == n.id && e.wcr == Wcr::Sum) extra = numel(bind_shape(*o, bindings));
    }
    switch (l->op) {
      case LibraryOp::MatMul: {
        auto xs = bind_shape(*x, bindings);
        auto ys = bind_shape(*y, bindings);
        return 2 * xs[0] * xs[1] * ys[1] + extra;
      }
      case LibraryOp::ReduceSum:
        return numel(bind_shape(*x, bindings)) + extra;
      case LibraryOp::ElementwiseUnary:
      case LibraryOp::ElementwiseBinary:
        return numel(bind_shape(*o, bindings)) * op_count(l->expr) + extra;
    }
  }
  return 0;
}

std::int64_t count_flops_region(const Program& p, const Region& r, const IntBindings& params,
                                const PathChoice& path) {
  return resolving([&] {
    IntBindings b = params;
    return Counter(p, path).region(r, b, false);
  });
}

std::map<std::string, std::int64_t> count_flops(const Program& p, const IntBindings& params) {
  std::map<std::string, std::int64_t> out;
  for (const PathChoice& c : enumerate_paths(p)) out[path_name(c)] = count_flops_region(p, p.region, params, c);
  return out;
}

std::int64_t count_flops_max(const Program& p, const IntBindings& params) {
  std::int64_t best = 0;
  for (const auto& [name, v] : count_flops(p, params)) {
    (void)name;
    best = std::max(best, v);
  }
  return best;
}

}  // namespace gradflow
