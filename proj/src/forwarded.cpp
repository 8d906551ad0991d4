// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <functional>

#include "gradflow/checkpointing.hpp"
#include "gradflow/flops.hpp"

namespace gradflow {

namespace {

[[noreturn]] void irrecomputable(const ValueKey& k, const std::string& why) {
  throw Error(ErrorCode::IrrecomputableValue, k.first + "@" + std::to_string(k.second) + " " + why);
}

const Node& node_at(const Program& p, const NodeLoc& loc, const Graph** graph) {
  const Region& r = region_at(p.region, loc.steps);
  const auto& s = std::get<State>(r.elements.at(loc.element));
  *graph = &s.graph;
  return s.graph.nodes.at(loc.node);
}

bool full_overwrite(const Program& p, const Graph& g, const Node& n, const std::string& data) {
  NodeEffects fx = node_effects(g, n);
  if (fx.writes != std::vector<std::string>{data} || fx.overwrites != fx.writes) return false;
  if (n.library()) return true;
  const DataDescriptor& d = p.desc(data);
  if (n.tasklet()) return d.is_scalar();
  const MapNode& m = *n.map();
  if (m.params.size() != d.rank()) return false;
  for (std::size_t k = 0; k < m.params.size(); ++k) {
    const MapRange& r = m.ranges[k];
    if (!r.begin.is_const(0.0) || !r.step.is_const(1.0) || simplify(r.end) != simplify(d.shape[k])) return false;
  }
  for (const Node& inner : m.body->nodes) {
    if (inner.map()) return false;
  }
  for (const Memlet& e : m.body->edges) {
    const Node* src = m.body->find(e.src);
    if (!src || src->is_access()) continue;
    if (!e.subset || e.subset->size() != m.params.size()) return false;
    for (std::size_t k = 0; k < m.params.size(); ++k) {
      if (!(*e.subset)[k].is_name(m.params[k])) return false;
    }
  }
  return true;
}

class BlockBuilder {
 public:
  BlockBuilder(const Program& p, const VersionInfo& vi, const ValueKey& top, int id)
      : p_(p), vi_(vi), top_(top), id_(id), prefix_("rc" + std::to_string(id) + ".") {
    block.state.id = "__rc" + std::to_string(id);
  }

  RecomputeBlock block;

  std::string build(const ValueKey& key) {
    auto done = produced_.find(key);
    if (done != produced_.end()) return done->second;
    const VersionLabel& label = vi_.label(key);
    if (label.writers.size() != 1 || *label.writers.begin() < 0) {
      irrecomputable(key, "has no unique writer");
    }
    const WriteSite& site = vi_.sites.at(*label.writers.begin());
    if (!site.loc.steps.empty()) irrecomputable(key, "is written inside a loop or branch");
    const Graph* g = nullptr;
    const Node& n = node_at(p_, site.loc, &g);
    if (!full_overwrite(p_, *g, n, key.first)) irrecomputable(key, "is not a full overwrite by a single node");
    collect_reads(*g, n);
    std::string name = key.first + "__rc" + std::to_string(id_) + "_v" + std::to_string(key.second);
    DataDescriptor d = p_.desc(key.first);
    d.role = Role::Intermediate;
    d.gradient_of.clear();
    d.lifetime = key == top_ ? Lifetime::Scoped : Lifetime::State;
    block.buffers[name] = d;
    if (key == top_) {
      block.result = name;
    } else {
      block.scratch.push_back(name);
    }
    produced_[key] = name;
    copy_node(*g, n, block.state.graph, name);
    return name;
  }

 private:
  bool leaf(const ValueKey& k) const { return k.second == 0 && p_.desc(k.first).role == Role::Input; }

  void collect_reads(const Graph& g, const Node& n) {
    if (const MapNode* m = n.map()) {
      for (const Node& inner : m->body->nodes) {
        if (!inner.is_access()) collect_reads(*m->body, inner);
      }
      return;
    }
    for (const Memlet& e : g.edges) {
      if (e.dst != n.id) continue;
      const ValueKey& k = vi_.memlet_value.at(e.id);
      if (!leaf(k)) build(k);
    }
  }

  void copy_node(const Graph& g, const Node& n, Graph& out, const std::string& target) {
    if (const MapNode* m = n.map()) {
      MapNode copy;
      copy.params = m->params;
      copy.ranges = m->ranges;
      for (const Node& inner : m->body->nodes) {
        if (!inner.is_access()) copy_node(*m->body, inner, *copy.body, target);
      }
      out.nodes.push_back(Node{prefix_ + n.id, std::move(copy)});
      return;
    }
    std::vector<Memlet> ins, outs;
    for (const Memlet& e : g.edges) {
      if (e.dst == n.id) ins.push_back(e);
      if (e.src == n.id) outs.push_back(e);
    }
    for (Memlet& e : ins) {
      const ValueKey& k = vi_.memlet_value.at(e.id);
      std::string data = leaf(k) ? k.first : produced_.at(k);
      std::string acc = prefix_ + e.id + ".a";
      out.nodes.push_back(Node{acc, AccessNode{data}});
      e.version = leaf(k) ? std::optional<int>(0) : std::nullopt;
      e.src = acc;
      e.dst = prefix_ + n.id;
      e.id = prefix_ + e.id;
    }
    out.nodes.push_back(Node{prefix_ + n.id, n.kind});
    for (Memlet& e : outs) {
      std::string acc = prefix_ + e.id + ".a";
      out.nodes.push_back(Node{acc, AccessNode{target}});
      e.src = prefix_ + n.id;
      e.dst = acc;
      e.id = prefix_ + e.id;
      e.version.reset();
    }
    for (Memlet& e : ins) out.edges.push_back(std::move(e));
    for (Memlet& e : outs) out.edges.push_back(std::move(e));
  }

  const Program& p_;
  const VersionInfo& vi_;
  ValueKey top_;
  int id_;
  std::string prefix_;
  std::map<ValueKey, std::string> produced_;
};

int first_writer(const VersionLabel& l) {
  for (int w : l.writers) {
    if (w >= 0) return w;
  }
  return -1;
}

}  // namespace

RecomputeBlock recompute_subgraph(const Program& forward, const VersionInfo& versions, const ValueKey& key, int id) {
  BlockBuilder b(forward, versions, key, id);
  b.build(key);
  return std::move(b.block);
}

std::vector<ForwardedValue> collect_forwarded(const Program& forward, const BackwardResult& bwd,
                                              const IntBindings& params) {
  const VersionInfo& vi = bwd.versions;
  std::vector<ForwardedValue> out;
  for (const ForwardedItem& item : bwd.requirement.items) {
    ForwardedValue fv;
    fv.key = item.key;
    const DataDescriptor& d = forward.desc(item.key.first);
    fv.scalar = d.is_scalar();
    fv.S = size_bytes(d, params);
    fv.anchor = store_anchor(forward, vi, item.key);
    fv.exec_count = execution_count(forward, fv.anchor.region, params, default_trip_limit());
    std::vector<NodeLoc> uses = versioned_readers(bwd.program, item.key.first, item.key.second);
    fv.used = !uses.empty();
    if (fv.used) fv.use_point = first_use_point(uses);
    out.push_back(std::move(fv));
  }
  std::stable_sort(out.begin(), out.end(), [&](const ForwardedValue& a, const ForwardedValue& b) {
    return first_writer(vi.label(a.key)) < first_writer(vi.label(b.key));
  });
  for (std::size_t i = 0; i < out.size(); ++i) {
    ForwardedValue& fv = out[i];
    fv.id = static_cast<int>(i);
    std::size_t versions = vi.labels.at(fv.key.first).size() - 1;
    fv.name = versions > 1 ? fv.key.first + "@" + std::to_string(fv.key.second) : fv.key.first;
    if (fv.scalar) {
      fv.fixed_store = true;
      fv.fixed_reason = "scalar";
      continue;
    }
    try {
      RecomputeBlock block = recompute_subgraph(forward, vi, fv.key, fv.id);
      Program scratch = forward;
      for (const auto& [name, desc] : block.buffers) scratch.descriptors[name] = desc;
      for (const Node& n : block.state.graph.nodes) {
        if (!n.is_access()) fv.c += node_flops(scratch, block.state.graph, n, params);
      }
      for (const std::string& s : block.scratch) {
        const DataDescriptor& sd = block.buffers.at(s);
        if (!sd.is_scalar()) fv.R += size_bytes(sd, params);
      }
      fv.block = std::move(block);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::IrrecomputableValue) throw;
      fv.fixed_store = true;
      fv.fixed_reason = e.what();
    }
  }
  return out;
}

}  // namespace gradflow
