// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <set>

#include "gradflow/checkpointing.hpp"

namespace gradflow {

std::int64_t AffineBytes::eval(const std::vector<int>& v) const {
  std::int64_t r = constant;
  for (const auto& [i, c] : coef) r += c * v.at(i);
  return r;
}

AffineBytes& AffineBytes::operator+=(const AffineBytes& o) {
  constant += o.constant;
  for (const auto& [i, c] : o.coef) {
    std::int64_t& x = coef[i];
    x += c;
    if (x == 0) coef.erase(i);
  }
  return *this;
}

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

AffineBytes constant(std::int64_t c) { return AffineBytes{c, {}}; }

// Descriptor and version of every memlet read of a compute node (map bodies
// included).
void node_reads(const Graph& g, const Node& n, std::vector<ValueKey>& out) {
  if (const MapNode* m = n.map()) {
    for (const Node& inner : m->body->nodes) {
      if (!inner.is_access()) node_reads(*m->body, inner, out);
    }
    return;
  }
  for (const Memlet& e : g.edges) {
    if (e.dst == n.id) out.emplace_back(memlet_data(g, e), e.version.value_or(0));
  }
}

struct NodeRef {
  const Graph* graph;
  const Node* node;
};

struct Group {
  int top = 0;
  std::vector<NodeRef> nodes;
};

class SymbolicWalker {
 public:
  SymbolicWalker(const Program& fwd, const Program& bwd, const std::vector<ForwardedValue>& fvs,
                 const IntBindings& params, const PathChoice& path)
      : fwd_(fwd), bwd_(bwd), fvs_(fvs), params_(params), path_(path) {
    for (const ForwardedValue& fv : fvs_) {
      if (!fv.scalar) anchors_[point_key(fv.anchor)].push_back(fv.id);
    }
    for (auto& [k, ids] : anchors_) std::sort(ids.begin(), ids.end());
    stored_.assign(fvs_.size(), false);
  }

  PathSequence run() {
    PathSequence seq;
    seq.name = path_name(path_);
    seq.choice = path_;
    out_ = &seq;
    std::vector<Step> steps;
    forward_region(fwd_.region, steps, false);
    std::int64_t fwd_bytes = 0;
    for (const std::string& d : fwd_alloc_) fwd_bytes += size_bytes(fwd_.desc(d), params_);
    if (fwd_bytes) emit("free forward arrays", constant(-fwd_bytes));
    backward();
    return seq;
  }

 private:
  int arm_of(const BranchRegion& b) const {
    auto it = path_.find(b.replay_of.empty() ? b.id : b.replay_of);
    return it == path_.end() ? -1 : it->second;
  }

  void emit(const std::string& label, const AffineBytes& delta) {
    level_ += delta;
    out_->events.push_back(MemoryEvent{label, delta, level_});
  }

  void stores_at(const ProgramPoint& pt) {
    auto it = anchors_.find(point_key(pt));
    if (it == anchors_.end()) return;
    for (int id : it->second) {
      const ForwardedValue& fv = fvs_[id];
      AffineBytes d;
      d.coef[id] = fv.S * fv.exec_count;
      stored_[id] = true;
      emit("store " + fv.name, d);
    }
  }

  void forward_region(const Region& r, std::vector<Step>& steps, bool in_loop) {
    for (int e = 0; e < static_cast<int>(r.elements.size()); ++e) {
      stores_at(ProgramPoint{steps, e, -1});
      const Element& el = r.elements[e];
      if (const auto* s = std::get_if<State>(&el)) {
        for (int n = 0; n < static_cast<int>(s->graph.nodes.size()); ++n) {
          const Node& node = s->graph.nodes[n];
          if (node.is_access()) continue;
          stores_at(ProgramPoint{steps, e, n});
          for (const std::string& w : node_effects(s->graph, node).writes) {
            const DataDescriptor& d = fwd_.desc(w);
            if (d.is_scalar() || d.role == Role::Input || fwd_alloc_.count(w)) continue;
            fwd_alloc_.insert(w);
            emit("alloc " + w, constant(size_bytes(d, params_)));
          }
        }
      } else if (const auto* l = std::get_if<LoopRegion>(&el)) {
        for (int j = 0; j < static_cast<int>(l->peel.size()); ++j) {
          steps.push_back({e, 1 + j});
          forward_region(l->peel[j], steps, true);
          steps.pop_back();
        }
        steps.push_back({e, 0});
        forward_region(*l->body, steps, true);
        steps.pop_back();
      } else if (const auto* b = std::get_if<BranchRegion>(&el)) {
        for (int a = 0; a < static_cast<int>(b->arms.size()); ++a) {
          if (!in_loop && a != arm_of(*b)) continue;
          steps.push_back({e, a});
          forward_region(*b->arms[a].body, steps, in_loop);
          steps.pop_back();
        }
      } else {
        throw Error(ErrorCode::UnsupportedLoop, "while regions have no memory model");
      }
    }
  }

  void collect_nodes(const Region& r, bool in_loop, std::vector<NodeRef>& out) {
    for (const Element& el : r.elements) {
      if (const auto* s = std::get_if<State>(&el)) {
        for (const Node& n : s->graph.nodes) {
          if (!n.is_access()) out.push_back(NodeRef{&s->graph, &n});
        }
      } else if (const auto* l = std::get_if<LoopRegion>(&el)) {
        for (const Region& pr : l->peel) collect_nodes(pr, true, out);
        collect_nodes(*l->body, true, out);
      } else if (const auto* b = std::get_if<BranchRegion>(&el)) {
        for (int a = 0; a < static_cast<int>(b->arms.size()); ++a) {
          if (in_loop || a == arm_of(*b)) collect_nodes(*b->arms[a].body, in_loop, out);
        }
      }
    }
  }

  void groups_of(const Region& r, int top, std::vector<Group>& out) {
    for (int e = 0; e < static_cast<int>(r.elements.size()); ++e) {
      const Element& el = r.elements[e];
      int t = top < 0 ? e : top;
      if (const auto* b = std::get_if<BranchRegion>(&el)) {
        int a = arm_of(*b);
        if (a >= 0) groups_of(*b->arms[a].body, t, out);
        continue;
      }
      Group g;
      g.top = t;
      if (const auto* s = std::get_if<State>(&el)) {
        for (const Node& n : s->graph.nodes) {
          if (!n.is_access()) g.nodes.push_back(NodeRef{&s->graph, &n});
        }
      } else if (const auto* l = std::get_if<LoopRegion>(&el)) {
        for (const Region& pr : l->peel) collect_nodes(pr, true, g.nodes);
        collect_nodes(*l->body, true, g.nodes);
      }
      out.push_back(std::move(g));
    }
  }

  std::set<int> reads_of(const Group& g) const {
    std::set<int> ids;
    for (const NodeRef& nr : g.nodes) {
      std::vector<ValueKey> keys;
      node_reads(*nr.graph, *nr.node, keys);
      for (const ValueKey& k : keys) {
        for (const ForwardedValue& fv : fvs_) {
          if (!fv.scalar && fv.key == k) ids.insert(fv.id);
        }
      }
    }
    return ids;
  }

  void recompute_before(int top) {
    for (const ForwardedValue& fv : fvs_) {
      if (fv.scalar || !fv.used || fv.use_point.element != top) continue;
      AffineBytes up = constant(fv.R + fv.S);
      up.coef[fv.id] = -(fv.R + fv.S);
      emit("recompute " + fv.name, up);
      if (fv.R) {
        AffineBytes down = constant(-fv.R);
        down.coef[fv.id] = fv.R;
        emit("release scratch of " + fv.name, down);
      }
    }
  }

  void release(const ForwardedValue& fv) {
    AffineBytes d;
    if (stored_[fv.id]) d.coef[fv.id] -= fv.S * fv.exec_count;
    if (fv.used) {
      d.constant -= fv.S;
      d.coef[fv.id] += fv.S;
    }
    for (auto it = d.coef.begin(); it != d.coef.end();) it = it->second == 0 ? d.coef.erase(it) : std::next(it);
    if (d.constant || !d.coef.empty()) emit("free " + fv.name, d);
  }

  void backward() {
    std::vector<Group> groups;
    groups_of(bwd_.region, -1, groups);
    std::vector<int> last(fvs_.size(), -1);
    for (int g = 0; g < static_cast<int>(groups.size()); ++g) {
      for (int id : reads_of(groups[g])) last[id] = g;
    }
    std::vector<bool> released(fvs_.size(), false);
    std::set<std::string> grads;
    int next_top = 0;
    for (int g = 0; g < static_cast<int>(groups.size()); ++g) {
      for (; next_top <= groups[g].top; ++next_top) recompute_before(next_top);
      for (const NodeRef& nr : groups[g].nodes) {
        for (const std::string& w : node_effects(*nr.graph, *nr.node).writes) {
          const DataDescriptor& d = bwd_.desc(w);
          if (d.role != Role::Gradient || d.is_scalar() || grads.count(w)) continue;
          grads.insert(w);
          emit("alloc " + w, constant(size_bytes(d, params_)));
        }
      }
      for (const ForwardedValue& fv : fvs_) {
        if (!fv.scalar && last[fv.id] == g) {
          release(fv);
          released[fv.id] = true;
        }
      }
    }
    for (; next_top < static_cast<int>(bwd_.region.elements.size()); ++next_top) recompute_before(next_top);
    for (const ForwardedValue& fv : fvs_) {
      if (!fv.scalar && !released[fv.id]) release(fv);
    }
    std::int64_t gb = 0;
    for (const std::string& g : grads) gb += size_bytes(bwd_.desc(g), params_);
    if (gb) emit("free gradients", constant(-gb));
  }

  const Program& fwd_;
  const Program& bwd_;
  const std::vector<ForwardedValue>& fvs_;
  const IntBindings& params_;
  const PathChoice& path_;
  std::map<std::vector<int>, std::vector<int>> anchors_;
  std::vector<bool> stored_;
  std::set<std::string> fwd_alloc_;
  AffineBytes level_;
  PathSequence* out_ = nullptr;
};

}  // namespace

std::vector<PathSequence> build_memory_sequences(const Program& forward, const Program& backward,
                                                 const std::vector<ForwardedValue>& fvs, const IntBindings& params) {
  std::vector<PathSequence> out;
  for (const PathChoice& c : enumerate_paths(forward)) {
    out.push_back(SymbolicWalker(forward, backward, fvs, params, c).run());
  }
  return out;
}

}  // namespace gradflow
