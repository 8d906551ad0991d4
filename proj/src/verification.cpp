// SPDX-License-Identifier: Apache-2.0
#include "gradflow/verification.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <set>

#include "gradflow/backward.hpp"

namespace gradflow {

namespace {

double dependent_sum(const ExecutionResult& r, const std::string& dependent) {
  const Array& a = r.outputs.at(dependent);
  double s = 0.0;
  for (double x : a.data) s += x;
  return s;
}

}  // namespace

FdResult finite_difference_gradient(const Program& p, const ArrayMap& inputs, const IntBindings& params,
                                    double eps) {
  Executor ex(p, params);
  FdResult out;
  ExecutionResult base = ex.forward(inputs);
  ArrayMap work = inputs;
  for (const std::string& ind : p.independents) {
    const DataDescriptor& d = p.desc(ind);
    if (d.role != Role::Input || !inputs.count(ind)) {
      throw Error(ErrorCode::InvalidArgument, "independent '" + ind + "' is not a program input");
    }
    double e = eps > 0.0 ? eps
                         : std::sqrt(d.dtype == DType::Float32 ? double{std::numeric_limits<float>::epsilon()}
                                                               : std::numeric_limits<double>::epsilon());
    out.eps = e;
    Array& x = work.at(ind);
    Array g = Array::zeros(x.shape, DType::Float64);
    std::vector<bool> excluded(static_cast<std::size_t>(x.size()), false);
    auto at = [&](double value) {
      return d.dtype == DType::Float32 ? static_cast<double>(static_cast<float>(value)) : value;
    };
    for (std::int64_t k = 0; k < x.size(); ++k) {
      double x0 = x.data[k];
      double h = e * std::max(1.0, std::abs(x0));
      double xp = at(x0 + h), xm = at(x0 - h);
      x.data[k] = xp;
      ExecutionResult rp = ex.forward(work);
      x.data[k] = xm;
      ExecutionResult rm = ex.forward(work);
      bool kink = rp.signature != base.signature || rm.signature != base.signature;
      if (!kink && base.signature != 0) {
        x.data[k] = at(x0 + 10.0 * h);
        kink = ex.forward(work).signature != base.signature;
        if (!kink) {
          x.data[k] = at(x0 - 10.0 * h);
          kink = ex.forward(work).signature != base.signature;
        }
      }
      x.data[k] = x0;
      g.data[k] = (dependent_sum(rp, p.dependent) - dependent_sum(rm, p.dependent)) / (xp - xm);
      excluded[k] = kink;
    }
    out.gradients.emplace(ind, std::move(g));
    out.excluded.emplace(ind, std::move(excluded));
  }
  return out;
}

ArrayMap reverse_mode_gradient(const Program& p, const ArrayMap& inputs, const IntBindings& params) {
  BackwardResult bwd = build_backward(p);
  StorePolicy store;
  for (const ForwardedItem& item : bwd.requirement.items) store.insert(item.key);
  ExecutionResult fwd = run_forward(p, inputs, params, store);
  ArrayMap grads = run_backward(bwd.program, fwd.tape);
  ArrayMap out;
  for (const std::string& ind : p.independents) out.emplace(ind, grads.at(bwd.gradient_of.at(ind)));
  return out;
}

GradientComparison compare_gradients(const ArrayMap& analytic, const FdResult& fd, double tolerance) {
  GradientComparison c;
  for (const auto& [name, ref] : fd.gradients) {
    const Array& g = analytic.at(name);
    if (g.shape != ref.shape) throw Error(ErrorCode::ShapeMismatch, "gradient of '" + name + "' has the wrong shape");
    const std::vector<bool>& skip = fd.excluded.at(name);
    double worst = 0.0;
    for (std::int64_t k = 0; k < ref.size(); ++k) {
      if (skip[k]) {
        ++c.excluded;
        continue;
      }
      ++c.compared;
      double err = std::abs(g.data[k] - ref.data[k]) / std::max(1.0, std::abs(ref.data[k]));
      if (!(err <= tolerance)) c.failing.emplace_back(name, k);
      if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
      worst = std::max(worst, err);
    }
    c.per_array[name] = worst;
    c.max_rel_error = std::max(c.max_rel_error, worst);
  }
  return c;
}

BruteForcePlan brute_force_plan(const std::vector<ForwardedValue>& fvs, const std::vector<PathSequence>& sequences,
                                std::int64_t limit_bytes) {
  std::vector<int> free;
  for (const ForwardedValue& fv : fvs) {
    if (!fv.fixed_store) free.push_back(fv.id);
  }
  if (free.size() > 20) throw Error(ErrorCode::InvalidArgument, "brute force is limited to 20 free values");
  BruteForcePlan best;
  bool found = false;
  std::int64_t min_peak = std::numeric_limits<std::int64_t>::max();
  std::vector<int> v(fvs.size(), 1);
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << free.size()); ++mask) {
    for (std::size_t j = 0; j < free.size(); ++j) v[free[j]] = ((mask >> j) & 1) ? 0 : 1;
    std::int64_t peak = 0;
    for (const PathSequence& s : sequences) {
      for (const MemoryEvent& e : s.events) peak = std::max(peak, e.level.eval(v));
    }
    min_peak = std::min(min_peak, peak);
    if (peak > limit_bytes) continue;
    ++best.feasible_count;
    std::int64_t obj = 0;
    for (const ForwardedValue& fv : fvs) {
      if (!v[fv.id]) obj += fv.c;
    }
    if (!found || obj < best.objective || (obj == best.objective && v > best.v)) {
      best.v = v;
      best.objective = obj;
      best.peak = peak;
      found = true;
    }
  }
  if (!found) throw InfeasibleError(min_peak, limit_bytes);
  return best;
}

namespace {

class MemorySimulator {
 public:
  MemorySimulator(const Program& fwd, const Program& bwd, const IntBindings& params, const PathChoice& path)
      : fwd_(fwd), bwd_(bwd), params_(params), path_(path), limit_(default_trip_limit()) {}

  MemoryTimeline run() {
    forward_region(fwd_.region, false);
    std::int64_t total = 0;
    for (const auto& [name, bytes] : fwd_live_) total += bytes;
    if (total) record("forward end", -total);
    backward();
    return std::move(tl_);
  }

 private:
  void record(const std::string& label, std::int64_t delta) {
    running_ += delta;
    if (running_ < 0) throw Error(ErrorCode::NegativeResident, "resident bytes below zero at '" + label + "'");
    tl_.events.push_back(TimelineEvent{label, delta, running_});
    tl_.peak = std::max(tl_.peak, running_);
    tl_.final_total = running_;
  }

  int chosen_arm(const BranchRegion& b) const {
    auto it = path_.find(b.replay_of.empty() ? b.id : b.replay_of);
    return it == path_.end() ? -1 : it->second;
  }

  void forward_region(const Region& r, bool in_loop) {
    for (const Element& el : r.elements) {
      if (const auto* s = std::get_if<State>(&el)) {
        for (const Node& n : s->graph.nodes) {
          if (n.is_access()) continue;
          for (const std::string& w : node_effects(s->graph, n).writes) forward_write(w);
        }
      } else if (const auto* l = std::get_if<LoopRegion>(&el)) {
        loops_.push_back(l);
        for (const Region& pr : l->peel) forward_region(pr, true);
        forward_region(*l->body, true);
        loops_.pop_back();
      } else if (const auto* br = std::get_if<BranchRegion>(&el)) {
        int chosen = chosen_arm(*br);
        for (int a = 0; a < static_cast<int>(br->arms.size()); ++a) {
          if (in_loop || a == chosen) forward_region(*br->arms[a].body, in_loop);
        }
      } else {
        throw Error(ErrorCode::UnsupportedLoop, "while regions are not simulated");
      }
    }
  }

  // Iterations of the innermost enclosing loop summed over all enclosing
  // iterations, by explicit enumeration.
  std::int64_t iterations_here() const {
    IntBindings b = params_;
    std::int64_t total = 0;
    std::function<void(std::size_t)> rec = [&](std::size_t k) {
      if (k == loops_.size()) {
        ++total;
        return;
      }
      const LoopHeader& h = loops_[k]->header;
      for (std::int64_t it : enumerate_header(h, b, limit_)) {
        b[h.iterator] = it;
        rec(k + 1);
      }
      b.erase(h.iterator);
    };
    rec(0);
    return total;
  }

  void forward_write(const std::string& w) {
    const DataDescriptor& d = fwd_.desc(w);
    if (d.is_scalar() || d.role == Role::Input) return;
    if (d.role == Role::StoredCopy) {
      std::int64_t bytes = size_bytes(d, params_) * iterations_here();
      stored_[w] += bytes;
      record("snapshot " + w, bytes);
      return;
    }
    if (fwd_live_.count(w)) return;
    fwd_live_[w] = size_bytes(d, params_);
    record("alloc " + w, fwd_live_[w]);
  }

  struct Group {
    std::vector<std::pair<const Graph*, const Node*>> nodes;
    std::vector<const State*> states;
  };

  void collect(const Region& r, Group& g, bool in_loop) {
    for (const Element& el : r.elements) {
      if (const auto* s = std::get_if<State>(&el)) {
        g.states.push_back(s);
        for (const Node& n : s->graph.nodes) {
          if (!n.is_access()) g.nodes.emplace_back(&s->graph, &n);
        }
      } else if (const auto* l = std::get_if<LoopRegion>(&el)) {
        for (const Region& pr : l->peel) collect(pr, g, true);
        collect(*l->body, g, true);
      } else if (const auto* br = std::get_if<BranchRegion>(&el)) {
        int chosen = chosen_arm(*br);
        for (int a = 0; a < static_cast<int>(br->arms.size()); ++a) {
          if (in_loop || a == chosen) collect(*br->arms[a].body, g, in_loop);
        }
      }
    }
  }

  void top_groups(const Region& r, std::vector<Group>& out) {
    for (const Element& el : r.elements) {
      if (const auto* br = std::get_if<BranchRegion>(&el)) {
        int chosen = chosen_arm(*br);
        if (chosen >= 0) top_groups(*br->arms[chosen].body, out);
        continue;
      }
      Group g;
      collect_one(el, g);
      out.push_back(std::move(g));
    }
  }

  void collect_one(const Element& el, Group& g) {
    if (const auto* s = std::get_if<State>(&el)) {
      g.states.push_back(s);
      for (const Node& n : s->graph.nodes) {
        if (!n.is_access()) g.nodes.emplace_back(&s->graph, &n);
      }
    } else if (const auto* l = std::get_if<LoopRegion>(&el)) {
      for (const Region& pr : l->peel) collect(pr, g, true);
      collect(*l->body, g, true);
    } else if (std::holds_alternative<WhileRegion>(el)) {
      throw Error(ErrorCode::UnsupportedLoop, "while regions are not simulated");
    }
  }

  static void reads_of(const Graph& g, const Node& n, std::set<std::string>& out) {
    for (const std::string& r : node_effects(g, n).reads) out.insert(r);
  }

  void backward() {
    std::vector<Group> groups;
    top_groups(bwd_.region, groups);
    std::map<std::string, int> last_read;
    for (int gi = 0; gi < static_cast<int>(groups.size()); ++gi) {
      std::set<std::string> reads;
      for (const auto& [g, n] : groups[gi].nodes) reads_of(*g, *n, reads);
      for (const std::string& r : reads) last_read[r] = gi;
    }
    std::map<std::string, std::int64_t> live;  // gradients and scoped values
    for (int gi = 0; gi < static_cast<int>(groups.size()); ++gi) {
      std::map<std::string, std::int64_t> state_local;
      for (const auto& [g, n] : groups[gi].nodes) {
        for (const std::string& w : node_effects(*g, *n).writes) {
          const DataDescriptor& d = bwd_.desc(w);
          if (d.is_scalar() || live.count(w) || state_local.count(w)) continue;
          std::int64_t bytes = size_bytes(d, params_);
          if (d.lifetime == Lifetime::State) {
            state_local[w] = bytes;
          } else {
            live[w] = bytes;
          }
          record("alloc " + w, bytes);
        }
      }
      for (const auto& [w, bytes] : state_local) record("free " + w, -bytes);
      for (const auto& [name, last] : last_read) {
        if (last != gi) continue;
        auto st = stored_.find(name);
        if (st != stored_.end()) {
          record("free " + name, -st->second);
          stored_.erase(st);
        }
        auto lv = live.find(name);
        if (lv != live.end() && bwd_.desc(name).role != Role::Gradient) {
          record("free " + name, -lv->second);
          live.erase(lv);
        }
      }
    }
    for (const auto& [name, bytes] : stored_) record("free " + name, -bytes);
    stored_.clear();
    for (const auto& [name, bytes] : live) {
      if (bwd_.desc(name).role != Role::Gradient) record("free " + name, -bytes);
    }
    std::int64_t grads = 0;
    for (const auto& [name, bytes] : live) {
      if (bwd_.desc(name).role == Role::Gradient) grads += bytes;
    }
    if (grads) record("free gradients", -grads);
  }

  const Program& fwd_;
  const Program& bwd_;
  const IntBindings& params_;
  const PathChoice& path_;
  std::int64_t limit_;
  std::vector<const LoopRegion*> loops_;
  std::map<std::string, std::int64_t> fwd_live_;
  std::map<std::string, std::int64_t> stored_;
  std::int64_t running_ = 0;
  MemoryTimeline tl_;
};

}  // namespace

MemoryTimeline simulate_memory(const Program& forward, const Program& backward, const IntBindings& params,
                               const PathChoice& path) {
  return MemorySimulator(forward, backward, params, path).run();
}

}  // namespace gradflow
