// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <chrono>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <set>

#include "gradflow/checkpointing.hpp"

namespace gradflow {

ILPProblem build_ilp(const std::vector<PathSequence>& sequences, const std::vector<ForwardedValue>& fvs,
                     std::int64_t limit_bytes) {
  ILPProblem p;
  for (const ForwardedValue& fv : fvs) {
    p.cost.push_back(fv.c);
    p.fixed.push_back(fv.fixed_store);
  }
  std::set<std::pair<std::int64_t, std::vector<std::pair<int, std::int64_t>>>> seen;
  for (const PathSequence& s : sequences) {
    for (const MemoryEvent& e : s.events) {
      std::vector<std::pair<int, std::int64_t>> coef(e.level.coef.begin(), e.level.coef.end());
      if (seen.insert({e.level.constant, coef}).second) p.constraints.push_back(e.level);
    }
  }
  p.limit = limit_bytes;
  p.paths = sequences.size();
  return p;
}

std::int64_t evaluate_peak(const ILPProblem& p, const std::vector<int>& v) {
  std::int64_t peak = 0;
  for (const AffineBytes& c : p.constraints) peak = std::max(peak, c.eval(v));
  return peak;
}

std::int64_t evaluate_objective(const ILPProblem& p, const std::vector<int>& v) {
  std::int64_t obj = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i]) obj += p.cost[i];
  }
  return obj;
}

namespace {

using Clock = std::chrono::steady_clock;

bool lex_greater(const std::vector<int>& a, const std::vector<int>& b) { return a > b; }

struct Incumbent {
  std::vector<int> v;
  std::int64_t objective = std::numeric_limits<std::int64_t>::max();
  bool found = false;

  void offer(const std::vector<int>& cand, std::int64_t obj) {
    if (!found || obj < objective || (obj == objective && lex_greater(cand, v))) {
      v = cand;
      objective = obj;
      found = true;
    }
  }
};

class BranchAndBound {
 public:
  explicit BranchAndBound(const ILPProblem& p) : p_(p), k_(p.cost.size()) {}

  std::int64_t nodes = 0;

  // Lower bound on the objective of any completion of the first `depth`
  // decisions in `v` (later entries are 1); nullopt when no completion fits.
  std::optional<std::int64_t> bound(const std::vector<int>& v, std::size_t depth) const {
    std::int64_t fixed_cost = 0;
    for (std::size_t i = 0; i < depth; ++i) {
      if (!v[i]) fixed_cost += p_.cost[i];
    }
    std::int64_t lb = 0;
    for (const AffineBytes& c : p_.constraints) {
      std::int64_t excess = c.eval(v) - p_.limit;
      if (excess <= 0) continue;
      std::vector<std::pair<double, std::int64_t>> items;  // cost per byte, bytes
      std::vector<std::int64_t> costs;
      for (const auto& [i, coef] : c.coef) {
        if (static_cast<std::size_t>(i) < depth || p_.fixed[i] || coef <= 0) continue;
        items.emplace_back(static_cast<double>(p_.cost[i]) / static_cast<double>(coef), coef);
        costs.push_back(p_.cost[i]);
      }
      std::vector<std::size_t> order(items.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return items[a].first < items[b].first; });
      std::int64_t remaining = excess;
      double cost = 0.0;
      for (std::size_t idx : order) {
        if (remaining <= 0) break;
        std::int64_t take = std::min(remaining, items[idx].second);
        cost += static_cast<double>(costs[idx]) * static_cast<double>(take) / static_cast<double>(items[idx].second);
        remaining -= take;
      }
      if (remaining > 0) return std::nullopt;
      std::int64_t floor_cost = static_cast<std::int64_t>(cost - 1e-6 * std::max(1.0, cost));
      lb = std::max(lb, std::max<std::int64_t>(0, floor_cost));
    }
    return fixed_cost + lb;
  }

  bool run(Incumbent& best, std::int64_t node_limit) {
    struct Item {
      std::int64_t bound;
      std::vector<int> v;
      std::size_t depth;
    };
    auto worse = [](const Item& a, const Item& b) {
      if (a.bound != b.bound) return a.bound > b.bound;
      return a.v < b.v;
    };
    std::priority_queue<Item, std::vector<Item>, decltype(worse)> open(worse);
    std::vector<int> root(k_, 1);
    auto rb = bound(root, 0);
    if (!rb) return true;
    open.push(Item{*rb, root, 0});
    while (!open.empty()) {
      Item it = open.top();
      open.pop();
      if (best.found && it.bound > best.objective) break;
      if (++nodes > node_limit) return false;
      if (it.depth == k_) {
        best.offer(it.v, evaluate_objective(p_, it.v));
        continue;
      }
      for (int val : {1, 0}) {
        if (val == 0 && p_.fixed[it.depth]) continue;
        std::vector<int> child = it.v;
        child[it.depth] = val;
        auto b = bound(child, it.depth + 1);
        if (!b) continue;
        if (best.found && *b > best.objective) continue;
        open.push(Item{*b, std::move(child), it.depth + 1});
      }
    }
    return true;
  }

 private:
  const ILPProblem& p_;
  std::size_t k_;
};

template <typename F>
void for_each_assignment(const ILPProblem& p, F&& f) {
  std::vector<int> free;
  for (std::size_t i = 0; i < p.cost.size(); ++i) {
    if (!p.fixed[i]) free.push_back(static_cast<int>(i));
  }
  std::vector<int> v(p.cost.size(), 1);
  std::uint64_t n = std::uint64_t{1} << free.size();
  for (std::uint64_t mask = 0; mask < n; ++mask) {
    for (std::size_t j = 0; j < free.size(); ++j) v[free[j]] = (mask >> j) & 1 ? 0 : 1;
    f(v);
  }
}

std::size_t free_count(const ILPProblem& p) {
  return static_cast<std::size_t>(std::count(p.fixed.begin(), p.fixed.end(), false));
}

}  // namespace

std::int64_t minimum_peak(const ILPProblem& p) {
  if (free_count(p) <= 20) {
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for_each_assignment(p, [&](const std::vector<int>& v) { best = std::min(best, evaluate_peak(p, v)); });
    return best;
  }
  std::int64_t best = evaluate_peak(p, std::vector<int>(p.cost.size(), 1));
  std::vector<int> v(p.cost.size(), 1);
  auto lower = [&](std::size_t depth) {
    std::int64_t lb = 0;
    for (const AffineBytes& c : p.constraints) {
      std::int64_t x = c.constant;
      for (const auto& [i, coef] : c.coef) {
        if (static_cast<std::size_t>(i) < depth || p.fixed[i]) {
          x += coef * v[i];
        } else {
          x += std::min<std::int64_t>(0, coef);
        }
      }
      lb = std::max(lb, x);
    }
    return lb;
  };
  std::function<void(std::size_t)> rec = [&](std::size_t d) {
    if (lower(d) >= best) return;
    if (d == v.size()) {
      best = std::min(best, evaluate_peak(p, v));
      return;
    }
    for (int val : {1, 0}) {
      if (val == 0 && p.fixed[d]) continue;
      v[d] = val;
      rec(d + 1);
    }
    v[d] = 1;
  };
  rec(0);
  return best;
}

ILPSolution solve_ilp(const ILPProblem& p) {
  auto t0 = Clock::now();
  ILPSolution sol;
  std::vector<int> all(p.cost.size(), 1);
  auto finish = [&](std::vector<int> v, const char* method) {
    sol.v = std::move(v);
    sol.objective = evaluate_objective(p, sol.v);
    sol.peak = evaluate_peak(p, sol.v);
    sol.method = method;
    sol.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    return sol;
  };
  if (evaluate_peak(p, all) <= p.limit) return finish(all, "store-all");
  Incumbent best;
  std::vector<int> greedy = all;
  while (evaluate_peak(p, greedy) > p.limit) {
    std::int64_t cur = evaluate_peak(p, greedy);
    int pick = -1;
    double score = 0.0;
    for (std::size_t i = 0; i < greedy.size(); ++i) {
      if (!greedy[i] || p.fixed[i]) continue;
      greedy[i] = 0;
      std::int64_t gain = cur - evaluate_peak(p, greedy);
      greedy[i] = 1;
      double s = static_cast<double>(gain) / static_cast<double>(p.cost[i] + 1);
      if (gain > 0 && (pick < 0 || s > score)) {
        pick = static_cast<int>(i);
        score = s;
      }
    }
    if (pick < 0) break;
    greedy[pick] = 0;
  }
  if (evaluate_peak(p, greedy) <= p.limit) best.offer(greedy, evaluate_objective(p, greedy));
  BranchAndBound bb(p);
  bool complete = bb.run(best, 4'000'000);
  sol.nodes = bb.nodes;
  if (!complete) {
    if (free_count(p) > 20) throw Error(ErrorCode::Internal, "branch and bound exceeded its node budget");
    best = Incumbent{};
    for_each_assignment(p, [&](const std::vector<int>& v) {
      ++sol.nodes;
      if (evaluate_peak(p, v) <= p.limit) best.offer(v, evaluate_objective(p, v));
    });
    if (!best.found) throw InfeasibleError(minimum_peak(p), p.limit);
    return finish(best.v, "exhaustive");
  }
  if (!best.found) throw InfeasibleError(minimum_peak(p), p.limit);
  return finish(best.v, "branch-and-bound");
}

}  // namespace gradflow
