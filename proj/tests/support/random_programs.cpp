// SPDX-License-Identifier: Apache-2.0
#include "random_programs.hpp"

#include <random>
#include <utility>

#include "gradflow/backward.hpp"
#include "gradflow/builder.hpp"

namespace gradflow::kernels {

namespace {

struct Lane {
  std::string cur;
  std::string size;
};

class Generator {
 public:
  explicit Generator(std::uint64_t seed) : rng_(seed) {}

  Program build() {
    int lanes = pick(1, 3);
    for (int l = 0; l < lanes; ++l) {
      std::string x = "X" + std::to_string(l);
      std::string n = std::to_string(pick(1, 48) * 8);
      b_.add_descriptor(x, DType::Float64, {n}, Role::Input);
      lanes_.push_back(Lane{x, n});
    }
    int stages = pick(3, 18);
    int branch_at = chance(0.35) ? pick(0, stages - 1) : -1;
    for (int s = 0; s < stages; ++s) {
      Lane& lane = lanes_[pick(0, lanes - 1)];
      if (s == branch_at) {
        branch(lane);
      } else {
        stage(lane);
      }
    }
    std::vector<ComputeIn> ins;
    std::string expr = "0";
    for (int l = 0; l < lanes; ++l) {
      std::string r = "r" + std::to_string(l);
      b_.add_descriptor(r, DType::Float64, {});
      state();
      b_.add_library_call(fresh("sum"), LibraryOp::ReduceSum, r, lanes_[l].cur);
      ins.push_back({"a" + std::to_string(l), r, {}});
      expr = "(+ " + expr + " a" + std::to_string(l) + ")";
    }
    b_.add_descriptor("O", DType::Float64, {}, Role::Output);
    state();
    b_.add_compute(fresh("total"), ins, {{"o", expr, "O", {}}});
    b_.set_dependent("O");
    for (int l = 0; l < lanes; ++l) b_.add_independent("X" + std::to_string(l));
    return b_.finish();
  }

 private:
  int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }
  std::string fresh(const std::string& base) { return base + std::to_string(counter_++); }

  void state() { b_.add_state(fresh("s")); }

  std::string array(const Lane& lane) {
    std::string y = fresh("Y");
    b_.add_descriptor(y, DType::Float64, {lane.size});
    return y;
  }

  void map(const std::string& id, const Lane& lane, const std::vector<ComputeIn>& ins, const ComputeOut& out) {
    b_.begin_map(id, {"i"}, {MapRange{SymExpr::integer(0), SymExpr::parse(lane.size), SymExpr::integer(1)}});
    b_.add_compute(id + ".t", ins, {out});
    b_.end_map();
  }

  void stage(Lane& lane) {
    int kind = pick(0, 3);
    if (kind == 3 && lane.cur[0] == 'X') kind = 1;
    if (kind == 3) {
      state();
      map(fresh("inplace"), lane, {{"a", lane.cur, {"i"}}}, {"o", "(* 0.5 a)", lane.cur, {"i"}});
      return;
    }
    std::string y = array(lane);
    state();
    if (kind == 0) {
      b_.add_library_call(fresh("sin"), LibraryOp::ElementwiseUnary, y, lane.cur, "", "(sin x)");
    } else if (kind == 1) {
      map(fresh("scale"), lane, {{"a", lane.cur, {"i"}}}, {"o", "(* 1.5 a)", y, {"i"}});
    } else {
      map(fresh("square"), lane, {{"a", lane.cur, {"i"}}}, {"o", "(* a a)", y, {"i"}});
    }
    lane.cur = y;
  }

  void branch(Lane& lane) {
    std::string y = array(lane);
    b_.begin_branch(fresh("br"));
    b_.begin_arm("(> (at X0 0) 0)");
    state();
    b_.add_library_call(fresh("sin"), LibraryOp::ElementwiseUnary, y, lane.cur, "", "(sin x)");
    b_.end_arm();
    if (chance(0.5)) {
      b_.begin_arm("");
      state();
      map(fresh("scale"), lane, {{"a", lane.cur, {"i"}}}, {"o", "(* 2 a)", y, {"i"}});
      b_.end_arm();
    }
    b_.end_branch();
    lane.cur = y;
  }

  std::mt19937_64 rng_;
  ProgramBuilder b_;
  std::vector<Lane> lanes_;
  int counter_ = 0;
};

}  // namespace

Program random_planning_program(std::uint64_t seed, int max_values) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    Program p = Generator(seed * 7919 + attempt).build();
    std::size_t k = build_backward(p).requirement.items.size();
    if (k >= 1 && static_cast<int>(k) <= max_values) return p;
  }
}

LoopHeader random_affine_header(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> init(-20, 20), stride(1, 5), coin(0, 1), tenth(0, 9);
  LoopHeader h;
  h.iterator = "i";
  h.cmp = coin(rng) ? Cmp::Lt : Cmp::Gt;
  int i0 = init(rng), bound = init(rng);
  // Moving toward the bound runs the loop; moving away is only finite when the
  // loop never starts.
  bool toward = tenth(rng) < 8;
  int s = stride(rng) * ((toward == (h.cmp == Cmp::Lt)) ? 1 : -1);
  bool runs = h.cmp == Cmp::Lt ? i0 < bound : i0 > bound;
  if (runs != toward) std::swap(i0, bound);
  h.init = SymExpr::integer(i0);
  h.bound = SymExpr::integer(bound);
  h.update = SymExpr::binary(ExprOp::Add, SymExpr::name("i"), SymExpr::integer(s));
  return h;
}

}  // namespace gradflow::kernels
