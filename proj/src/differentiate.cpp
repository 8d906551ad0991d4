// SPDX-License-Identifier: Apache-2.0
#include "gradflow/differentiate.hpp"

namespace gradflow {

namespace {

bool depends_on(const SymExpr& e, std::string_view wrt) {
  if (e.op() == ExprOp::Name) return e.name() == wrt;
  for (const SymExpr& a : e.args()) {
    if (depends_on(a, wrt)) return true;
  }
  return false;
}

SymExpr B(ExprOp op, const SymExpr& a, const SymExpr& b) { return SymExpr::binary(op, a, b); }
SymExpr U(ExprOp op, const SymExpr& a) { return SymExpr::unary(op, a); }

class Differ {
 public:
  Differ(std::string_view wrt, std::vector<std::string>* warnings) : wrt_(wrt), warnings_(warnings) {}

  SymExpr d(const SymExpr& e) {
    if (!depends_on(e, wrt_)) return SymExpr::integer(0);
    if (e.op() == ExprOp::Name) return SymExpr::integer(1);
    auto args = e.args();
    switch (e.op()) {
      case ExprOp::Add:
        return B(ExprOp::Add, d(args[0]), d(args[1]));
      case ExprOp::Sub:
        return B(ExprOp::Sub, d(args[0]), d(args[1]));
      case ExprOp::Mul:
        return B(ExprOp::Add, B(ExprOp::Mul, d(args[0]), args[1]), B(ExprOp::Mul, args[0], d(args[1])));
      case ExprOp::Div: {
        const SymExpr& a = args[0];
        const SymExpr& b = args[1];
        if (!depends_on(b, wrt_)) return B(ExprOp::Div, d(a), b);
        return B(ExprOp::Div, B(ExprOp::Sub, B(ExprOp::Mul, d(a), b), B(ExprOp::Mul, a, d(b))),
                 B(ExprOp::Mul, b, b));
      }
      case ExprOp::Pow: {
        const SymExpr& a = args[0];
        const SymExpr& b = args[1];
        if (!depends_on(b, wrt_)) {
          return B(ExprOp::Mul, B(ExprOp::Mul, b, B(ExprOp::Pow, a, B(ExprOp::Sub, b, SymExpr::integer(1)))),
                   d(a));
        }
        SymExpr inner = B(ExprOp::Mul, d(b), U(ExprOp::Log, a));
        if (depends_on(a, wrt_)) inner = B(ExprOp::Add, inner, B(ExprOp::Div, B(ExprOp::Mul, b, d(a)), a));
        return B(ExprOp::Mul, e, inner);
      }
      case ExprOp::Neg:
        return U(ExprOp::Neg, d(args[0]));
      case ExprOp::Sin:
        return B(ExprOp::Mul, U(ExprOp::Cos, args[0]), d(args[0]));
      case ExprOp::Cos:
        return B(ExprOp::Mul, U(ExprOp::Neg, U(ExprOp::Sin, args[0])), d(args[0]));
      case ExprOp::Exp:
        return B(ExprOp::Mul, e, d(args[0]));
      case ExprOp::Log:
        return B(ExprOp::Div, d(args[0]), args[0]);
      case ExprOp::Sqrt:
        return B(ExprOp::Div, d(args[0]), B(ExprOp::Mul, SymExpr::integer(2), e));
      case ExprOp::Tanh:
        return B(ExprOp::Mul, B(ExprOp::Sub, SymExpr::integer(1), B(ExprOp::Mul, e, e)), d(args[0]));
      case ExprOp::Abs:
        warn("abs", "derivative at 0 taken as 0");
        return B(ExprOp::Mul, U(ExprOp::Sign, args[0]), d(args[0]));
      case ExprOp::Min:
        warn("min", "ties select the first operand");
        return SymExpr::where(B(ExprOp::Le, args[0], args[1]), d(args[0]), d(args[1]));
      case ExprOp::Max:
        warn("max", "ties select the first operand");
        return SymExpr::where(B(ExprOp::Ge, args[0], args[1]), d(args[0]), d(args[1]));
      case ExprOp::Where:
        return SymExpr::where(args[0], d(args[1]), d(args[2]));
      case ExprOp::FloorDiv:
        warn("//", "piecewise constant, derivative taken as 0");
        return SymExpr::integer(0);
      case ExprOp::Mod:
        warn("%", "derivative undefined at jumps");
        return B(ExprOp::Sub, d(args[0]), B(ExprOp::Mul, d(args[1]), B(ExprOp::FloorDiv, args[0], args[1])));
      case ExprOp::Sign:
        warn("sign", "piecewise constant, derivative taken as 0");
        return SymExpr::integer(0);
      default:
        // comparisons and logical ops are piecewise constant
        warn(op_symbol(e.op()), "piecewise constant, derivative taken as 0");
        return SymExpr::integer(0);
    }
  }

 private:
  void warn(std::string_view op, std::string_view msg) {
    if (warnings_) warnings_->push_back("NonDifferentiableOp(" + std::string(op) + "): " + std::string(msg));
  }

  std::string_view wrt_;
  std::vector<std::string>* warnings_;
};

}  // namespace

SymExpr differentiate(const SymExpr& body, std::string_view wrt, std::vector<std::string>* warnings) {
  return simplify(Differ(wrt, warnings).d(body));
}

}  // namespace gradflow
