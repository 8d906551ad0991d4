// SPDX-License-Identifier: Apache-2.0
//
// Symbolic scalar expressions. Used for shapes, loop headers, memlet subsets,
// tasklet bodies and branch conditions. The textual form is a prefix
// s-expression, e.g. `(* 2 (sin x))` or `(> (at A 0 0) 0)`.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradflow/error.hpp"

namespace gradflow {

enum class ExprOp : std::uint8_t {
  Const,
  Name,
  // binary
  Add,
  Sub,
  Mul,
  Div,
  FloorDiv,
  Mod,
  Min,
  Max,
  Pow,
  Lt,
  Le,
  Gt,
  Ge,
  Eq,
  Ne,
  And,
  Or,
  // unary
  Neg,
  Sin,
  Cos,
  Exp,
  Log,
  Sqrt,
  Tanh,
  Abs,
  Sign,
  Not,
  // other
  Where,
  At,
};

int op_arity(ExprOp op);  // -1 for variadic (At)
std::string_view op_symbol(ExprOp op);
std::optional<ExprOp> op_from_symbol(std::string_view sym);
bool is_comparison(ExprOp op);

class SymExpr {
 public:
  SymExpr();  // integer 0

  static SymExpr integer(std::int64_t v);
  static SymExpr real(double v);
  static SymExpr name(std::string n);
  static SymExpr unary(ExprOp op, SymExpr a);
  static SymExpr binary(ExprOp op, SymExpr a, SymExpr b);
  static SymExpr where(SymExpr c, SymExpr a, SymExpr b);
  static SymExpr at(std::string array, std::vector<SymExpr> indices);

  /// Parses the prefix form. Throws SyntaxError with the byte offset on
  /// malformed input and names unknown operators.
  static SymExpr parse(std::string_view text);

  ExprOp op() const noexcept;
  double value() const noexcept;
  bool is_integer() const noexcept;
  const std::string& name() const noexcept;
  std::span<const SymExpr> args() const noexcept;

  bool is_const() const noexcept { return op() == ExprOp::Const; }
  bool is_const(double v) const noexcept { return is_const() && value() == v; }
  bool is_name(std::string_view n) const noexcept { return op() == ExprOp::Name && name() == n; }

  std::string str() const;

  friend bool operator==(const SymExpr& a, const SymExpr& b);
  friend bool operator!=(const SymExpr& a, const SymExpr& b) { return !(a == b); }

 private:
  struct Node;
  static std::shared_ptr<Node> make_node(ExprOp op);
  explicit SymExpr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const Node> node_;
};

SymExpr operator+(const SymExpr& a, const SymExpr& b);
SymExpr operator-(const SymExpr& a, const SymExpr& b);
SymExpr operator*(const SymExpr& a, const SymExpr& b);
SymExpr operator-(const SymExpr& a);

using Bindings = std::map<std::string, double, std::less<>>;
using IntBindings = std::map<std::string, std::int64_t, std::less<>>;

/// Free scalar names. Array names referenced through `at` are not included.
std::set<std::string> free_names(const SymExpr& e);
/// Arrays referenced through `at`.
std::set<std::string> arrays_read(const SymExpr& e);

double eval(const SymExpr& e, const Bindings& bindings);
std::int64_t eval_int(const SymExpr& e, const IntBindings& bindings);

SymExpr simplify(const SymExpr& e);
SymExpr substitute(const SymExpr& e, const std::map<std::string, SymExpr, std::less<>>& repl);

/// Number of scalar operations performed by one evaluation.
std::int64_t op_count(const SymExpr& e);

/// Affine decomposition: e == constant + sum(coef * name). Only integer
/// coefficients are accepted.
struct AffineForm {
  std::int64_t constant = 0;
  std::vector<std::pair<std::string, std::int64_t>> terms;
};
std::optional<AffineForm> as_affine(const SymExpr& e);

namespace detail {

[[noreturn]] void throw_domain(std::string_view what);
[[noreturn]] void throw_unbound(std::string_view name);

inline double floor_div(double a, double b) {
  if (b == 0.0) throw_domain("floor division by zero");
  return std::floor(a / b);
}

inline std::int64_t floor_div_int(std::int64_t a, std::int64_t b) {
  if (b == 0) throw_domain("integer division by zero");
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline std::int64_t mod_int(std::int64_t a, std::int64_t b) {
  if (b == 0) throw_domain("modulo by zero");
  std::int64_t r = a % b;
  if (r != 0 && ((r < 0) != (b < 0))) r += b;
  return r;
}

double apply_real(ExprOp op, double a, double b);
double apply_real_unary(ExprOp op, double a);
std::int64_t apply_int(ExprOp op, std::int64_t a, std::int64_t b);
std::int64_t to_exact_int(double v);

}  // namespace detail

/// Generic evaluator. `lookup(name)` returns the value of a free name (or
/// std::nullopt when unbound); `at(array, indices)` reads an array element.
/// T is double (IEEE semantics) or std::int64_t (integer semantics: `/` is
/// floor division).
template <typename T, typename Lookup, typename At>
T evaluate_as(const SymExpr& e, Lookup&& lookup, At&& at) {
  switch (e.op()) {
    case ExprOp::Const:
      if constexpr (std::is_same_v<T, double>) {
        return e.value();
      } else {
        return detail::to_exact_int(e.value());
      }
    case ExprOp::Name: {
      std::optional<T> v = lookup(e.name());
      if (!v) detail::throw_unbound(e.name());
      return *v;
    }
    case ExprOp::Where: {
      T c = evaluate_as<T>(e.args()[0], lookup, at);
      return c != T(0) ? evaluate_as<T>(e.args()[1], lookup, at)
                       : evaluate_as<T>(e.args()[2], lookup, at);
    }
    case ExprOp::At: {
      std::vector<std::int64_t> idx;
      idx.reserve(e.args().size());
      for (const SymExpr& a : e.args()) {
        idx.push_back(evaluate_as<std::int64_t>(a, lookup, at));
      }
      return static_cast<T>(at(e.name(), std::span<const std::int64_t>(idx)));
    }
    default:
      break;
  }
  int arity = op_arity(e.op());
  T a = evaluate_as<T>(e.args()[0], lookup, at);
  if (arity == 1) {
    if constexpr (std::is_same_v<T, double>) {
      return detail::apply_real_unary(e.op(), a);
    } else {
      if (e.op() == ExprOp::Neg) return -a;
      if (e.op() == ExprOp::Abs) return a < 0 ? -a : a;
      if (e.op() == ExprOp::Sign) return (a > 0) - (a < 0);
      if (e.op() == ExprOp::Not) return a == 0 ? 1 : 0;
      return detail::to_exact_int(detail::apply_real_unary(e.op(), static_cast<double>(a)));
    }
  }
  T b = evaluate_as<T>(e.args()[1], lookup, at);
  if constexpr (std::is_same_v<T, double>) {
    return detail::apply_real(e.op(), a, b);
  } else {
    return detail::apply_int(e.op(), a, b);
  }
}

}  // namespace gradflow
