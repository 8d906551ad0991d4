// SPDX-License-Identifier: Apache-2.0
#include "gradflow/symexpr.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <functional>
#include <limits>

namespace gradflow {

struct SymExpr::Node {
  ExprOp op = ExprOp::Const;
  double value = 0.0;
  bool integer = true;
  std::string name;
  std::vector<SymExpr> args;
};

namespace {

struct OpInfo {
  ExprOp op;
  std::string_view symbol;
  int arity;
};

constexpr std::array<OpInfo, 31> kOps{{
    {ExprOp::Add, "+", 2},     {ExprOp::Sub, "-", 2},     {ExprOp::Mul, "*", 2},
    {ExprOp::Div, "/", 2},     {ExprOp::FloorDiv, "//", 2}, {ExprOp::Mod, "%", 2},
    {ExprOp::Min, "min", 2},   {ExprOp::Max, "max", 2},   {ExprOp::Pow, "pow", 2},
    {ExprOp::Lt, "<", 2},      {ExprOp::Le, "<=", 2},     {ExprOp::Gt, ">", 2},
    {ExprOp::Ge, ">=", 2},     {ExprOp::Eq, "==", 2},     {ExprOp::Ne, "!=", 2},
    {ExprOp::And, "and", 2},   {ExprOp::Or, "or", 2},     {ExprOp::Neg, "neg", 1},
    {ExprOp::Sin, "sin", 1},   {ExprOp::Cos, "cos", 1},   {ExprOp::Exp, "exp", 1},
    {ExprOp::Log, "log", 1},   {ExprOp::Sqrt, "sqrt", 1}, {ExprOp::Tanh, "tanh", 1},
    {ExprOp::Abs, "abs", 1},   {ExprOp::Sign, "sign", 1}, {ExprOp::Not, "not", 1},
    {ExprOp::Where, "where", 3}, {ExprOp::At, "at", -1},  {ExprOp::Const, "", 0},
    {ExprOp::Name, "", 0},
}};

const OpInfo& info(ExprOp op) {
  for (const OpInfo& i : kOps) {
    if (i.op == op) return i;
  }
  throw Error(ErrorCode::Internal, "unknown expression op");
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

bool is_name_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_name_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  SymExpr parse_all() {
    SymExpr e = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) throw SyntaxError(pos_, "trailing characters");
    return e;
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string_view read_atom() {
    std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
           text_[pos_] != '(' && text_[pos_] != ')') {
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  SymExpr parse_expr() {
    skip_ws();
    if (pos_ >= text_.size()) throw SyntaxError(pos_, "unexpected end of expression");
    if (text_[pos_] == ')') throw SyntaxError(pos_, "unexpected ')'");
    if (text_[pos_] == '(') return parse_list();
    std::size_t start = pos_;
    std::string_view atom = read_atom();
    return atom_to_expr(atom, start);
  }

  SymExpr atom_to_expr(std::string_view atom, std::size_t start) {
    if (atom.empty()) throw SyntaxError(start, "empty atom");
    if (is_name_start(atom[0])) {
      if (atom == "inf" || atom == "nan") {
        return SymExpr::real(atom == "inf" ? std::numeric_limits<double>::infinity()
                                           : std::numeric_limits<double>::quiet_NaN());
      }
      for (char c : atom) {
        if (!is_name_char(c)) throw SyntaxError(start, "invalid name '" + std::string(atom) + "'");
      }
      return SymExpr::name(std::string(atom));
    }
    bool real = atom.find_first_of(".eE") != std::string_view::npos;
    if (!real) {
      std::int64_t v = 0;
      auto res = std::from_chars(atom.data(), atom.data() + atom.size(), v);
      if (res.ec == std::errc() && res.ptr == atom.data() + atom.size()) return SymExpr::integer(v);
    }
    double d = 0;
    auto res = std::from_chars(atom.data(), atom.data() + atom.size(), d);
    if (res.ec != std::errc() || res.ptr != atom.data() + atom.size()) {
      throw SyntaxError(start, "invalid token '" + std::string(atom) + "'");
    }
    return SymExpr::real(d);
  }

  SymExpr parse_list() {
    std::size_t open = pos_;
    ++pos_;
    skip_ws();
    std::size_t op_pos = pos_;
    std::string_view sym = read_atom();
    if (sym.empty()) throw SyntaxError(op_pos, "expected operator after '('");
    std::optional<ExprOp> op = op_from_symbol(sym);
    if (!op) throw SyntaxError(op_pos, "unknown operator '" + std::string(sym) + "'");
    if (*op == ExprOp::At) {
      skip_ws();
      std::size_t name_pos = pos_;
      std::string_view arr = read_atom();
      if (arr.empty() || !is_name_start(arr[0])) throw SyntaxError(name_pos, "'at' expects an array name");
      std::vector<SymExpr> idx;
      while (true) {
        skip_ws();
        if (pos_ >= text_.size()) throw SyntaxError(open, "unterminated '('");
        if (text_[pos_] == ')') break;
        idx.push_back(parse_expr());
      }
      ++pos_;
      return SymExpr::at(std::string(arr), std::move(idx));
    }
    std::vector<SymExpr> args;
    while (true) {
      skip_ws();
      if (pos_ >= text_.size()) throw SyntaxError(open, "unterminated '('");
      if (text_[pos_] == ')') break;
      args.push_back(parse_expr());
    }
    ++pos_;
    int arity = op_arity(*op);
    if ((*op == ExprOp::Add || *op == ExprOp::Mul) && args.size() >= 2) {
      SymExpr acc = args[0];
      for (std::size_t i = 1; i < args.size(); ++i) acc = SymExpr::binary(*op, acc, args[i]);
      return acc;
    }
    if (*op == ExprOp::Sub && args.size() == 1) return SymExpr::unary(ExprOp::Neg, args[0]);
    if (static_cast<int>(args.size()) != arity) {
      throw SyntaxError(open, "operator '" + std::string(sym) + "' expects " + std::to_string(arity) +
                                  " argument(s), got " + std::to_string(args.size()));
    }
    if (arity == 1) return SymExpr::unary(*op, args[0]);
    if (arity == 2) return SymExpr::binary(*op, args[0], args[1]);
    return SymExpr::where(args[0], args[1], args[2]);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

void collect(const SymExpr& e, std::set<std::string>& names, std::set<std::string>& arrays) {
  if (e.op() == ExprOp::Name) names.insert(e.name());
  if (e.op() == ExprOp::At) arrays.insert(e.name());
  for (const SymExpr& a : e.args()) collect(a, names, arrays);
}

bool int_result(ExprOp op) {
  switch (op) {
    case ExprOp::Add:
    case ExprOp::Sub:
    case ExprOp::Mul:
    case ExprOp::FloorDiv:
    case ExprOp::Mod:
    case ExprOp::Min:
    case ExprOp::Max:
    case ExprOp::Neg:
    case ExprOp::Abs:
    case ExprOp::Sign:
      return true;
    default:
      return is_comparison(op) || op == ExprOp::And || op == ExprOp::Or || op == ExprOp::Not;
  }
}

std::optional<SymExpr> fold(ExprOp op, const std::vector<SymExpr>& a) {
  for (const SymExpr& x : a) {
    if (!x.is_const()) return std::nullopt;
  }
  try {
    bool all_int = std::all_of(a.begin(), a.end(), [](const SymExpr& x) { return x.is_integer(); });
    if (all_int && int_result(op)) {
      std::int64_t r = a.size() == 1
                           ? eval_int(SymExpr::unary(op, a[0]), {})
                           : detail::apply_int(op, detail::to_exact_int(a[0].value()),
                                               detail::to_exact_int(a[1].value()));
      return SymExpr::integer(r);
    }
    double r = a.size() == 1 ? detail::apply_real_unary(op, a[0].value())
                             : detail::apply_real(op, a[0].value(), a[1].value());
    if (!std::isfinite(r)) return std::nullopt;
    if (all_int && op == ExprOp::Div) {
      if (r != std::floor(r)) return std::nullopt;
      return SymExpr::integer(static_cast<std::int64_t>(r));
    }
    return SymExpr::real(r);
  } catch (const Error&) {
    return std::nullopt;
  }
}

SymExpr simplify_node(ExprOp op, std::vector<SymExpr> a) {
  if (auto f = fold(op, a)) return *f;
  auto zero = [](const SymExpr& x) { return x.is_const(0.0); };
  auto one = [](const SymExpr& x) { return x.is_const(1.0); };
  switch (op) {
    case ExprOp::Add:
      if (zero(a[0])) return a[1];
      if (zero(a[1])) return a[0];
      if (a[0] == a[1]) return simplify_node(ExprOp::Mul, {SymExpr::integer(2), a[0]});
      if (a[1].op() == ExprOp::Neg) return simplify_node(ExprOp::Sub, {a[0], a[1].args()[0]});
      break;
    case ExprOp::Sub:
      if (zero(a[1])) return a[0];
      if (zero(a[0])) return simplify_node(ExprOp::Neg, {a[1]});
      if (a[0] == a[1]) return SymExpr::integer(0);
      break;
    case ExprOp::Mul:
      if (zero(a[0]) || zero(a[1])) return SymExpr::integer(0);
      if (one(a[0])) return a[1];
      if (one(a[1])) return a[0];
      if (a[0].is_const(-1.0)) return simplify_node(ExprOp::Neg, {a[1]});
      if (a[1].is_const(-1.0)) return simplify_node(ExprOp::Neg, {a[0]});
      if (a[1].is_const() && !a[0].is_const()) std::swap(a[0], a[1]);
      if (a[0].is_const() && a[1].op() == ExprOp::Mul && a[1].args()[0].is_const()) {
        SymExpr c = simplify_node(ExprOp::Mul, {a[0], a[1].args()[0]});
        return simplify_node(ExprOp::Mul, {c, a[1].args()[1]});
      }
      if (a[0].op() == ExprOp::Neg && a[1].op() == ExprOp::Neg) {
        return simplify_node(ExprOp::Mul, {a[0].args()[0], a[1].args()[0]});
      }
      break;
    case ExprOp::Div:
      if (one(a[1])) return a[0];
      if (zero(a[0]) && !zero(a[1])) return SymExpr::integer(0);
      break;
    case ExprOp::Pow:
      if (one(a[1])) return a[0];
      if (zero(a[1])) return SymExpr::integer(1);
      break;
    case ExprOp::Neg:
      if (a[0].op() == ExprOp::Neg) return a[0].args()[0];
      break;
    default:
      break;
  }
  if (op == ExprOp::Where) {
    if (a[0].is_const()) return a[0].value() != 0.0 ? a[1] : a[2];
    if (a[1] == a[2]) return a[1];
    return SymExpr::where(a[0], a[1], a[2]);
  }
  if (a.size() == 1) return SymExpr::unary(op, a[0]);
  return SymExpr::binary(op, a[0], a[1]);
}

bool add_affine(AffineForm& out, const AffineForm& in, std::int64_t scale) {
  out.constant += in.constant * scale;
  for (const auto& [n, c] : in.terms) {
    auto it = std::find_if(out.terms.begin(), out.terms.end(), [&](const auto& t) { return t.first == n; });
    if (it == out.terms.end()) {
      out.terms.emplace_back(n, c * scale);
    } else {
      it->second += c * scale;
    }
  }
  std::erase_if(out.terms, [](const auto& t) { return t.second == 0; });
  return true;
}

}  // namespace

int op_arity(ExprOp op) { return info(op).arity; }
std::string_view op_symbol(ExprOp op) { return info(op).symbol; }

std::optional<ExprOp> op_from_symbol(std::string_view sym) {
  for (const OpInfo& i : kOps) {
    if (!i.symbol.empty() && i.symbol == sym) return i.op;
  }
  return std::nullopt;
}

bool is_comparison(ExprOp op) {
  return op == ExprOp::Lt || op == ExprOp::Le || op == ExprOp::Gt || op == ExprOp::Ge ||
         op == ExprOp::Eq || op == ExprOp::Ne;
}

std::shared_ptr<SymExpr::Node> SymExpr::make_node(ExprOp op) {
  auto n = std::make_shared<Node>();
  n->op = op;
  return n;
}

SymExpr::SymExpr() : node_(make_node(ExprOp::Const)) {}

SymExpr SymExpr::integer(std::int64_t v) {
  auto n = make_node(ExprOp::Const);
  n->value = static_cast<double>(v);
  n->integer = true;
  return SymExpr(std::move(n));
}

SymExpr SymExpr::real(double v) {
  auto n = make_node(ExprOp::Const);
  n->value = v;
  n->integer = false;
  return SymExpr(std::move(n));
}

SymExpr SymExpr::name(std::string nm) {
  auto n = make_node(ExprOp::Name);
  n->name = std::move(nm);
  return SymExpr(std::move(n));
}

SymExpr SymExpr::unary(ExprOp op, SymExpr a) {
  if (op_arity(op) != 1) throw Error(ErrorCode::Internal, "not a unary op");
  auto n = make_node(op);
  n->args.push_back(std::move(a));
  return SymExpr(std::move(n));
}

SymExpr SymExpr::binary(ExprOp op, SymExpr a, SymExpr b) {
  if (op_arity(op) != 2) throw Error(ErrorCode::Internal, "not a binary op");
  auto n = make_node(op);
  n->args.push_back(std::move(a));
  n->args.push_back(std::move(b));
  return SymExpr(std::move(n));
}

SymExpr SymExpr::where(SymExpr c, SymExpr a, SymExpr b) {
  auto n = make_node(ExprOp::Where);
  n->args = {std::move(c), std::move(a), std::move(b)};
  return SymExpr(std::move(n));
}

SymExpr SymExpr::at(std::string array, std::vector<SymExpr> indices) {
  auto n = make_node(ExprOp::At);
  n->name = std::move(array);
  n->args = std::move(indices);
  return SymExpr(std::move(n));
}

SymExpr SymExpr::parse(std::string_view text) { return Parser(text).parse_all(); }

ExprOp SymExpr::op() const noexcept { return node_->op; }
double SymExpr::value() const noexcept { return node_->value; }
bool SymExpr::is_integer() const noexcept { return node_->op == ExprOp::Const && node_->integer; }
const std::string& SymExpr::name() const noexcept { return node_->name; }
std::span<const SymExpr> SymExpr::args() const noexcept { return node_->args; }

std::string SymExpr::str() const {
  switch (op()) {
    case ExprOp::Const:
      if (node_->integer) return std::to_string(static_cast<std::int64_t>(node_->value));
      return format_real(node_->value);
    case ExprOp::Name:
      return node_->name;
    case ExprOp::At: {
      std::string s = "(at " + node_->name;
      for (const SymExpr& a : args()) s += " " + a.str();
      return s + ")";
    }
    default: {
      std::string s = "(" + std::string(op_symbol(op()));
      for (const SymExpr& a : args()) s += " " + a.str();
      return s + ")";
    }
  }
}

bool operator==(const SymExpr& a, const SymExpr& b) {
  if (a.node_ == b.node_) return true;
  if (a.op() != b.op()) return false;
  if (a.op() == ExprOp::Const) {
    if (a.is_integer() != b.is_integer()) return false;
    return a.value() == b.value() || (std::isnan(a.value()) && std::isnan(b.value()));
  }
  if (a.name() != b.name()) return false;
  if (a.args().size() != b.args().size()) return false;
  for (std::size_t i = 0; i < a.args().size(); ++i) {
    if (a.args()[i] != b.args()[i]) return false;
  }
  return true;
}

SymExpr operator+(const SymExpr& a, const SymExpr& b) { return SymExpr::binary(ExprOp::Add, a, b); }
SymExpr operator-(const SymExpr& a, const SymExpr& b) { return SymExpr::binary(ExprOp::Sub, a, b); }
SymExpr operator*(const SymExpr& a, const SymExpr& b) { return SymExpr::binary(ExprOp::Mul, a, b); }
SymExpr operator-(const SymExpr& a) { return SymExpr::unary(ExprOp::Neg, a); }

std::set<std::string> free_names(const SymExpr& e) {
  std::set<std::string> names, arrays;
  collect(e, names, arrays);
  return names;
}

std::set<std::string> arrays_read(const SymExpr& e) {
  std::set<std::string> names, arrays;
  collect(e, names, arrays);
  return arrays;
}

double eval(const SymExpr& e, const Bindings& bindings) {
  return evaluate_as<double>(
      e,
      [&](const std::string& n) -> std::optional<double> {
        auto it = bindings.find(n);
        if (it == bindings.end()) return std::nullopt;
        return it->second;
      },
      [](const std::string& arr, std::span<const std::int64_t>) -> double {
        throw Error(ErrorCode::UnboundName, "array '" + arr + "' is not available here");
      });
}

std::int64_t eval_int(const SymExpr& e, const IntBindings& bindings) {
  return evaluate_as<std::int64_t>(
      e,
      [&](const std::string& n) -> std::optional<std::int64_t> {
        auto it = bindings.find(n);
        if (it == bindings.end()) return std::nullopt;
        return it->second;
      },
      [](const std::string& arr, std::span<const std::int64_t>) -> double {
        throw Error(ErrorCode::UnboundName, "array '" + arr + "' is not available here");
      });
}

SymExpr simplify(const SymExpr& e) {
  if (e.op() == ExprOp::Const || e.op() == ExprOp::Name) return e;
  std::vector<SymExpr> args;
  args.reserve(e.args().size());
  for (const SymExpr& a : e.args()) args.push_back(simplify(a));
  if (e.op() == ExprOp::At) return SymExpr::at(e.name(), std::move(args));
  return simplify_node(e.op(), std::move(args));
}

SymExpr substitute(const SymExpr& e, const std::map<std::string, SymExpr, std::less<>>& repl) {
  if (e.op() == ExprOp::Const) return e;
  if (e.op() == ExprOp::Name) {
    auto it = repl.find(e.name());
    return it == repl.end() ? e : it->second;
  }
  std::vector<SymExpr> args;
  args.reserve(e.args().size());
  for (const SymExpr& a : e.args()) args.push_back(substitute(a, repl));
  switch (op_arity(e.op())) {
    case 1:
      return SymExpr::unary(e.op(), args[0]);
    case 2:
      return SymExpr::binary(e.op(), args[0], args[1]);
    case 3:
      return SymExpr::where(args[0], args[1], args[2]);
    default:
      return SymExpr::at(e.name(), std::move(args));
  }
}

std::int64_t op_count(const SymExpr& e) {
  std::int64_t n = 0;
  if (e.op() != ExprOp::Const && e.op() != ExprOp::Name && e.op() != ExprOp::At) n = 1;
  for (const SymExpr& a : e.args()) n += op_count(a);
  return n;
}

std::optional<AffineForm> as_affine(const SymExpr& e) {
  AffineForm f;
  switch (e.op()) {
    case ExprOp::Const:
      if (!e.is_integer()) return std::nullopt;
      f.constant = static_cast<std::int64_t>(e.value());
      return f;
    case ExprOp::Name:
      f.terms.emplace_back(e.name(), 1);
      return f;
    case ExprOp::Neg: {
      auto a = as_affine(e.args()[0]);
      if (!a) return std::nullopt;
      add_affine(f, *a, -1);
      return f;
    }
    case ExprOp::Add:
    case ExprOp::Sub: {
      auto a = as_affine(e.args()[0]);
      auto b = as_affine(e.args()[1]);
      if (!a || !b) return std::nullopt;
      add_affine(f, *a, 1);
      add_affine(f, *b, e.op() == ExprOp::Add ? 1 : -1);
      return f;
    }
    case ExprOp::Mul: {
      auto a = as_affine(e.args()[0]);
      auto b = as_affine(e.args()[1]);
      if (!a || !b) return std::nullopt;
      if (a->terms.empty()) {
        add_affine(f, *b, a->constant);
      } else if (b->terms.empty()) {
        add_affine(f, *a, b->constant);
      } else {
        return std::nullopt;
      }
      return f;
    }
    default:
      return std::nullopt;
  }
}

namespace detail {

void throw_domain(std::string_view what) { throw Error(ErrorCode::DomainError, std::string(what)); }

void throw_unbound(std::string_view name) {
  throw Error(ErrorCode::UnboundName, "name '" + std::string(name) + "' is not bound");
}

double apply_real(ExprOp op, double a, double b) {
  switch (op) {
    case ExprOp::Add: return a + b;
    case ExprOp::Sub: return a - b;
    case ExprOp::Mul: return a * b;
    case ExprOp::Div:
      if (b == 0.0) throw_domain("division by zero");
      return a / b;
    case ExprOp::FloorDiv: return floor_div(a, b);
    case ExprOp::Mod: {
      if (b == 0.0) throw_domain("modulo by zero");
      double r = std::fmod(a, b);
      if (r != 0.0 && ((r < 0) != (b < 0))) r += b;
      return r;
    }
    case ExprOp::Min: return b < a ? b : a;
    case ExprOp::Max: return b > a ? b : a;
    case ExprOp::Pow: {
      double r = std::pow(a, b);
      if (std::isnan(r) && !std::isnan(a) && !std::isnan(b)) throw_domain("pow of negative base with non-integer exponent");
      if (a == 0.0 && b < 0.0) throw_domain("pow of zero with negative exponent");
      return r;
    }
    case ExprOp::Lt: return a < b ? 1.0 : 0.0;
    case ExprOp::Le: return a <= b ? 1.0 : 0.0;
    case ExprOp::Gt: return a > b ? 1.0 : 0.0;
    case ExprOp::Ge: return a >= b ? 1.0 : 0.0;
    case ExprOp::Eq: return a == b ? 1.0 : 0.0;
    case ExprOp::Ne: return a != b ? 1.0 : 0.0;
    case ExprOp::And: return (a != 0.0 && b != 0.0) ? 1.0 : 0.0;
    case ExprOp::Or: return (a != 0.0 || b != 0.0) ? 1.0 : 0.0;
    default:
      throw Error(ErrorCode::Internal, "apply_real on non-binary op");
  }
}

double apply_real_unary(ExprOp op, double a) {
  switch (op) {
    case ExprOp::Neg: return -a;
    case ExprOp::Sin: return std::sin(a);
    case ExprOp::Cos: return std::cos(a);
    case ExprOp::Exp: return std::exp(a);
    case ExprOp::Log:
      if (!(a > 0.0)) throw_domain("log of non-positive value");
      return std::log(a);
    case ExprOp::Sqrt:
      if (a < 0.0) throw_domain("sqrt of negative value");
      return std::sqrt(a);
    case ExprOp::Tanh: return std::tanh(a);
    case ExprOp::Abs: return std::fabs(a);
    case ExprOp::Sign: return static_cast<double>((a > 0.0) - (a < 0.0));
    case ExprOp::Not: return a == 0.0 ? 1.0 : 0.0;
    default:
      throw Error(ErrorCode::Internal, "apply_real_unary on non-unary op");
  }
}

std::int64_t apply_int(ExprOp op, std::int64_t a, std::int64_t b) {
  switch (op) {
    case ExprOp::Add: return a + b;
    case ExprOp::Sub: return a - b;
    case ExprOp::Mul: return a * b;
    case ExprOp::Div:
    case ExprOp::FloorDiv: return floor_div_int(a, b);
    case ExprOp::Mod: return mod_int(a, b);
    case ExprOp::Min: return std::min(a, b);
    case ExprOp::Max: return std::max(a, b);
    case ExprOp::Pow: {
      if (b < 0) throw_domain("negative exponent in integer context");
      std::int64_t r = 1;
      for (std::int64_t i = 0; i < b; ++i) r *= a;
      return r;
    }
    case ExprOp::Lt: return a < b;
    case ExprOp::Le: return a <= b;
    case ExprOp::Gt: return a > b;
    case ExprOp::Ge: return a >= b;
    case ExprOp::Eq: return a == b;
    case ExprOp::Ne: return a != b;
    case ExprOp::And: return a != 0 && b != 0;
    case ExprOp::Or: return a != 0 || b != 0;
    default:
      throw Error(ErrorCode::Internal, "apply_int on non-binary op");
  }
}

std::int64_t to_exact_int(double v) {
  if (!std::isfinite(v) || v != std::floor(v)) throw_domain("non-integer value in integer context");
  return static_cast<std::int64_t>(v);
}

}  // namespace detail

}  // namespace gradflow
