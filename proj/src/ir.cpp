// SPDX-License-Identifier: Apache-2.0
#include "gradflow/ir.hpp"

#include <algorithm>
#include <cstdlib>

namespace gradflow {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnboundName: return "UnboundName";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::ValidationFailed: return "ValidationFailed";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::NonTermination: return "NonTermination";
    case ErrorCode::MissingTapeValue: return "MissingTapeValue";
    case ErrorCode::UnresolvableTripCount: return "UnresolvableTripCount";
    case ErrorCode::DependentUnreachable: return "DependentUnreachable";
    case ErrorCode::UnsupportedLoop: return "UnsupportedLoop";
    case ErrorCode::NoFixpoint: return "NoFixpoint";
    case ErrorCode::MissingInverse: return "MissingInverse";
    case ErrorCode::IrrecomputableValue: return "IrrecomputableValue";
    case ErrorCode::PathExplosion: return "PathExplosion";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::NegativeResident: return "NegativeResident";
    case ErrorCode::IOError: return "IOError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

std::string format_diagnostic(const Diagnostic& d) {
  std::string s = d.severity == Diagnostic::Severity::Error ? "error" : "warning";
  s += " [" + d.rule + "]";
  if (!d.id.empty()) s += " " + d.id;
  return s + ": " + d.message;
}

namespace {

std::string join_diagnostics(const std::vector<Diagnostic>& ds) {
  std::string s = std::to_string(ds.size()) + " diagnostic(s)";
  for (const Diagnostic& d : ds) s += "\n  " + format_diagnostic(d);
  return s;
}

}  // namespace

ValidationError::ValidationError(std::vector<Diagnostic> diagnostics)
    : Error(ErrorCode::ValidationFailed, join_diagnostics(diagnostics)), diagnostics_(std::move(diagnostics)) {}

InfeasibleError::InfeasibleError(std::int64_t min_peak_bytes, std::int64_t limit_bytes)
    : Error(ErrorCode::Infeasible, "no plan fits in " + std::to_string(limit_bytes) +
                                       " bytes; minimum achievable peak is " + std::to_string(min_peak_bytes) +
                                       " bytes"),
      min_peak_(min_peak_bytes),
      limit_(limit_bytes) {}

const Node* Graph::find(const std::string& id) const {
  for (const Node& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

const DataDescriptor& Program::desc(const std::string& name) const {
  auto it = descriptors.find(name);
  if (it == descriptors.end()) throw Error(ErrorCode::UnboundName, "unknown descriptor '" + name + "'");
  return it->second;
}

const std::string& element_id(const Element& e) {
  return std::visit([](const auto& x) -> const std::string& { return x.id; }, e);
}

std::string_view to_string(DType t) { return t == DType::Float32 ? "float32" : "float64"; }

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Input: return "input";
    case Role::Output: return "output";
    case Role::Intermediate: return "intermediate";
    case Role::Gradient: return "gradient";
    case Role::StoredCopy: return "stored_copy";
  }
  return "";
}

std::string_view to_string(Lifetime l) {
  switch (l) {
    case Lifetime::Program: return "program";
    case Lifetime::State: return "state";
    case Lifetime::Scoped: return "scoped";
  }
  return "";
}

std::string_view to_string(LibraryOp op) {
  switch (op) {
    case LibraryOp::MatMul: return "MatMul";
    case LibraryOp::ReduceSum: return "ReduceSum";
    case LibraryOp::ElementwiseUnary: return "ElementwiseUnary";
    case LibraryOp::ElementwiseBinary: return "ElementwiseBinary";
  }
  return "";
}

std::string_view to_string(Cmp c) { return c == Cmp::Lt ? "<" : ">"; }

std::string_view to_string(LoopMode m) {
  switch (m) {
    case LoopMode::Forward: return "forward";
    case LoopMode::Inverse: return "inverse";
    case LoopMode::Replay: return "replay";
  }
  return "";
}

std::optional<DType> parse_dtype(std::string_view s) {
  if (s == "float32") return DType::Float32;
  if (s == "float64") return DType::Float64;
  return std::nullopt;
}

std::optional<Role> parse_role(std::string_view s) {
  for (Role r : {Role::Input, Role::Output, Role::Intermediate, Role::Gradient, Role::StoredCopy}) {
    if (to_string(r) == s) return r;
  }
  return std::nullopt;
}

std::optional<Lifetime> parse_lifetime(std::string_view s) {
  for (Lifetime l : {Lifetime::Program, Lifetime::State, Lifetime::Scoped}) {
    if (to_string(l) == s) return l;
  }
  return std::nullopt;
}

std::optional<LibraryOp> parse_library_op(std::string_view s) {
  for (LibraryOp op : {LibraryOp::MatMul, LibraryOp::ReduceSum, LibraryOp::ElementwiseUnary,
                       LibraryOp::ElementwiseBinary}) {
    if (to_string(op) == s) return op;
  }
  return std::nullopt;
}

std::int64_t element_width(DType t) { return t == DType::Float32 ? 4 : 8; }

std::vector<std::int64_t> bind_shape(const DataDescriptor& d, const IntBindings& params) {
  std::vector<std::int64_t> dims;
  dims.reserve(d.shape.size());
  for (const SymExpr& e : d.shape) dims.push_back(eval_int(e, params));
  return dims;
}

std::int64_t numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

std::int64_t size_bytes(const DataDescriptor& d, const IntBindings& params) {
  return element_width(d.dtype) * numel(bind_shape(d, params));
}

std::vector<std::int64_t> enumerate_header(const LoopHeader& h, IntBindings bindings, std::int64_t trip_limit) {
  std::vector<std::int64_t> out;
  std::int64_t i = eval_int(h.init, bindings);
  while (true) {
    bindings[h.iterator] = i;
    std::int64_t b = eval_int(h.bound, bindings);
    if (!(h.cmp == Cmp::Lt ? i < b : i > b)) break;
    if (static_cast<std::int64_t>(out.size()) >= trip_limit) {
      throw Error(ErrorCode::NonTermination, "loop over '" + h.iterator + "' exceeded the trip limit of " +
                                                 std::to_string(trip_limit));
    }
    out.push_back(i);
    i = eval_int(h.update, bindings);
  }
  return out;
}

std::vector<std::int64_t> enumerate_range(const MapRange& r, const IntBindings& bindings) {
  std::int64_t b = eval_int(r.begin, bindings);
  std::int64_t e = eval_int(r.end, bindings);
  std::int64_t s = eval_int(r.step, bindings);
  if (s == 0) throw Error(ErrorCode::DomainError, "map range with zero step");
  std::vector<std::int64_t> out;
  for (std::int64_t i = b; s > 0 ? i < e : i > e; i += s) out.push_back(i);
  return out;
}

std::int64_t default_trip_limit() {
  if (const char* s = std::getenv("GRADFLOW_TRIP_LIMIT")) {
    char* end = nullptr;
    long long v = std::strtoll(s, &end, 10);
    if (end != s && v > 0) return v;
  }
  return 1'000'000'000;
}

std::string memlet_data(const Graph& g, const Memlet& m) {
  if (const Node* s = g.find(m.src); s && s->is_access()) return s->access()->data;
  if (const Node* d = g.find(m.dst); d && d->is_access()) return d->access()->data;
  return {};
}

namespace {

void push_unique(std::vector<std::string>& v, const std::string& s) {
  if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
}

}  // namespace

NodeEffects node_effects(const Graph& g, const Node& n) {
  NodeEffects fx;
  if (const MapNode* m = n.map()) {
    for (const Node& inner : m->body->nodes) {
      if (inner.is_access()) continue;
      NodeEffects sub = node_effects(*m->body, inner);
      for (const auto& r : sub.reads) push_unique(fx.reads, r);
      for (const auto& w : sub.writes) push_unique(fx.writes, w);
      for (const auto& w : sub.overwrites) push_unique(fx.overwrites, w);
    }
    return fx;
  }
  for (const Memlet& e : g.edges) {
    if (e.dst == n.id) {
      std::string d = memlet_data(g, e);
      if (!d.empty()) push_unique(fx.reads, d);
    }
    if (e.src == n.id) {
      std::string d = memlet_data(g, e);
      if (d.empty()) continue;
      push_unique(fx.writes, d);
      if (e.wcr == Wcr::Overwrite) push_unique(fx.overwrites, d);
    }
  }
  return fx;
}

}  // namespace gradflow
