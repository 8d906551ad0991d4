// SPDX-License-Identifier: Apache-2.0
//
// Dataflow IR: descriptors, dataflow graphs (access nodes, tasklets, maps,
// library nodes, memlets) and the control-flow region tree (states, loops,
// branches).
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gradflow/error.hpp"
#include "gradflow/symexpr.hpp"

namespace gradflow {

/// Owning pointer with value semantics, used for recursive IR members.
template <typename T>
class Box {
 public:
  Box() : p_(std::make_unique<T>()) {}
  Box(T v) : p_(std::make_unique<T>(std::move(v))) {}  // NOLINT(google-explicit-constructor)
  Box(const Box& o) : p_(std::make_unique<T>(*o.p_)) {}
  Box(Box&& o) noexcept = default;
  Box& operator=(const Box& o) {
    if (this != &o) p_ = std::make_unique<T>(*o.p_);
    return *this;
  }
  Box& operator=(Box&& o) noexcept = default;
  ~Box() = default;

  T& operator*() { return *p_; }
  const T& operator*() const { return *p_; }
  T* operator->() { return p_.get(); }
  const T* operator->() const { return p_.get(); }
  T* get() { return p_.get(); }
  const T* get() const { return p_.get(); }

 private:
  std::unique_ptr<T> p_;
};

enum class DType { Float32, Float64 };
enum class Role { Input, Output, Intermediate, Gradient, StoredCopy };
enum class Lifetime { Program, State, Scoped };

struct DataDescriptor {
  DType dtype = DType::Float64;
  std::vector<SymExpr> shape;
  Role role = Role::Intermediate;
  Lifetime lifetime = Lifetime::Program;
  std::string gradient_of;

  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return shape.empty(); }
};

struct AccessNode {
  std::string data;
};

struct TaskletOutput {
  std::string name;
  SymExpr expr;
};

struct TaskletNode {
  std::vector<std::string> inputs;
  std::vector<TaskletOutput> outputs;
};

struct MapRange {
  SymExpr begin;
  SymExpr end;
  SymExpr step = SymExpr::integer(1);
};

struct Graph;

struct MapNode {
  std::vector<std::string> params;
  std::vector<MapRange> ranges;
  Box<Graph> body;
};

enum class LibraryOp { MatMul, ReduceSum, ElementwiseUnary, ElementwiseBinary };

/// Library nodes read connectors `x` (and `y`) and write connector `out`.
/// Elementwise nodes apply `expr` over the names x and y.
struct LibraryNode {
  LibraryOp op = LibraryOp::ElementwiseUnary;
  SymExpr expr = SymExpr::name("x");
};

struct Node {
  std::string id;
  std::variant<AccessNode, TaskletNode, MapNode, LibraryNode> kind;

  bool is_access() const { return std::holds_alternative<AccessNode>(kind); }
  const AccessNode* access() const { return std::get_if<AccessNode>(&kind); }
  const TaskletNode* tasklet() const { return std::get_if<TaskletNode>(&kind); }
  const MapNode* map() const { return std::get_if<MapNode>(&kind); }
  const LibraryNode* library() const { return std::get_if<LibraryNode>(&kind); }
};

enum class Wcr { Overwrite, Sum };

struct Memlet {
  std::string id;
  std::string src;
  std::string src_conn;
  std::string dst;
  std::string dst_conn;
  std::optional<std::vector<SymExpr>> subset;  // absent: whole array
  Wcr wcr = Wcr::Overwrite;
  std::optional<int> version;
};

struct Graph {
  std::vector<Node> nodes;
  std::vector<Memlet> edges;

  const Node* find(const std::string& id) const;
};

struct State {
  std::string id;
  Graph graph;
};

enum class Cmp { Lt, Gt };

struct LoopHeader {
  std::string iterator;
  SymExpr init;
  SymExpr bound;
  Cmp cmp = Cmp::Lt;
  SymExpr update;
};

enum class LoopMode { Forward, Inverse, Replay };

struct Region;

struct LoopRegion {
  std::string id;
  LoopHeader header;
  std::optional<SymExpr> inverse;
  Box<Region> body;
  std::vector<Region> peel;
  LoopMode mode = LoopMode::Forward;
  std::optional<LoopHeader> forward_header;
  std::string replay_of;
};

struct BranchArm {
  std::optional<SymExpr> condition;  // absent: else-arm
  Box<Region> body;
};

struct BranchRegion {
  std::string id;
  std::vector<BranchArm> arms;
  std::string replay_of;
};

struct WhileRegion {
  std::string id;
  SymExpr condition;
  Box<Region> body;
};

using Element = std::variant<State, LoopRegion, BranchRegion, WhileRegion>;

struct Region {
  std::vector<Element> elements;
};

struct Program {
  std::vector<std::string> parameters;
  std::map<std::string, DataDescriptor> descriptors;
  Region region;
  std::string dependent;
  std::vector<std::string> independents;

  const DataDescriptor& desc(const std::string& name) const;
};

const std::string& element_id(const Element& e);

std::string_view to_string(DType t);
std::string_view to_string(Role r);
std::string_view to_string(Lifetime l);
std::string_view to_string(LibraryOp op);
std::string_view to_string(Cmp c);
std::string_view to_string(LoopMode m);

std::optional<DType> parse_dtype(std::string_view s);
std::optional<Role> parse_role(std::string_view s);
std::optional<Lifetime> parse_lifetime(std::string_view s);
std::optional<LibraryOp> parse_library_op(std::string_view s);

std::int64_t element_width(DType t);
std::vector<std::int64_t> bind_shape(const DataDescriptor& d, const IntBindings& params);
std::int64_t numel(const std::vector<std::int64_t>& shape);
/// element width x product of bound dimensions. Throws UnboundName.
std::int64_t size_bytes(const DataDescriptor& d, const IntBindings& params);

/// Iterator values visited by a loop header under `bindings` (the iterator
/// itself is bound by the walk). Throws NonTermination past `trip_limit`.
std::vector<std::int64_t> enumerate_header(const LoopHeader& h, IntBindings bindings,
                                           std::int64_t trip_limit);
/// Values of one map dimension.
std::vector<std::int64_t> enumerate_range(const MapRange& r, const IntBindings& bindings);

/// Trip limit from GRADFLOW_TRIP_LIMIT, default 1e9.
std::int64_t default_trip_limit();

/// Read and write sets of a compute node (tasklet, map, library). For maps the
/// body is included.
struct NodeEffects {
  std::vector<std::string> reads;
  std::vector<std::string> writes;
  std::vector<std::string> overwrites;  // written with wcr overwrite
};
NodeEffects node_effects(const Graph& g, const Node& n);

/// Checks every structural invariant; empty iff the program is well formed.
/// Each diagnostic names the violated rule and the offending id.
std::vector<Diagnostic> validate(const Program& p);

/// Descriptor referenced by a memlet endpoint, or empty when the endpoint is
/// not an access node.
std::string memlet_data(const Graph& g, const Memlet& m);

}  // namespace gradflow
