// SPDX-License-Identifier: Apache-2.0
#include "gradflow/frontend.hpp"

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gradflow {

using json = nlohmann::json;

namespace {

class Reader {
 public:
  [[noreturn]] static void fail(const std::string& where, const std::string& msg) {
    throw SyntaxError(0, where + ": " + msg);
  }

  static void keys(const json& j, const std::string& where, std::initializer_list<const char*> required,
                   std::initializer_list<const char*> optional) {
    if (!j.is_object()) fail(where, "expected an object");
    std::set<std::string> allowed;
    for (const char* k : required) {
      allowed.insert(k);
      if (!j.contains(k)) fail(where, std::string("missing key '") + k + "'");
    }
    for (const char* k : optional) allowed.insert(k);
    for (const auto& [k, v] : j.items()) {
      (void)v;
      if (!allowed.count(k)) fail(where, "unknown key '" + k + "'");
    }
  }

  static std::string str(const json& j, const char* key, const std::string& where) {
    const json& v = j.at(key);
    if (!v.is_string()) fail(where, std::string("'") + key + "' must be a string");
    return v.get<std::string>();
  }

  static std::string opt_str(const json& j, const char* key, const std::string& where) {
    return j.contains(key) ? str(j, key, where) : std::string();
  }

  static SymExpr expr(const json& v, const std::string& where) {
    if (v.is_number_integer()) return SymExpr::integer(v.get<std::int64_t>());
    if (!v.is_string()) fail(where, "expression must be a string");
    try {
      return SymExpr::parse(v.get<std::string>());
    } catch (const SyntaxError& e) {
      fail(where, e.what());
    }
  }

  static SymExpr expr(const json& j, const char* key, const std::string& where) {
    return expr(j.at(key), where + "." + key);
  }

  static std::vector<std::string> strings(const json& v, const std::string& where) {
    if (!v.is_array()) fail(where, "expected an array of strings");
    std::vector<std::string> out;
    for (const json& s : v) {
      if (!s.is_string()) fail(where, "expected an array of strings");
      out.push_back(s.get<std::string>());
    }
    return out;
  }

  static std::vector<SymExpr> exprs(const json& v, const std::string& where) {
    if (!v.is_array()) fail(where, "expected an array of expressions");
    std::vector<SymExpr> out;
    for (const json& s : v) out.push_back(expr(s, where));
    return out;
  }

  static const json& array(const json& j, const char* key, const std::string& where) {
    const json& v = j.at(key);
    if (!v.is_array()) fail(where, std::string("'") + key + "' must be an array");
    return v;
  }

  static Node node(const json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("kind")) fail(where, "node needs 'kind'");
    std::string kind = str(j, "kind", where);
    Node n;
    if (kind == "access") {
      keys(j, where, {"id", "kind", "data"}, {});
      n.id = str(j, "id", where);
      n.kind = AccessNode{str(j, "data", where)};
    } else if (kind == "tasklet") {
      keys(j, where, {"id", "kind", "inputs", "outputs"}, {});
      n.id = str(j, "id", where);
      TaskletNode t;
      t.inputs = strings(j.at("inputs"), where + ".inputs");
      for (const json& o : array(j, "outputs", where)) {
        keys(o, where + ".outputs", {"name", "expr"}, {});
        t.outputs.push_back(TaskletOutput{str(o, "name", where), expr(o, "expr", where)});
      }
      n.kind = std::move(t);
    } else if (kind == "map") {
      keys(j, where, {"id", "kind", "params", "ranges", "nodes", "edges"}, {});
      n.id = str(j, "id", where);
      MapNode m;
      m.params = strings(j.at("params"), where + ".params");
      for (const json& r : array(j, "ranges", where)) {
        keys(r, where + ".ranges", {"begin", "end"}, {"step"});
        MapRange range{expr(r, "begin", where), expr(r, "end", where), SymExpr::integer(1)};
        if (r.contains("step")) range.step = expr(r, "step", where);
        m.ranges.push_back(std::move(range));
      }
      *m.body = graph(j, where + "/" + n.id);
      n.kind = std::move(m);
    } else if (kind == "library") {
      keys(j, where, {"id", "kind", "op"}, {"expr"});
      n.id = str(j, "id", where);
      LibraryNode l;
      auto op = parse_library_op(str(j, "op", where));
      if (!op) fail(where, "unknown library op '" + str(j, "op", where) + "'");
      l.op = *op;
      if (j.contains("expr")) l.expr = expr(j, "expr", where);
      n.kind = std::move(l);
    } else {
      fail(where, "unknown node kind '" + kind + "'");
    }
    return n;
  }

  static Memlet edge(const json& j, const std::string& where) {
    keys(j, where, {"id", "src", "dst"}, {"src_conn", "dst_conn", "subset", "wcr", "version"});
    Memlet m;
    m.id = str(j, "id", where);
    m.src = str(j, "src", where);
    m.dst = str(j, "dst", where);
    m.src_conn = opt_str(j, "src_conn", where);
    m.dst_conn = opt_str(j, "dst_conn", where);
    if (j.contains("subset")) m.subset = exprs(j.at("subset"), where + ".subset");
    if (j.contains("wcr")) {
      std::string w = str(j, "wcr", where);
      if (w == "sum") {
        m.wcr = Wcr::Sum;
      } else if (w != "overwrite") {
        fail(where, "unknown wcr '" + w + "'");
      }
    }
    if (j.contains("version")) {
      if (!j.at("version").is_number_integer()) fail(where, "'version' must be an integer");
      m.version = j.at("version").get<int>();
    }
    return m;
  }

  static Graph graph(const json& j, const std::string& where) {
    Graph g;
    for (const json& n : array(j, "nodes", where)) g.nodes.push_back(node(n, where));
    for (const json& e : array(j, "edges", where)) g.edges.push_back(edge(e, where));
    return g;
  }

  static Cmp cmp(const json& j, const std::string& where) {
    std::string c = str(j, "cmp", where);
    if (c == "<") return Cmp::Lt;
    if (c == ">") return Cmp::Gt;
    fail(where, "comparison must be '<' or '>'");
  }

  static LoopHeader header(const json& j, const std::string& where) {
    return LoopHeader{str(j, "iterator", where), expr(j, "init", where), expr(j, "bound", where), cmp(j, where),
                      expr(j, "update", where)};
  }

  static Region region(const json& v, const std::string& where) {
    if (!v.is_array()) fail(where, "region must be an array of elements");
    Region r;
    for (const json& e : v) r.elements.push_back(element(e, where));
    return r;
  }

  static Element element(const json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("kind")) fail(where, "element needs 'kind'");
    std::string kind = str(j, "kind", where);
    std::string here = where + "/" + (j.contains("id") && j.at("id").is_string() ? j.at("id").get<std::string>() : "?");
    if (kind == "state") {
      keys(j, here, {"kind", "id", "nodes", "edges"}, {});
      return State{str(j, "id", here), graph(j, here)};
    }
    if (kind == "loop") {
      keys(j, here, {"kind", "id", "iterator", "init", "bound", "cmp", "update", "body"},
           {"inverse", "peel", "mode", "forward_header", "replay_of"});
      LoopRegion l;
      l.id = str(j, "id", here);
      l.header = header(j, here);
      if (j.contains("inverse")) l.inverse = expr(j, "inverse", here);
      *l.body = region(j.at("body"), here);
      if (j.contains("peel")) {
        for (const json& pr : array(j, "peel", here)) l.peel.push_back(region(pr, here + ".peel"));
      }
      if (j.contains("mode")) {
        std::string m = str(j, "mode", here);
        if (m == "forward") {
          l.mode = LoopMode::Forward;
        } else if (m == "inverse") {
          l.mode = LoopMode::Inverse;
        } else if (m == "replay") {
          l.mode = LoopMode::Replay;
        } else {
          fail(here, "unknown loop mode '" + m + "'");
        }
      }
      if (j.contains("forward_header")) {
        const json& fh = j.at("forward_header");
        keys(fh, here + ".forward_header", {"iterator", "init", "bound", "cmp", "update"}, {});
        l.forward_header = header(fh, here + ".forward_header");
      }
      l.replay_of = opt_str(j, "replay_of", here);
      return l;
    }
    if (kind == "branch") {
      keys(j, here, {"kind", "id", "arms"}, {"replay_of"});
      BranchRegion b;
      b.id = str(j, "id", here);
      for (const json& a : array(j, "arms", here)) {
        keys(a, here + ".arms", {"condition", "body"}, {});
        BranchArm arm;
        if (!a.at("condition").is_null()) arm.condition = expr(a, "condition", here);
        *arm.body = region(a.at("body"), here);
        b.arms.push_back(std::move(arm));
      }
      b.replay_of = opt_str(j, "replay_of", here);
      return b;
    }
    if (kind == "while") {
      keys(j, here, {"kind", "id", "condition", "body"}, {});
      WhileRegion w;
      w.id = str(j, "id", here);
      w.condition = expr(j, "condition", here);
      *w.body = region(j.at("body"), here);
      return w;
    }
    fail(where, "unknown element kind '" + kind + "'");
  }

  static Program program(const json& j) {
    keys(j, "program", {"format_version", "parameters", "descriptors", "region", "dependent", "independents"}, {});
    if (!j.at("format_version").is_number_integer() || j.at("format_version").get<int>() != 1) {
      fail("program", "unsupported format_version");
    }
    Program p;
    p.parameters = strings(j.at("parameters"), "parameters");
    const json& ds = j.at("descriptors");
    if (!ds.is_object()) fail("descriptors", "expected an object");
    for (const auto& [name, d] : ds.items()) {
      std::string where = "descriptors." + name;
      keys(d, where, {"dtype", "shape", "role"}, {"lifetime", "gradient_of"});
      DataDescriptor desc;
      auto dt = parse_dtype(str(d, "dtype", where));
      if (!dt) fail(where, "unknown dtype '" + str(d, "dtype", where) + "'");
      desc.dtype = *dt;
      desc.shape = exprs(d.at("shape"), where + ".shape");
      auto role = parse_role(str(d, "role", where));
      if (!role) fail(where, "unknown role '" + str(d, "role", where) + "'");
      desc.role = *role;
      if (d.contains("lifetime")) {
        auto lt = parse_lifetime(str(d, "lifetime", where));
        if (!lt) fail(where, "unknown lifetime");
        desc.lifetime = *lt;
      }
      desc.gradient_of = opt_str(d, "gradient_of", where);
      p.descriptors.emplace(name, std::move(desc));
    }
    p.region = region(j.at("region"), "region");
    p.dependent = str(j, "dependent", "program");
    p.independents = strings(j.at("independents"), "independents");
    return p;
  }
};

json expr_json(const SymExpr& e) { return e.str(); }

json exprs_json(const std::vector<SymExpr>& v) {
  json a = json::array();
  for (const SymExpr& e : v) a.push_back(expr_json(e));
  return a;
}

json graph_json(const Graph& g, json out);

json node_json(const Node& n) {
  json j;
  j["id"] = n.id;
  if (const AccessNode* a = n.access()) {
    j["kind"] = "access";
    j["data"] = a->data;
  } else if (const TaskletNode* t = n.tasklet()) {
    j["kind"] = "tasklet";
    j["inputs"] = t->inputs;
    json outs = json::array();
    for (const TaskletOutput& o : t->outputs) outs.push_back(json{{"name", o.name}, {"expr", expr_json(o.expr)}});
    j["outputs"] = std::move(outs);
  } else if (const MapNode* m = n.map()) {
    j["kind"] = "map";
    j["params"] = m->params;
    json ranges = json::array();
    for (const MapRange& r : m->ranges) {
      ranges.push_back(json{{"begin", expr_json(r.begin)}, {"end", expr_json(r.end)}, {"step", expr_json(r.step)}});
    }
    j["ranges"] = std::move(ranges);
    j = graph_json(*m->body, std::move(j));
  } else if (const LibraryNode* l = n.library()) {
    j["kind"] = "library";
    j["op"] = std::string(to_string(l->op));
    if (l->op == LibraryOp::ElementwiseUnary || l->op == LibraryOp::ElementwiseBinary) j["expr"] = expr_json(l->expr);
  }
  return j;
}

json edge_json(const Memlet& m) {
  json j{{"id", m.id}, {"src", m.src}, {"dst", m.dst}};
  if (!m.src_conn.empty()) j["src_conn"] = m.src_conn;
  if (!m.dst_conn.empty()) j["dst_conn"] = m.dst_conn;
  if (m.subset) j["subset"] = exprs_json(*m.subset);
  if (m.wcr == Wcr::Sum) j["wcr"] = "sum";
  if (m.version) j["version"] = *m.version;
  return j;
}

json graph_json(const Graph& g, json out) {
  json nodes = json::array();
  for (const Node& n : g.nodes) nodes.push_back(node_json(n));
  json edges = json::array();
  for (const Memlet& e : g.edges) edges.push_back(edge_json(e));
  out["nodes"] = std::move(nodes);
  out["edges"] = std::move(edges);
  return out;
}

json header_json(const LoopHeader& h, json j) {
  j["iterator"] = h.iterator;
  j["init"] = expr_json(h.init);
  j["bound"] = expr_json(h.bound);
  j["cmp"] = std::string(to_string(h.cmp));
  j["update"] = expr_json(h.update);
  return j;
}

json region_json(const Region& r);

json element_json(const Element& e) {
  if (const auto* s = std::get_if<State>(&e)) {
    return graph_json(s->graph, json{{"kind", "state"}, {"id", s->id}});
  }
  if (const auto* l = std::get_if<LoopRegion>(&e)) {
    json j = header_json(l->header, json{{"kind", "loop"}, {"id", l->id}});
    if (l->inverse) j["inverse"] = expr_json(*l->inverse);
    j["body"] = region_json(*l->body);
    if (!l->peel.empty()) {
      json peel = json::array();
      for (const Region& pr : l->peel) peel.push_back(region_json(pr));
      j["peel"] = std::move(peel);
    }
    if (l->mode != LoopMode::Forward) j["mode"] = std::string(to_string(l->mode));
    if (l->forward_header) j["forward_header"] = header_json(*l->forward_header, json::object());
    if (!l->replay_of.empty()) j["replay_of"] = l->replay_of;
    return j;
  }
  if (const auto* b = std::get_if<BranchRegion>(&e)) {
    json arms = json::array();
    for (const BranchArm& a : b->arms) {
      arms.push_back(json{{"condition", a.condition ? json(expr_json(*a.condition)) : json(nullptr)},
                          {"body", region_json(*a.body)}});
    }
    json j{{"kind", "branch"}, {"id", b->id}, {"arms", std::move(arms)}};
    if (!b->replay_of.empty()) j["replay_of"] = b->replay_of;
    return j;
  }
  const auto& w = std::get<WhileRegion>(e);
  return json{{"kind", "while"}, {"id", w.id}, {"condition", expr_json(w.condition)}, {"body", region_json(*w.body)}};
}

json region_json(const Region& r) {
  json a = json::array();
  for (const Element& e : r.elements) a.push_back(element_json(e));
  return a;
}

}  // namespace

Program parse_program_unchecked(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw SyntaxError(e.byte, e.what());
  }
  try {
    return Reader::program(j);
  } catch (const json::exception& e) {
    throw SyntaxError(0, e.what());
  }
}

Program parse_program(std::string_view text) {
  Program p = parse_program_unchecked(text);
  std::vector<Diagnostic> diags = validate(p);
  bool any_error = false;
  for (const Diagnostic& d : diags) any_error |= d.severity == Diagnostic::Severity::Error;
  if (any_error) throw ValidationError(std::move(diags));
  return p;
}

std::string serialize_program(const Program& p) {
  json j;
  j["format_version"] = 1;
  j["parameters"] = p.parameters;
  json ds = json::object();
  for (const auto& [name, d] : p.descriptors) {
    json dj{{"dtype", std::string(to_string(d.dtype))}, {"shape", exprs_json(d.shape)}, {"role", std::string(to_string(d.role))}};
    if (d.lifetime != Lifetime::Program) dj["lifetime"] = std::string(to_string(d.lifetime));
    if (!d.gradient_of.empty()) dj["gradient_of"] = d.gradient_of;
    ds[name] = std::move(dj);
  }
  j["descriptors"] = std::move(ds);
  j["region"] = region_json(p.region);
  j["dependent"] = p.dependent;
  j["independents"] = p.independents;
  return j.dump(2) + "\n";
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IOError, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IOError, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorCode::IOError, "write to '" + path.string() + "' failed");
}

Program load_program(const std::filesystem::path& path) { return parse_program(read_text_file(path)); }

void save_program(const std::filesystem::path& path, const Program& p) {
  write_text_file(path, serialize_program(p));
}

}  // namespace gradflow
