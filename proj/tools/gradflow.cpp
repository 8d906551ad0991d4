// SPDX-License-Identifier: Apache-2.0
//
// gradflow: differentiate, plan, run and check programs.
//
// Exit codes: 0 ok, 1 I/O, 2 invalid input (syntax, validation, shape,
// arguments), 3 unsupported construct, 4 infeasible memory limit, 5 gradient
// tolerance exceeded, 6 runtime error.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "gradflow/array_io.hpp"
#include "gradflow/backward.hpp"
#include "gradflow/checkpointing.hpp"
#include "gradflow/frontend.hpp"
#include "gradflow/interpreter.hpp"
#include "gradflow/verification.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace gradflow;
using json = nlohmann::ordered_json;

namespace {

constexpr int kTolerance = 5;
constexpr double kMiB = 1024.0 * 1024.0;

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::IOError:
      return 1;
    case ErrorCode::SyntaxError:
    case ErrorCode::ValidationFailed:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnboundName:
      return 2;
    case ErrorCode::UnsupportedLoop:
    case ErrorCode::NoFixpoint:
    case ErrorCode::MissingInverse:
    case ErrorCode::DependentUnreachable:
    case ErrorCode::UnresolvableTripCount:
    case ErrorCode::PathExplosion:
      return 3;
    case ErrorCode::Infeasible:
      return 4;
    default:
      return 6;
  }
}

struct Options {
  std::string program;
  std::vector<std::string> params;
  std::vector<std::string> inputs;
  std::vector<std::string> wrt;
  std::string of;
  std::string out;
  std::string eps = "auto";
  double tol = 1e-5;
  double limit_mib = -1.0;
  std::uint64_t seed = 0;
  bool json = false;
  bool in_place = false;
};

IntBindings parse_params(const std::vector<std::string>& items) {
  IntBindings b;
  for (const std::string& raw : items) {
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto eq = item.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw Error(ErrorCode::InvalidArgument, "parameter '" + item + "' is not NAME=INT");
      }
      try {
        std::size_t used = 0;
        std::string value = item.substr(eq + 1);
        b[item.substr(0, eq)] = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::logic_error&) {
        throw Error(ErrorCode::InvalidArgument, "parameter '" + item + "' is not NAME=INT");
      }
    }
  }
  return b;
}

Program load(const Options& o) {
  Program p = load_program(o.program);
  if (!o.wrt.empty()) p.independents = o.wrt;
  if (!o.of.empty()) p.dependent = o.of;
  if (!o.wrt.empty() || !o.of.empty()) {
    std::vector<Diagnostic> diags = validate(p);
    std::erase_if(diags, [](const Diagnostic& d) { return d.severity != Diagnostic::Severity::Error; });
    if (!diags.empty()) throw ValidationError(diags);
  }
  return p;
}

void check_params(const Program& p, const IntBindings& b) {
  for (const std::string& name : p.parameters) {
    if (!b.count(name)) throw Error(ErrorCode::InvalidArgument, "missing --params " + name + "=<int>");
  }
}

ArrayMap load_inputs(const Program& p, const Options& o, const IntBindings& params) {
  ArrayMap in = random_inputs(p, params, o.seed);
  for (const std::string& spec : o.inputs) {
    auto eq = spec.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "input '" + spec + "' is not NAME=VALUE");
    std::string name = spec.substr(0, eq), value = spec.substr(eq + 1);
    auto it = p.descriptors.find(name);
    if (it == p.descriptors.end() || it->second.role != Role::Input) {
      throw Error(ErrorCode::InvalidArgument, "'" + name + "' is not a program input");
    }
    Array a = !value.empty() && (value[0] == '[' || value[0] == '-' || std::isdigit(static_cast<unsigned char>(value[0])))
                  ? parse_array_literal(value)
                  : read_array_file(value);
    std::vector<std::int64_t> want = bind_shape(it->second, params);
    if (a.shape != want) throw Error(ErrorCode::ShapeMismatch, "input '" + name + "' has the wrong shape");
    a.dtype = it->second.dtype;
    in[name] = std::move(a);
  }
  return in;
}

std::string stem_path(const Options& o, const std::string& suffix) {
  fs::path base = o.out.empty() ? fs::path(o.program) : fs::path(o.out);
  fs::path dir = base.parent_path();
  std::string stem = base.stem().string();
  return (dir / (stem + suffix)).string();
}

std::int64_t limit_bytes(const Options& o) {
  if (o.limit_mib < 0) throw Error(ErrorCode::InvalidArgument, "--memory-limit-mib is required");
  return static_cast<std::int64_t>(std::floor(o.limit_mib * kMiB));
}

int cmd_diff(const Options& o) {
  Program p = load(o);
  BackwardResult r = build_backward(p);
  std::string bwd_path = stem_path(o, ".bwd.json");
  std::string req_path = stem_path(o, ".fwdreq.json");
  save_program(bwd_path, r.program);
  json req;
  req["dependent"] = p.dependent;
  req["independents"] = p.independents;
  req["gradients"] = json::object();
  for (const auto& [fwd, grad] : r.gradient_of) req["gradients"][fwd] = grad;
  req["forwarded"] = json::array();
  for (const ForwardedItem& item : r.requirement.items) {
    req["forwarded"].push_back(
        json{{"descriptor", item.key.first}, {"version", item.key.second}, {"producers", item.producers}, {"size", item.size}});
  }
  req["warnings"] = r.warnings;
  write_text_file(req_path, req.dump(2) + "\n");
  if (o.json) {
    std::cout << json{{"backward", bwd_path}, {"requirement", req_path}, {"forwarded", r.requirement.items.size()}}.dump(2)
              << "\n";
  } else {
    std::cout << "wrote " << bwd_path << "\nwrote " << req_path << "\n";
    for (const std::string& w : r.warnings) std::cerr << "warning: " << w << "\n";
  }
  return 0;
}

int cmd_plan(const Options& o) {
  Program p = load(o);
  IntBindings params = parse_params(o.params);
  check_params(p, params);
  std::int64_t limit = limit_bytes(o);
  PlanResult r;
  try {
    r = plan(p, params, limit);
  } catch (const InfeasibleError& e) {
    if (o.json) {
      std::cout << json{{"error", "Infeasible"}, {"min_peak_bytes", e.min_peak_bytes()}, {"limit_bytes", limit}}.dump(2)
                << "\n";
    } else {
      std::cerr << "infeasible: minimum achievable peak " << e.min_peak_bytes() << " bytes ("
                << static_cast<double>(e.min_peak_bytes()) / kMiB << " MiB), limit " << limit << " bytes\n";
    }
    return 4;
  }
  if (!o.out.empty()) {
    save_program(stem_path(o, ".fwd.json"), r.applied.forward);
    save_program(stem_path(o, ".bwd.json"), r.applied.backward);
  }
  if (o.json) {
    std::cout << plan_report_json(r);
    return 0;
  }
  if (r.values.empty()) {
    std::cout << "nothing to plan\n";
    return 0;
  }
  std::printf("%-4s %-16s %14s %14s %14s  %s\n", "id", "value", "S [MiB]", "c [MFLOP]", "R [MiB]", "decision");
  std::string line;
  for (const ForwardedValue& fv : r.values) {
    bool store = r.solution.v[fv.id];
    std::printf("%-4d %-16s %14.3f %14.3f %14.3f  %s%s\n", fv.id, fv.name.c_str(), static_cast<double>(fv.S) / kMiB,
                static_cast<double>(fv.c) / 1e6, static_cast<double>(fv.R) / kMiB, store ? "store" : "recompute",
                fv.fixed_store ? " (fixed)" : "");
    if (!line.empty()) line += ", ";
    line += fv.name + ": " + (store ? "store" : "recompute");
  }
  std::cout << line << "\n";
  std::printf("objective %.3f MFLOP, peak %.3f MiB, limit %.3f MiB, %zu path(s), %s in %.3f ms\n",
              static_cast<double>(r.solution.objective) / 1e6, static_cast<double>(r.solution.peak) / kMiB,
              static_cast<double>(limit) / kMiB, r.problem.paths, r.solution.method.c_str(), r.solution.wall_ms);
  return 0;
}

int cmd_run(const Options& o) {
  Program p = load(o);
  IntBindings params = parse_params(o.params);
  check_params(p, params);
  ArrayMap inputs = load_inputs(p, o, params);
  BackwardResult bwd = build_backward(p);
  StorePolicy store;
  for (const ForwardedItem& item : bwd.requirement.items) store.insert(item.key);
  ExecutionResult fwd = run_forward(p, inputs, params, store);
  ArrayMap grads = run_backward(bwd.program, fwd.tape);
  const Array& dep = fwd.outputs.at(p.dependent);
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_array_file(fs::path(o.out) / (p.dependent + ".bin"), dep);
    for (const std::string& ind : p.independents) {
      write_array_file(fs::path(o.out) / ("grad_" + ind + ".bin"), grads.at(bwd.gradient_of.at(ind)));
    }
  }
  if (o.json) {
    json j;
    j["dependent"] = json::parse(format_array_literal(dep));
    j["gradients"] = json::object();
    for (const std::string& ind : p.independents) {
      j["gradients"][ind] = json::parse(format_array_literal(grads.at(bwd.gradient_of.at(ind))));
    }
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << p.dependent << " = " << format_array_literal(dep) << "\n";
    for (const std::string& ind : p.independents) {
      std::cout << "d" << p.dependent << "/d" << ind << " = " << format_array_literal(grads.at(bwd.gradient_of.at(ind)))
                << "\n";
    }
  }
  return 0;
}

int cmd_verify(const Options& o) {
  Program p = load(o);
  IntBindings params = parse_params(o.params);
  check_params(p, params);
  ArrayMap inputs = load_inputs(p, o, params);
  double eps = 0.0;
  if (o.eps != "auto") {
    try {
      eps = std::stod(o.eps);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidArgument, "--eps must be 'auto' or a positive number");
    }
    if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "--eps must be 'auto' or a positive number");
  }
  ArrayMap analytic = reverse_mode_gradient(p, inputs, params);
  FdResult fd = finite_difference_gradient(p, inputs, params, eps);
  GradientComparison c = compare_gradients(analytic, fd, o.tol);
  bool ok = c.failing.empty();
  if (o.json) {
    json j;
    j["ok"] = ok;
    j["eps"] = fd.eps;
    j["tolerance"] = o.tol;
    j["max_rel_error"] = c.max_rel_error;
    j["per_array"] = c.per_array;
    j["compared"] = c.compared;
    j["excluded"] = c.excluded;
    j["failing"] = json::array();
    for (const auto& [name, idx] : c.failing) j["failing"].push_back(json{{"array", name}, {"index", idx}});
    std::cout << j.dump(2) << "\n";
  } else {
    std::printf("max rel error %.3e (tolerance %.1e, eps %.3e, %lld compared, %lld excluded)\n", c.max_rel_error, o.tol,
                fd.eps, static_cast<long long>(c.compared), static_cast<long long>(c.excluded));
    for (const auto& [name, err] : c.per_array) std::printf("  %s: %.3e\n", name.c_str(), err);
    for (const auto& [name, idx] : c.failing) std::printf("  FAIL %s[%lld]\n", name.c_str(), static_cast<long long>(idx));
  }
  return ok ? 0 : kTolerance;
}

int cmd_mem_report(const Options& o) {
  Program p = load(o);
  IntBindings params = parse_params(o.params);
  check_params(p, params);
  std::int64_t limit = limit_bytes(o);
  PlanResult r = plan(p, params, limit);
  json paths = json::array();
  std::int64_t peak = 0;
  for (const PathSequence& s : r.sequences) {
    MemoryTimeline t = simulate_memory(r.applied.forward, r.applied.backward, params, s.choice);
    peak = std::max(peak, t.peak);
    if (o.json) {
      json events = json::array();
      for (const TimelineEvent& e : t.events) {
        events.push_back(json{{"label", e.label}, {"delta_bytes", e.delta}, {"running_bytes", e.running}});
      }
      paths.push_back(json{{"path", s.name}, {"peak_bytes", t.peak}, {"events", events}});
    } else {
      std::cout << "path " << s.name << "\n";
      for (const TimelineEvent& e : t.events) {
        std::printf("  %-40s %+14.3f MiB %14.3f MiB\n", e.label.c_str(), static_cast<double>(e.delta) / kMiB,
                    static_cast<double>(e.running) / kMiB);
      }
    }
  }
  if (o.json) {
    std::cout << json{{"paths", paths}, {"peak_bytes", peak}, {"limit_bytes", limit}, {"within_limit", peak <= limit}}.dump(2)
              << "\n";
  } else {
    std::printf("peak %.3f MiB %s limit %.3f MiB\n", static_cast<double>(peak) / kMiB, peak <= limit ? "<=" : ">",
                static_cast<double>(limit) / kMiB);
  }
  return 0;
}

int cmd_fmt(const Options& o) {
  Program p = load_program(o.program);
  std::string text = serialize_program(p);
  if (o.in_place) {
    write_text_file(o.program, text);
  } else if (!o.out.empty()) {
    write_text_file(o.out, text);
  } else {
    std::cout << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradflow: reverse-mode differentiation and checkpoint planning for dataflow programs"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* c) {
    c->add_option("program", o.program, "program file (JSON)")->required();
    c->add_flag("--json", o.json, "machine-readable output");
    c->add_option("--wrt", o.wrt, "independent (repeatable); overrides the program's list");
    c->add_option("--of", o.of, "dependent; overrides the program's");
  };
  auto add_params = [&](CLI::App* c) {
    c->add_option("--params", o.params, "NAME=INT (repeatable or comma separated)");
    c->add_option("--seed", o.seed, "seed for generated inputs");
    c->add_option("--input", o.inputs, "NAME=FILE or NAME=LITERAL (repeatable)");
  };

  CLI::App* diff = app.add_subcommand("diff", "write the backward program and forwarding manifest");
  add_common(diff);
  diff->add_option("-o,--out", o.out, "output path stem (default: next to the program)");

  CLI::App* planc = app.add_subcommand("plan", "choose store or recompute per forwarded value");
  add_common(planc);
  add_params(planc);
  planc->add_option("--memory-limit-mib", o.limit_mib, "memory limit in MiB")->required();
  planc->add_option("-o,--out", o.out, "write the planned programs to <stem>.fwd.json and <stem>.bwd.json");

  CLI::App* run = app.add_subcommand("run", "execute forward and backward, print gradients");
  add_common(run);
  add_params(run);
  run->add_option("-o,--out", o.out, "directory for array files");

  CLI::App* verify = app.add_subcommand("verify", "compare gradients against central finite differences");
  add_common(verify);
  add_params(verify);
  verify->add_option("--eps", o.eps, "relative step, or 'auto'");
  verify->add_option("--tol", o.tol, "maximum relative error");

  CLI::App* mem = app.add_subcommand("mem-report", "simulated memory timeline of the planned programs");
  add_common(mem);
  add_params(mem);
  mem->add_option("--memory-limit-mib", o.limit_mib, "memory limit in MiB")->required();

  CLI::App* fmt = app.add_subcommand("fmt", "print the canonical form");
  fmt->add_option("program", o.program, "program file (JSON)")->required();
  fmt->add_option("-o,--out", o.out, "output file");
  fmt->add_flag("-i,--in-place", o.in_place, "rewrite the file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*diff) return cmd_diff(o);
    if (*planc) return cmd_plan(o);
    if (*run) return cmd_run(o);
    if (*verify) return cmd_verify(o);
    if (*mem) return cmd_mem_report(o);
    if (*fmt) return cmd_fmt(o);
  } catch (const ValidationError& e) {
    for (const Diagnostic& d : e.diagnostics()) std::cerr << format_diagnostic(d) << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 6;
  }
  return 0;
}
