// jitleak: command-line front end for the bytecode/JIT leakage toolkit.
//
// Exit codes: 0 ok/secure, 1 violation/leaky/stuck, 2 usage or parse error,
// 3 internal or I/O failure. With --json exactly one JSON document is printed.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "jitleak/adversary.hpp"
#include "jitleak/demos.hpp"

namespace {

using namespace jitleak;
using json = nlohmann::json;

enum Exit { kOk = 0, kViolation = 1, kUsage = 2, kInternal = 3 };

struct UsageError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

struct Output {
  json doc = json::object();
  std::ostringstream text;
  int exit = kOk;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out || !(out << content) || !out.flush()) throw IoError("cannot write '" + path + "'");
}

/// A file path, or @verifyPin / @pwdEq / @checkSecret for the built-in programs.
Program load_program(const std::string& arg) {
  if (!arg.empty() && arg[0] == '@') {
    const auto& names = demo_names();
    if (std::find(names.begin(), names.end(), arg.substr(1)) == names.end())
      throw UsageError("unknown built-in program '" + arg + "'");
    return demo_setup(arg.substr(1)).program;
  }
  return parse_program(read_file(arg));
}

Assignment parse_assignment(const std::vector<std::string>& items) {
  Assignment a;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string kv;
    while (std::getline(ss, kv, ',')) {
      auto eq = kv.find('=');
      auto v = eq == std::string::npos ? std::nullopt : detail::parse_int(kv.substr(eq + 1));
      if (!v || eq == 0) throw UsageError("expected name=integer, got '" + kv + "'");
      a[kv.substr(0, eq)] = *v;
    }
  }
  return a;
}

json to_json(const Assignment& a) {
  json j = json::object();
  for (const auto& [k, v] : a) j[k] = v;
  return j;
}

std::size_t opcode_slot(const std::string& name) {
  if (auto op = opcode_from(name)) return index_of(*op);
  throw UsageError("cost table: unknown opcode '" + name + "'");
}

/// {"bytecode": {"default": 10, "push": 12}, "native": {"default": 1}, "deopt_penalty": 50}
CostModel load_cost(const std::string& path) {
  CostModel cm = CostModel::defaults();
  if (path.empty()) return cm;
  json j;
  try {
    j = json::parse(read_file(path));
    for (auto [key, table] : {std::pair{"bytecode", &cm.bytecode}, std::pair{"native", &cm.native}}) {
      if (!j.contains(key)) continue;
      const json& t = j.at(key);
      if (t.contains("default")) table->fill(t.at("default").get<Cost>());
      for (const auto& [op, c] : t.items())
        if (op != "default") (*table)[opcode_slot(op)] = c.get<Cost>();
    }
    if (j.contains("deopt_penalty")) cm.deopt_penalty = j.at("deopt_penalty").get<Cost>();
  } catch (const json::exception& e) {
    throw UsageError("cost table: " + std::string(e.what()));
  }
  if (!cm.preserves_equivalence())
    throw UsageError("cost table: opcodes priced equally in bytecode must be priced equally in native code");
  return cm;
}

Policy load_policy(const std::string& path) { return parse_policy(read_file(path)); }

void check_schedule(const Program& p, const Schedule& s) {
  for (const auto& b : s.bindings) {
    if (b.method && !p.find(*b.method)) throw UnknownMethod(*b.method);
    if (b.directive.compile) {
      std::set<std::string> labels;
      b.directive.tree.labels(labels);
      for (const auto& m : labels)
        if (!p.find(m)) throw UnknownMethod(m);
    }
  }
}

json policy_json(const Policy& pol) {
  json j;
  to_json(j, pol);
  return j;
}

std::string hotspot_lines(const Policy& pol) {
  std::ostringstream os;
  write_hotspot(os, pol);
  return os.str();
}

json witness_json(const Witness& w) {
  json j{{"origin", w.origin == ScheduleOrigin::pf ? "profiler" : "explicit"},
         {"input_a", to_json(w.input_a)},
         {"input_b", to_json(w.input_b)},
         {"cost_a", w.cost_a},
         {"cost_b", w.cost_b},
         {"delta", w.delta()}};
  if (w.origin == ScheduleOrigin::pf) {
    j["priming_runs"] = w.priming.size();
    json pr = json::array();
    for (const auto& a : w.priming) pr.push_back(to_json(a));
    j["priming"] = pr;
  } else {
    j["schedule"] = format_schedule(w.schedule);
  }
  return j;
}

// ---------------------------------------------------------------------------

struct Common {
  std::string cost_file;
  std::size_t jobs = 1;
};

void cmd_validate(const std::string& file, Output& out) {
  Program p = load_program(file);
  auto vs = validate(p);
  json list = json::array();
  for (const auto& v : vs) {
    list.push_back(v.to_string());
    out.text << v.to_string() << '\n';
  }
  json methods = json::array();
  for (const auto& m : p.methods) methods.push_back({{"name", m.name}, {"instructions", m.size()}});
  out.doc["methods"] = methods;
  out.doc["violations"] = list;
  out.doc["valid"] = vs.empty();
  if (vs.empty()) out.text << "valid: " << p.methods.size() << " methods, entry " << p.entry << '\n';
  out.exit = vs.empty() ? kOk : kViolation;
}

struct RunArgs {
  std::string file, schedule, trace;
  std::vector<std::string> inputs;
  std::size_t step_budget = 1'000'000;
};

void cmd_run(const RunArgs& a, const Common& c, Output& out) {
  Program p = load_program(a.file);
  CostModel cm = load_cost(c.cost_file);
  Schedule sch;
  if (!a.schedule.empty()) {
    sch = parse_schedule(read_file(a.schedule));
    check_schedule(p, sch);
  }
  RunOptions opt;
  opt.record_trace = !a.trace.empty();
  opt.step_budget = a.step_budget;
  ScheduleSource src(sch);
  RunResult r = run(p, parse_assignment(a.inputs), src, cm, opt);
  if (!a.trace.empty()) {
    std::ostringstream os;
    write_trace_csv(os, r.trace);
    write_file(a.trace, os.str());
    out.doc["trace_file"] = a.trace;
  }
  json applied = json::array();
  for (const auto& d : r.schedule_consumed)
    applied.push_back({{"invoke", d.ordinal}, {"method", d.method}, {"directive", format_directive(d.directive)}});
  out.doc["return_value"] = r.return_value;
  out.doc["total_cost"] = r.total_cost;
  out.doc["steps"] = r.steps;
  out.doc["deopts"] = r.deopts;
  out.doc["heap"] = to_json(r.final_heap);
  out.doc["applied"] = applied;
  out.text << "value " << r.return_value << "\ncost " << r.total_cost << "\nsteps " << r.steps << "\ndeopts "
           << r.deopts << '\n';
  for (const auto& [g, v] : r.final_heap) out.text << "heap " << g << " = " << v << '\n';
}

void cmd_transform(const std::string& file, const std::string& literal, Output& out) {
  Program p = load_program(file);
  Directive d = parse_directive(literal);
  std::set<std::string> labels;
  d.tree.labels(labels);
  for (const auto& m : labels)
    if (!p.find(m)) throw UnknownMethod(m);
  const CodeHeap ch = apply_directive(code_heap_of(p), p, d.target(), d, RunOptions{}.v_max);
  const Method& m = *ch.at(d.target());
  json code = json::array();
  for (const auto& ins : m.code) code.push_back(format_instruction(ins));
  out.doc["directive"] = format_directive(d);
  out.doc["method"] = m.name;
  out.doc["version"] = m.version;
  out.doc["code"] = code;
  out.text << serialize_method(m);
}

struct PolicyArgs {
  std::string file, out, hotspot, mode = "full";
};

Inference infer_and_write(const PolicyArgs& a, Output& out) {
  Program p = load_program(a.file);
  Inference inf = infer_policy(p);
  inf.policy.mode = mode_from(a.mode);
  const bool light_ok = check_light_assumption(p, inf.policy);
  out.doc["policy"] = policy_json(inf.policy);
  out.doc["light_assumption"] = light_ok;
  out.doc["report"] = typing_report(p, inf);
  out.text << typing_report(p, inf) << "policy " << policy_json(inf.policy).dump() << '\n'
           << "light-mode assumption " << (light_ok ? "holds" : "fails") << '\n';
  if (!a.out.empty()) {
    write_file(a.out, policy_json(inf.policy).dump(2) + "\n");
    out.doc["policy_file"] = a.out;
  }
  if (!a.hotspot.empty()) {
    write_file(a.hotspot, hotspot_lines(inf.policy));
    out.doc["hotspot_file"] = a.hotspot;
  }
  return inf;
}

void cmd_infer(const PolicyArgs& a, Output& out) { infer_and_write(a, out); }

void typecheck_into(const Program& p, const Signatures& sigs, const Policy& pol, Output& out) {
  ProgramCheck chk = check_program(p, sigs, pol);
  out.doc["typable"] = chk.ok;
  out.doc["problems"] = chk.problems;
  for (const auto& s : chk.problems) out.text << s << '\n';
  out.text << (chk.ok ? "typable" : "not typable") << '\n';
  if (!chk.ok) out.exit = kViolation;
}

void cmd_typecheck(const std::string& file, const std::string& policy, Output& out) {
  Program p = load_program(file);
  Policy pol = policy.empty() ? Policy{} : load_policy(policy);
  typecheck_into(p, infer_policy(p).sigs, pol, out);
}

/// Inference followed by the checks a deployment relies on: typability, and
/// in light mode the assumption that protected callees are never compiled.
void cmd_protect(const PolicyArgs& a, Output& out) {
  Inference inf = infer_and_write(a, out);
  Program p = load_program(a.file);
  typecheck_into(p, inf.sigs, inf.policy, out);
  if (inf.policy.mode == Mode::light && !out.doc["light_assumption"].get<bool>()) {
    out.text << "light mode is unsound here: a protected method is reachable from a public branch\n";
    out.exit = kViolation;
  }
}

struct CheckArgs {
  std::string file, policy, mode = "jitct", witness, range = "-8:8";
  std::vector<std::string> publics, secrets;
  std::size_t depth = 2, samples = 8, max_runs = 2'000'000;
  std::uint64_t seed = 1;
};

IoSpec build_io(const Program& p, const CheckArgs& a) {
  IoSpec io;
  io.publics = parse_assignment(a.publics);
  for (const auto& s : a.secrets) io.secrets.push_back(parse_assignment({s}));
  if (io.secrets.empty()) {
    auto colon = a.range.find(':');
    auto lo = detail::parse_int(a.range.substr(0, colon)), hi = colon == std::string::npos ? std::nullopt : detail::parse_int(a.range.substr(colon + 1));
    if (!lo || !hi || *lo > *hi) throw UsageError("--range expects lo:hi");
    std::mt19937_64 rng(a.seed);
    std::uniform_int_distribution<Value> dist(*lo, *hi);
    for (std::size_t k = 0; k < a.samples; ++k) {
      Assignment s;
      for (const auto& x : p.secret_inputs()) s[x] = dist(rng);
      io.secrets.push_back(s);
    }
  }
  if (io.secrets.empty()) throw UsageError("no secret assignments");
  for (const auto& x : p.public_inputs)
    if (!io.publics.count(x)) throw MissingInput("no value for public input '" + x + "'");
  return io;
}

void cmd_check(const CheckArgs& a, const Common& c, Output& out) {
  Program p = load_program(a.file);
  CostModel cm = load_cost(c.cost_file);
  IoSpec io = build_io(p, a);
  std::optional<Policy> pol;
  if (!a.policy.empty()) pol = load_policy(a.policy);
  LeakReport r;
  if (a.mode == "ct") {
    r = check_constant_time(p, io, cm);
  } else if (a.mode == "jitct") {
    JitCtOptions jo;
    jo.max_runs = a.max_runs;
    jo.jobs = c.jobs;
    r = check_jit_constant_time(p, io, pol ? &*pol : nullptr, a.depth, cm, jo);
  } else {
    throw UsageError("--mode must be ct or jitct");
  }
  out.doc["mode"] = a.mode;
  out.doc["verdict"] = std::string(to_string(r.verdict));
  out.doc["mi_bits"] = r.mi_bits;
  out.doc["runs"] = r.runs;
  out.doc["schedules"] = r.schedules;
  out.doc["secrets"] = io.size();
  if (!r.note.empty()) out.doc["note"] = r.note;
  out.text << to_string(r.verdict) << " (" << r.schedules << " schedules, " << r.runs << " runs)\n";
  if (!r.note.empty()) out.text << r.note << '\n';
  if (r.witness) {
    json w = witness_json(*r.witness);
    out.doc["witness"] = w;
    out.text << "witness: costs " << r.witness->cost_a << " vs " << r.witness->cost_b << '\n';
    if (r.witness->origin == ScheduleOrigin::explicit_) out.text << format_schedule(r.witness->schedule);
    if (!a.witness.empty()) {
      write_file(a.witness, w.dump(2) + "\n");
      out.doc["witness_file"] = a.witness;
    }
  }
  out.exit = r.verdict == Verdict::secure ? kOk : kViolation;
}

struct AttackArgs {
  std::string file, policy, cls = "any";
  std::vector<std::string> a, b;
  std::size_t depth = 2, budget = 20'000;
};

void cmd_attack(const AttackArgs& x, const Common& c, Output& out) {
  Program p = load_program(x.file);
  CostModel cm = load_cost(c.cost_file);
  std::optional<Policy> pol;
  if (!x.policy.empty()) pol = load_policy(x.policy);
  AttackOptions ao;
  ao.depth = x.depth;
  ao.budget = x.budget;
  ao.attack = attack_class_from(x.cls);
  ao.policy = pol ? &*pol : nullptr;
  Assignment ia = parse_assignment(x.a), ib = parse_assignment(x.b);
  AttackResult r = adversarial_search(p, ia, ib, cm, ao);
  out.doc["class"] = std::string(to_string(ao.attack));
  out.doc["delta"] = r.delta;
  out.doc["cost_a"] = r.cost_a;
  out.doc["cost_b"] = r.cost_b;
  out.doc["evaluated"] = r.evaluated;
  out.doc["exhaustive"] = r.exhaustive;
  out.doc["schedule"] = format_schedule(r.witness);
  out.text << "delta " << r.delta << " (" << r.cost_a << " vs " << r.cost_b << ", " << r.evaluated << " schedules"
           << (r.exhaustive ? "" : ", not exhaustive") << ")\n"
           << format_schedule(r.witness);
  out.exit = r.delta == 0 ? kOk : kViolation;
}

struct DemoArgs {
  std::string name, protect = "none", csv;
  double jitter = 0;
  std::uint64_t seed = 1;
  std::size_t bins = 20;
};

void cmd_demo(const DemoArgs& a, const Common& c, Output& out) {
  const auto& names = demo_names();
  if (std::find(names.begin(), names.end(), a.name) == names.end()) throw UsageError("unknown demo '" + a.name + "'");
  CostModel cm = load_cost(c.cost_file);
  DemoReport d = run_demo(a.name, protect_from(a.protect), cm, {}, a.bins, c.jobs);
  out.doc["demo"] = d.name;
  out.doc["protect"] = std::string(to_string(d.protect));
  out.doc["recipe"] = d.recipe;
  out.doc["mi_bits"] = d.report.mi_bits;
  out.doc["verdict"] = std::string(to_string(d.report.verdict));
  if (d.policy) out.doc["policy"] = policy_json(*d.policy);
  if (d.light_assumption) out.doc["light_assumption"] = *d.light_assumption;
  std::map<int, std::pair<double, double>> range;
  for (const auto& s : d.report.samples) {
    auto [it, fresh] = range.try_emplace(s.cls, s.time, s.time);
    it->second.first = std::min(it->second.first, s.time);
    it->second.second = std::max(it->second.second, s.time);
  }
  json classes = json::array();
  out.text << d.name << " (" << to_string(d.protect) << "): " << d.recipe << '\n';
  for (const auto& [cls, mm] : range) {
    classes.push_back({{"class", cls}, {"min", mm.first}, {"max", mm.second}});
    out.text << "class " << cls << ": cost " << mm.first << ".." << mm.second << '\n';
  }
  out.doc["classes"] = classes;
  out.text << "MI " << d.report.mi_bits << " bits, " << to_string(d.report.verdict) << '\n';
  if (d.light_assumption) out.text << "light-mode assumption " << (*d.light_assumption ? "holds" : "fails") << '\n';
  if (!a.csv.empty()) {
    auto samples = a.jitter > 0 ? jitter(d.report.samples, a.jitter, a.seed) : d.report.samples;
    std::ostringstream os;
    write_histogram_csv(os, histogram(samples, a.bins));
    write_file(a.csv, os.str());
    out.doc["histogram_file"] = a.csv;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bytecode interpreter, JIT model and timing-leakage checks"};
  app.require_subcommand(1);
  bool as_json = false;
  Common common;
  app.add_flag("--json", as_json, "Print one JSON document");
  app.add_option("--cost", common.cost_file, "Cost table (JSON)");
  app.add_option("--jobs", common.jobs, "Worker threads for check and demo")->check(CLI::PositiveNumber);

  std::string file;
  auto* validate_cmd = app.add_subcommand("validate", "Parse and validate a program");
  validate_cmd->add_option("program", file, "Program file or @builtin")->required();

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Run a program");
  run_cmd->add_option("program", run_args.file)->required();
  run_cmd->add_option("-i,--input", run_args.inputs, "name=value, repeatable");
  run_cmd->add_option("--schedule", run_args.schedule, "Schedule file");
  run_cmd->add_option("--trace", run_args.trace, "Write the trace as CSV");
  run_cmd->add_option("--step-budget", run_args.step_budget);

  std::string literal;
  auto* transform_cmd = app.add_subcommand("transform", "Compile one directive and print the native code");
  transform_cmd->add_option("program", file)->required();
  transform_cmd->add_option("-d,--directive", literal, "e.g. 'compile m { inline: []; opt: [bp@3:if] }'")->required();

  PolicyArgs pol_args;
  auto add_policy_opts = [&](CLI::App* sc) {
    sc->add_option("program", pol_args.file)->required();
    sc->add_option("-o,--out", pol_args.out, "Write the policy JSON");
    sc->add_option("--emit-hotspot", pol_args.hotspot, "Write exclude/dontinline/dontprune lines");
    sc->add_option("--mode", pol_args.mode)->check(CLI::IsMember({"full", "light"}));
  };
  auto* infer_cmd = app.add_subcommand("infer", "Infer signatures and the protection policy");
  add_policy_opts(infer_cmd);
  auto* protect_cmd = app.add_subcommand("protect", "Infer a policy and check the program is typable under it");
  add_policy_opts(protect_cmd);

  std::string policy_file;
  auto* typecheck_cmd = app.add_subcommand("typecheck", "Type-check a program against a policy");
  typecheck_cmd->add_option("program", file)->required();
  typecheck_cmd->add_option("-p,--policy", policy_file, "Policy JSON (default: empty)");

  CheckArgs check_args;
  auto* check_cmd = app.add_subcommand("check", "Constant-time (ct) or JIT-constant-time (jitct) check");
  check_cmd->add_option("program", check_args.file)->required();
  check_cmd->add_option("--mode", check_args.mode)->check(CLI::IsMember({"ct", "jitct"}));
  check_cmd->add_option("--depth", check_args.depth);
  check_cmd->add_option("-p,--policy", check_args.policy);
  check_cmd->add_option("-i,--input", check_args.publics, "Public inputs, name=value");
  check_cmd->add_option("-s,--secret", check_args.secrets, "One secret assignment, a=1,b=2; repeatable");
  check_cmd->add_option("--samples", check_args.samples, "Sampled secret assignments when none are given");
  check_cmd->add_option("--range", check_args.range, "Sampling range lo:hi");
  check_cmd->add_option("--seed", check_args.seed);
  check_cmd->add_option("--max-runs", check_args.max_runs);
  check_cmd->add_option("--witness", check_args.witness, "Write the witness as JSON");

  AttackArgs attack_args;
  auto* attack_cmd = app.add_subcommand("attack", "Search schedules maximizing the cost gap between two inputs");
  attack_cmd->add_option("program", attack_args.file)->required();
  attack_cmd->add_option("-a", attack_args.a, "First input, a=1,b=2")->required();
  attack_cmd->add_option("-b", attack_args.b, "Second input")->required();
  attack_cmd->add_option("--depth", attack_args.depth);
  attack_cmd->add_option("--budget", attack_args.budget);
  attack_cmd->add_option("--class", attack_args.cls)->check(CLI::IsMember({"any", "bp", "oc", "inline"}));
  attack_cmd->add_option("-p,--policy", attack_args.policy);

  DemoArgs demo_args;
  auto* demo_cmd = app.add_subcommand("demo", "Run a built-in leakage demo");
  demo_cmd->add_option("name", demo_args.name, "pwdEq, verifyPin or checkSecret")->required();
  demo_cmd->add_option("--protect", demo_args.protect)->check(CLI::IsMember({"none", "full", "light"}));
  demo_cmd->add_option("--csv", demo_args.csv, "Write the histogram as CSV");
  demo_cmd->add_option("--bins", demo_args.bins)->check(CLI::PositiveNumber);
  demo_cmd->add_option("--jitter", demo_args.jitter, "Gaussian noise on the CSV samples only");
  demo_cmd->add_option("--seed", demo_args.seed);

  Output out;
  std::string command;
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (!as_json) return app.exit(e) == 0 ? kOk : kUsage;
    std::cout << json{{"command", nullptr}, {"exit_code", kUsage}, {"error", e.what()}}.dump() << '\n';
    return kUsage;
  }
  command = app.get_subcommands().front()->get_name();
  std::string error;
  try {
    if (command == "validate") cmd_validate(file, out);
    else if (command == "run") cmd_run(run_args, common, out);
    else if (command == "transform") cmd_transform(file, literal, out);
    else if (command == "infer") cmd_infer(pol_args, out);
    else if (command == "protect") cmd_protect(pol_args, out);
    else if (command == "typecheck") cmd_typecheck(file, policy_file, out);
    else if (command == "check") cmd_check(check_args, common, out);
    else if (command == "attack") cmd_attack(attack_args, common, out);
    else if (command == "demo") cmd_demo(demo_args, common, out);
  } catch (const UsageError& e) {
    out.exit = kUsage, error = e.what();
  } catch (const ParseError& e) {
    out.exit = kUsage, error = std::string("parse error: ") + e.what();
  } catch (const MissingInput& e) {
    out.exit = kUsage, error = e.what();
  } catch (const IoError& e) {
    out.exit = kInternal, error = e.what();
  } catch (const Error& e) {
    // Stuck runs, non-termination, unknown methods, invalid directives, type errors.
    out.exit = kViolation, error = e.what();
  } catch (const std::exception& e) {
    out.exit = kInternal, error = std::string("internal error: ") + e.what();
  }
  if (as_json) {
    json doc = out.doc;
    doc["command"] = command;
    doc["exit_code"] = out.exit;
    if (!error.empty()) doc["error"] = error;
    std::cout << doc.dump() << '\n';
  } else {
    std::cout << out.text.str();
    if (!error.empty()) std::cerr << "jitleak " << command << ": " << error << '\n';
  }
  return out.exit;
}
