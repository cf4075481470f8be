#pragma once

// Small-step machine over configurations (ch, h, s, cs) with cost accounting.

#include <array>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "jitleak/bytecode.hpp"
#include "jitleak/error.hpp"
#include "jitleak/jit.hpp"

namespace jitleak {

using Cost = std::int64_t;

struct CostModel {
  std::array<Cost, kOpcodeCount> bytecode{};
  std::array<Cost, kOpcodeCount> native{};
  Cost deopt_penalty = 50;

  static CostModel uniform(Cost bc, Cost nc, Cost penalty) {
    CostModel cm;
    cm.bytecode.fill(bc);
    cm.native.fill(nc);
    cm.deopt_penalty = penalty;
    return cm;
  }
  static CostModel defaults() { return uniform(10, 1, 50); }

  Cost cost(Opcode op, CodeKind kind) const {
    return kind == CodeKind::bytecode ? bytecode[index_of(op)] : native[index_of(op)];
  }

  /// Opcodes priced equally in bytecode stay priced equally in native code.
  bool preserves_equivalence() const {
    for (std::size_t a = 0; a < kOpcodeCount; ++a)
      for (std::size_t b = 0; b < kOpcodeCount; ++b)
        if (bytecode[a] == bytecode[b] && native[a] != native[b]) return false;
    return true;
  }
};

class Locals {
 public:
  const Value* find(const std::string& x) const {
    for (const auto& [k, v] : slots_)
      if (k == x) return &v;
    return nullptr;
  }
  void set(const std::string& x, Value v) {
    for (auto& [k, w] : slots_)
      if (k == x) {
        w = v;
        return;
      }
    slots_.emplace_back(x, v);
  }
  const std::vector<std::pair<std::string, Value>>& slots() const { return slots_; }
  friend bool operator==(const Locals& a, const Locals& b) {
    if (a.slots_.size() != b.slots_.size()) return false;
    for (const auto& [k, v] : a.slots_) {
      const Value* w = b.find(k);
      if (!w || *w != v) return false;
    }
    return true;
  }

 private:
  std::vector<std::pair<std::string, Value>> slots_;
};

/// ⟨pc, m, ρ, os⟩. The operand stack is stored bottom first.
struct Frame {
  Point pc = 0;
  std::shared_ptr<const Method> method;
  Locals locals;
  std::vector<Value> stack;
};

struct Configuration {
  const Program* program = nullptr;
  CodeHeap ch;
  std::map<std::string, Value> heap;
  Frame s;
  std::vector<Frame> cs;
  bool final = false;
  Value result = 0;
  /// Invoke transitions so far; the entry activation is transition 0.
  std::size_t invokes = 0;
  std::map<std::string, std::size_t> method_invokes;
};

struct TraceEvent {
  std::string method;
  unsigned version = 0;
  CodeKind kind = CodeKind::bytecode;
  Point pc = 0;
  Opcode op = Opcode::pop;
  Cost cost = 0;
  bool deopt = false;
  /// Literal of the directive applied at this invoke, if any.
  std::optional<std::string> directive;
  SourcePoint origin;
  std::optional<bool> taken;  // conditionals: whether the jump was followed
  std::string callee;         // invoke
  bool transformed = false;   // conditional rewritten by a branch optimization
};

struct AppliedDirective {
  std::size_t ordinal = 0;
  std::string method;
  std::size_t method_ordinal = 0;
  Directive directive;
};

struct InvokeContext {
  std::size_t ordinal;
  const std::string& method;
  std::size_t method_ordinal;
  const Configuration& config;
  std::optional<SourcePoint> site;  // nullopt for the entry activation
};

struct DirectiveChoice {
  Directive directive;
  bool lenient = false;  // an invalid directive degrades to d_∅ instead of getting stuck
};

class DirectiveSource {
 public:
  virtual ~DirectiveSource() = default;
  virtual DirectiveChoice choose(const InvokeContext& ctx) = 0;
  virtual void observe(const TraceEvent&) {}
  virtual bool observes() const { return false; }
};

/// d⋆_∅.
class NoDirectives final : public DirectiveSource {
 public:
  DirectiveChoice choose(const InvokeContext&) override { return {}; }
};

class LambdaSource final : public DirectiveSource {
 public:
  explicit LambdaSource(std::function<DirectiveChoice(const InvokeContext&)> f) : f_(std::move(f)) {}
  DirectiveChoice choose(const InvokeContext& ctx) override { return f_(ctx); }

 private:
  std::function<DirectiveChoice(const InvokeContext&)> f_;
};

struct RunOptions {
  bool record_trace = true;
  std::size_t step_budget = 1'000'000;
  unsigned v_max = 3;
};

struct RunResult {
  std::map<std::string, Value> final_heap;
  Value return_value = 0;
  Cost total_cost = 0;
  std::vector<TraceEvent> trace;
  std::vector<AppliedDirective> schedule_consumed;
  CodeHeap final_code;
  std::size_t steps = 0;
  std::size_t deopts = 0;
};

namespace detail {

inline Value pop_value(Frame& f, const char* what) {
  if (f.stack.empty()) throw Stuck(std::string(what) + " on empty operand stack");
  Value v = f.stack.back();
  f.stack.pop_back();
  return v;
}

inline Value apply_binop(BinOp op, Value v1, Value v2) {
  auto u1 = static_cast<std::uint64_t>(v1), u2 = static_cast<std::uint64_t>(v2);
  switch (op) {
    case BinOp::add: return static_cast<Value>(u1 + u2);
    case BinOp::sub: return static_cast<Value>(u1 - u2);
    case BinOp::mul: return static_cast<Value>(u1 * u2);
    case BinOp::div:
      if (v2 == 0) throw Stuck("division by zero");
      if (v1 == std::numeric_limits<Value>::min() && v2 == -1) return v1;
      return v1 / v2;
    case BinOp::eq: return v1 == v2 ? 1 : 0;
    case BinOp::lt: return v1 < v2 ? 1 : 0;
    case BinOp::and_: return v1 & v2;
    case BinOp::or_: return v1 | v2;
    case BinOp::xor_: return v1 ^ v2;
  }
  return 0;
}

/// Consults the source for the method about to be activated and installs its directive.
inline std::shared_ptr<const Method> activate(Configuration& c, const std::string& callee, DirectiveSource& dsrc,
                                              const RunOptions& opt, std::optional<SourcePoint> site,
                                              std::vector<AppliedDirective>* consumed,
                                              std::optional<std::string>* literal) {
  std::size_t ordinal = c.invokes++;
  std::size_t mord = c.method_invokes[callee]++;
  auto it = c.ch.find(callee);
  if (it == c.ch.end()) throw Stuck("invoke of unknown method '" + callee + "'");
  DirectiveChoice choice = dsrc.choose(InvokeContext{ordinal, callee, mord, c, std::move(site)});
  if (!choice.directive.empty()) {
    try {
      c.ch = apply_directive(c.ch, *c.program, callee, choice.directive, opt.v_max);
      if (consumed) consumed->push_back({ordinal, callee, mord, choice.directive});
      if (literal) *literal = format_directive(choice.directive);
    } catch (const Error& e) {
      if (!choice.lenient) throw Stuck(std::string("invalid directive: ") + e.what());
    }
  }
  return c.ch.at(callee);
}

}  // namespace detail

/// Executes m[pc] in place. Returns the charged cost; fills `ev` when given.
inline Cost step_in_place(Configuration& c, const CostModel& cm, DirectiveSource& dsrc, const RunOptions& opt,
                          std::vector<AppliedDirective>* consumed, TraceEvent* ev) {
  if (c.final) throw Stuck("configuration is final");
  Frame& f = c.s;
  const Method& m = *f.method;
  if (f.pc >= m.size()) throw Stuck(m.name + ": pc " + std::to_string(f.pc) + " outside the method");
  const Instruction& ins = m.code[f.pc];
  const Point pc = f.pc;
  Cost cost = cm.cost(ins.op, m.kind);
  if (ev) {
    ev->method = m.name;
    ev->version = m.version;
    ev->kind = m.kind;
    ev->pc = pc;
    ev->op = ins.op;
    ev->deopt = false;
    ev->directive.reset();
    ev->origin = m.source_of(pc);
    ev->taken.reset();
    ev->callee.clear();
    ev->transformed = false;
  }
  switch (ins.op) {
    case Opcode::binop: {
      Value v1 = detail::pop_value(f, "binop");
      Value v2 = detail::pop_value(f, "binop");
      f.stack.push_back(detail::apply_binop(ins.bop, v1, v2));
      ++f.pc;
      break;
    }
    case Opcode::push:
      f.stack.push_back(ins.value);
      ++f.pc;
      break;
    case Opcode::pop:
      detail::pop_value(f, "pop");
      ++f.pc;
      break;
    case Opcode::swap: {
      if (f.stack.size() < 2) throw Stuck("swap on short operand stack");
      std::swap(f.stack[f.stack.size() - 1], f.stack[f.stack.size() - 2]);
      ++f.pc;
      break;
    }
    case Opcode::load: {
      const Value* v = f.locals.find(ins.name);
      if (!v) throw Stuck("unbound local '" + ins.name + "'");
      f.stack.push_back(*v);
      ++f.pc;
      break;
    }
    case Opcode::store:
      f.locals.set(ins.name, detail::pop_value(f, "store"));
      ++f.pc;
      break;
    case Opcode::get: {
      auto it = c.heap.find(ins.name);
      if (it == c.heap.end()) throw Stuck("unbound global '" + ins.name + "'");
      f.stack.push_back(it->second);
      ++f.pc;
      break;
    }
    case Opcode::put: {
      auto it = c.heap.find(ins.name);
      if (it == c.heap.end()) throw Stuck("unbound global '" + ins.name + "'");
      it->second = detail::pop_value(f, "put");
      ++f.pc;
      break;
    }
    case Opcode::ifeq:
    case Opcode::ifneq: {
      Value v = detail::pop_value(f, "conditional");
      bool jump = ins.op == Opcode::ifeq ? v == 0 : v != 0;
      f.pc = jump ? ins.target : f.pc + 1;
      if (ev) {
        ev->taken = jump;
        if (!m.optimized.empty()) {
          const SourcePoint& o = ev->origin;
          for (const auto& sp : m.optimized)
            if (sp.method == o.method && sp.pc == o.pc) ev->transformed = true;
        }
      }
      break;
    }
    case Opcode::goto_:
      f.pc = ins.target;
      break;
    case Opcode::invoke: {
      const Method* base = c.program->find(ins.name);
      if (!base) throw Stuck("invoke of unknown method '" + ins.name + "'");
      const std::size_t argc = base->argv.size();
      if (f.stack.size() < argc) throw Stuck("invoke of '" + ins.name + "' with too few arguments");
      Frame callee;
      std::optional<std::string> literal;
      callee.method = detail::activate(c, ins.name, dsrc, opt, m.source_of(pc), consumed, ev ? &literal : nullptr);
      const auto& argv = callee.method->argv;
      for (std::size_t k = argc; k-- > 0;) callee.locals.set(argv[k], detail::pop_value(f, "invoke"));
      f.pc = pc + 1;
      c.cs.push_back(std::move(c.s));
      c.s = std::move(callee);
      if (ev) {
        ev->callee = ins.name;
        ev->directive = std::move(literal);
      }
      break;
    }
    case Opcode::return_: {
      Value v = detail::pop_value(f, "return");
      if (c.cs.empty()) {
        c.final = true;
        c.result = v;
      } else {
        c.s = std::move(c.cs.back());
        c.cs.pop_back();
        c.s.stack.push_back(v);
      }
      break;
    }
    case Opcode::deopt: {
      if (m.version == 0 || m.kind == CodeKind::bytecode) throw Stuck(m.name + ": deopt in bytecode");
      const DeoptMetadata md = ins.md;  // `ins` dies with the native method below
      const Method* base = c.program->find(md.source_method);
      if (!base) throw OracleError("deopt into unknown method '" + md.source_method + "'");
      if (md.resume_pc >= base->size())
        throw OracleError("resume point " + std::to_string(md.resume_pc) + " outside '" + base->name + "'");
      auto rolled = std::make_shared<const Method>(*base);
      c.ch[base->name] = rolled;
      f.method = rolled;
      f.pc = md.resume_pc;
      cost += cm.deopt_penalty;
      if (ev) ev->deopt = true;
      break;
    }
  }
  if (ev) ev->cost = cost;
  return cost;
}

/// Initial configuration: pc 0 of the entry, os = cs = ε. Inputs bind entry
/// arguments (required) and override global initial values.
inline Configuration initial_configuration(const Program& p, const std::map<std::string, Value>& inputs,
                                           const CodeHeap* ch = nullptr) {
  Configuration c;
  c.program = &p;
  c.ch = ch ? *ch : code_heap_of(p);
  const Method& entry = p.method(p.entry);
  for (const auto& g : p.globals) c.heap[g.name] = g.initial;
  for (const auto& [k, v] : inputs) {
    bool is_arg = std::find(entry.argv.begin(), entry.argv.end(), k) != entry.argv.end();
    if (c.heap.count(k)) c.heap[k] = v;
    else if (!is_arg) throw MissingInput("no input named '" + k + "'");
  }
  for (const auto& a : entry.argv) {
    auto it = inputs.find(a);
    if (it == inputs.end()) throw MissingInput("missing binding for entry argument '" + a + "'");
    c.s.locals.set(a, it->second);
  }
  c.s.method = c.ch.at(p.entry);
  c.s.pc = 0;
  return c;
}

/// Runs the entry activation and then steps until final.
inline RunResult run_configuration(Configuration c, DirectiveSource& dsrc, const CostModel& cm,
                                   const RunOptions& opt = {}) {
  RunResult r;
  const bool want_events = opt.record_trace || dsrc.observes();
  c.s.method = detail::activate(c, c.program->entry, dsrc, opt, std::nullopt, &r.schedule_consumed, nullptr);
  TraceEvent ev;
  while (!c.final) {
    if (r.steps >= opt.step_budget) throw NonTermination(opt.step_budget);
    if (!want_events && c.s.method->code[c.s.pc].op == Opcode::deopt) ++r.deopts;
    Cost cost = step_in_place(c, cm, dsrc, opt, &r.schedule_consumed, want_events ? &ev : nullptr);
    ++r.steps;
    r.total_cost += cost;
    if (want_events) {
      if (ev.deopt) ++r.deopts;
      dsrc.observe(ev);
      if (opt.record_trace) r.trace.push_back(ev);
    }
  }
  r.final_heap = std::move(c.heap);
  r.return_value = c.result;
  r.final_code = std::move(c.ch);
  return r;
}

inline RunResult run(const Program& p, const std::map<std::string, Value>& inputs, DirectiveSource& dsrc,
                     const CostModel& cm, const RunOptions& opt = {}, const CodeHeap* ch = nullptr) {
  return run_configuration(initial_configuration(p, inputs, ch), dsrc, cm, opt);
}

inline RunResult run(const Program& p, const std::map<std::string, Value>& inputs, const CostModel& cm,
                     const RunOptions& opt = {}) {
  NoDirectives none;
  return run(p, inputs, none, cm, opt);
}

/// One transition of a copied configuration.
inline std::pair<Configuration, TraceEvent> step(const Configuration& c, const CostModel& cm, DirectiveSource& dsrc,
                                                 const RunOptions& opt = {}) {
  Configuration next = c;
  TraceEvent ev;
  step_in_place(next, cm, dsrc, opt, nullptr, &ev);
  return {std::move(next), std::move(ev)};
}

/// Rolls the code heap back and resumes the bytecode of md.source_method at md.resume_pc.
inline Configuration deopt_oracle(const Configuration& c, const DeoptMetadata& md) {
  if (!c.s.method || c.s.method->version == 0) throw Stuck("deopt premise violated: executing version 0");
  const Method* base = c.program->find(md.source_method);
  if (!base) throw OracleError("deopt into unknown method '" + md.source_method + "'");
  if (md.resume_pc >= base->size()) throw OracleError("resume point outside '" + base->name + "'");
  Configuration next = c;
  auto rolled = std::make_shared<const Method>(*base);
  next.ch[base->name] = rolled;
  next.s.method = rolled;
  next.s.pc = md.resume_pc;
  return next;
}

/// (pc, version) of the events executed by `m`, in order.
inline std::vector<std::pair<Point, unsigned>> project_trace(const std::vector<TraceEvent>& tr, const std::string& m) {
  std::vector<std::pair<Point, unsigned>> out;
  for (const auto& e : tr)
    if (e.method == m) out.emplace_back(e.pc, e.version);
  return out;
}

inline void write_trace_csv(std::ostream& os, const std::vector<TraceEvent>& tr) {
  os << "event_idx,method,version,pc,opcode,cost,deopt\n";
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const auto& e = tr[k];
    os << k << ',' << e.method << ',' << e.version << ',' << e.pc << ',' << mnemonic(e.op) << ',' << e.cost << ','
       << (e.deopt ? 1 : 0) << '\n';
  }
}

}  // namespace jitleak
