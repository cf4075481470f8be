#pragma once

// Program model of the JIT machine: instructions, methods, programs.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "jitleak/error.hpp"

namespace jitleak {

using Value = std::int64_t;
using Point = std::size_t;

enum class BinOp { add, sub, mul, div, eq, lt, and_, or_, xor_ };

enum class Opcode { binop, push, pop, swap, load, store, get, put, ifeq, ifneq, goto_, invoke, return_, deopt };

inline constexpr std::string_view mnemonic(Opcode op) {
  switch (op) {
    case Opcode::binop: return "binop";
    case Opcode::push: return "push";
    case Opcode::pop: return "pop";
    case Opcode::swap: return "swap";
    case Opcode::load: return "load";
    case Opcode::store: return "store";
    case Opcode::get: return "get";
    case Opcode::put: return "put";
    case Opcode::ifeq: return "ifeq";
    case Opcode::ifneq: return "ifneq";
    case Opcode::goto_: return "goto";
    case Opcode::invoke: return "invoke";
    case Opcode::return_: return "return";
    case Opcode::deopt: return "deopt";
  }
  return "?";
}

inline constexpr std::string_view mnemonic(BinOp op) {
  switch (op) {
    case BinOp::add: return "add";
    case BinOp::sub: return "sub";
    case BinOp::mul: return "mul";
    case BinOp::div: return "div";
    case BinOp::eq: return "eq";
    case BinOp::lt: return "lt";
    case BinOp::and_: return "and";
    case BinOp::or_: return "or";
    case BinOp::xor_: return "xor";
  }
  return "?";
}

inline std::optional<Opcode> opcode_from(std::string_view s) {
  for (auto op : {Opcode::binop, Opcode::push, Opcode::pop, Opcode::swap, Opcode::load, Opcode::store, Opcode::get,
                  Opcode::put, Opcode::ifeq, Opcode::ifneq, Opcode::goto_, Opcode::invoke, Opcode::return_,
                  Opcode::deopt}) {
    if (mnemonic(op) == s) return op;
  }
  return std::nullopt;
}

inline std::optional<BinOp> binop_from(std::string_view s) {
  for (auto op : {BinOp::add, BinOp::sub, BinOp::mul, BinOp::div, BinOp::eq, BinOp::lt, BinOp::and_, BinOp::or_,
                  BinOp::xor_}) {
    if (mnemonic(op) == s) return op;
  }
  return std::nullopt;
}

inline constexpr std::size_t kOpcodeCount = 14;

inline constexpr std::size_t index_of(Opcode op) { return static_cast<std::size_t>(op); }

/// Where execution resumes when an uncommon trap fires.
struct DeoptMetadata {
  std::string source_method;
  Point resume_pc = 0;

  friend bool operator==(const DeoptMetadata&, const DeoptMetadata&) = default;
};

struct Instruction {
  Opcode op = Opcode::pop;
  BinOp bop = BinOp::add;  // binop
  Value value = 0;         // push
  std::string name;        // load/store/get/put variable, invoke callee
  Point target = 0;        // ifeq/ifneq/goto
  DeoptMetadata md;        // deopt

  static Instruction binop(BinOp b) { Instruction i; i.op = Opcode::binop; i.bop = b; return i; }
  static Instruction push(Value v) { Instruction i; i.op = Opcode::push; i.value = v; return i; }
  static Instruction pop() { Instruction i; i.op = Opcode::pop; return i; }
  static Instruction swap() { Instruction i; i.op = Opcode::swap; return i; }
  static Instruction load(std::string x) { return named(Opcode::load, std::move(x)); }
  static Instruction store(std::string x) { return named(Opcode::store, std::move(x)); }
  static Instruction get(std::string y) { return named(Opcode::get, std::move(y)); }
  static Instruction put(std::string y) { return named(Opcode::put, std::move(y)); }
  static Instruction ifeq(Point j) { return jump(Opcode::ifeq, j); }
  static Instruction ifneq(Point j) { return jump(Opcode::ifneq, j); }
  static Instruction goto_(Point j) { return jump(Opcode::goto_, j); }
  static Instruction invoke(std::string m) { return named(Opcode::invoke, std::move(m)); }
  static Instruction return_() { Instruction i; i.op = Opcode::return_; return i; }
  static Instruction deopt(DeoptMetadata md) { Instruction i; i.op = Opcode::deopt; i.md = std::move(md); return i; }

  bool is_conditional() const noexcept { return op == Opcode::ifeq || op == Opcode::ifneq; }
  bool is_jump() const noexcept { return is_conditional() || op == Opcode::goto_; }
  /// Control never continues at the next point.
  bool is_terminator() const noexcept {
    return op == Opcode::goto_ || op == Opcode::return_ || op == Opcode::deopt;
  }

  friend bool operator==(const Instruction& a, const Instruction& b) {
    if (a.op != b.op) return false;
    switch (a.op) {
      case Opcode::binop: return a.bop == b.bop;
      case Opcode::push: return a.value == b.value;
      case Opcode::load:
      case Opcode::store:
      case Opcode::get:
      case Opcode::put:
      case Opcode::invoke: return a.name == b.name;
      case Opcode::ifeq:
      case Opcode::ifneq:
      case Opcode::goto_: return a.target == b.target;
      case Opcode::deopt: return a.md == b.md;
      default: return true;
    }
  }

 private:
  static Instruction named(Opcode op, std::string n) { Instruction i; i.op = op; i.name = std::move(n); return i; }
  static Instruction jump(Opcode op, Point j) { Instruction i; i.op = op; i.target = j; return i; }
};

enum class CodeKind { bytecode, native };

/// Provenance of one instruction of a (possibly compiled) method, in
/// bytecode coordinates. Synthetic instructions have no pc.
struct SourcePoint {
  std::string method;
  std::optional<Point> pc;
  bool inlined = false;   // comes from a callee spliced in by inlining
  bool flipped = false;   // conditional sense inverted relative to bytecode

  friend bool operator==(const SourcePoint&, const SourcePoint&) = default;
};

struct Method {
  std::string name;
  std::vector<std::string> argv;
  std::vector<Instruction> code;
  unsigned version = 0;
  CodeKind kind = CodeKind::bytecode;
  /// Per-instruction provenance; empty means the identity map of a bytecode method.
  std::vector<SourcePoint> source;
  /// Bytecode origins of the conditionals rewritten by branch optimizations.
  std::vector<SourcePoint> optimized;

  std::size_t size() const noexcept { return code.size(); }
  const Instruction& operator[](Point i) const { return code.at(i); }

  SourcePoint source_of(Point i) const {
    if (source.empty()) return SourcePoint{name, i, false, false};
    return source.at(i);
  }

  /// Structural equality over the program model (provenance excluded).
  friend bool operator==(const Method& a, const Method& b) {
    return a.name == b.name && a.argv == b.argv && a.code == b.code && a.version == b.version && a.kind == b.kind;
  }
};

struct Global {
  std::string name;
  Value initial = 0;
  friend bool operator==(const Global&, const Global&) = default;
};

struct Program {
  std::vector<Global> globals;
  std::vector<Method> methods;  // declaration order
  std::string entry;
  std::set<std::string> public_inputs;

  const Method* find(std::string_view n) const {
    auto it = std::find_if(methods.begin(), methods.end(), [&](const Method& m) { return m.name == n; });
    return it == methods.end() ? nullptr : &*it;
  }

  const Method& method(std::string_view n) const {
    if (const Method* m = find(n)) return *m;
    throw UnknownMethod(std::string(n));
  }

  const Global* find_global(std::string_view n) const {
    auto it = std::find_if(globals.begin(), globals.end(), [&](const Global& g) { return g.name == n; });
    return it == globals.end() ? nullptr : &*it;
  }

  /// Entry arguments and globals not annotated public.
  std::set<std::string> secret_inputs() const {
    std::set<std::string> out;
    if (const Method* e = find(entry)) {
      for (const auto& x : e->argv)
        if (!public_inputs.count(x)) out.insert(x);
    }
    for (const auto& g : globals)
      if (!public_inputs.count(g.name)) out.insert(g.name);
    return out;
  }

  friend bool operator==(const Program&, const Program&) = default;
};

/// Instructions popped and pushed by `ins`; `argc` resolves invoke arity.
template <class ArgCount>
std::pair<std::size_t, std::size_t> stack_effect(const Instruction& ins, ArgCount&& argc) {
  switch (ins.op) {
    case Opcode::binop: return {2, 1};
    case Opcode::push: return {0, 1};
    case Opcode::pop: return {1, 0};
    case Opcode::swap: return {2, 2};
    case Opcode::load: return {0, 1};
    case Opcode::store: return {1, 0};
    case Opcode::get: return {0, 1};
    case Opcode::put: return {1, 0};
    case Opcode::ifeq:
    case Opcode::ifneq: return {1, 0};
    case Opcode::goto_: return {0, 0};
    case Opcode::invoke: return {argc(ins.name), 1};
    case Opcode::return_: return {1, 0};
    case Opcode::deopt: return {0, 0};
  }
  return {0, 0};
}

}  // namespace jitleak
