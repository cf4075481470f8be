#pragma once

// Static well-formedness of programs.

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "jitleak/bytecode.hpp"
#include "jitleak/cfg.hpp"

namespace jitleak {

enum class Rule {
  MissingReturn,
  EarlyReturn,
  JumpOutOfRange,
  FallOffEnd,
  StackUnderflow,
  StackMismatch,
  UnboundLocal,
  UndeclaredGlobal,
  UnknownMethod,
  RecursionCycle,
  DeoptInBytecode,
  NotBytecode,
  UnreachableExit,
  EntryMissing,
  UnknownPublicInput,
  DuplicateArgument,
};

inline std::string_view rule_name(Rule r) {
  switch (r) {
    case Rule::MissingReturn: return "MissingReturn";
    case Rule::EarlyReturn: return "EarlyReturn";
    case Rule::JumpOutOfRange: return "JumpOutOfRange";
    case Rule::FallOffEnd: return "FallOffEnd";
    case Rule::StackUnderflow: return "StackUnderflow";
    case Rule::StackMismatch: return "StackMismatch";
    case Rule::UnboundLocal: return "UnboundLocal";
    case Rule::UndeclaredGlobal: return "UndeclaredGlobal";
    case Rule::UnknownMethod: return "UnknownMethod";
    case Rule::RecursionCycle: return "RecursionCycle";
    case Rule::DeoptInBytecode: return "DeoptInBytecode";
    case Rule::NotBytecode: return "NotBytecode";
    case Rule::UnreachableExit: return "UnreachableExit";
    case Rule::EntryMissing: return "EntryMissing";
    case Rule::UnknownPublicInput: return "UnknownPublicInput";
    case Rule::DuplicateArgument: return "DuplicateArgument";
  }
  return "?";
}

struct Violation {
  Rule rule;
  std::string method;
  std::optional<Point> point;
  std::string detail;

  std::string to_string() const {
    std::string s(rule_name(rule));
    s += "(" + method;
    if (point) s += "," + std::to_string(*point);
    s += ")";
    if (!detail.empty()) s += ": " + detail;
    return s;
  }
};

/// Operand-stack depth before each point, for points reachable from 0.
/// Methods whose depths conflict or underflow report violations instead.
struct DepthInfo {
  std::vector<std::optional<std::size_t>> depth;
  std::vector<Violation> violations;
};

inline DepthInfo operand_depths(const Program& p, const Method& m) {
  DepthInfo out;
  out.depth.assign(m.size(), std::nullopt);
  if (m.size() == 0) return out;
  auto argc = [&](const std::string& callee) -> std::size_t {
    const Method* c = p.find(callee);
    return c ? c->argv.size() : 0;
  };
  std::vector<Point> work{0};
  out.depth[0] = 0;
  std::set<Point> reported;
  while (!work.empty()) {
    Point i = work.back();
    work.pop_back();
    std::size_t d = *out.depth[i];
    auto [pops, pushes] = stack_effect(m.code[i], argc);
    if (d < pops) {
      if (reported.insert(i).second)
        out.violations.push_back({Rule::StackUnderflow, m.name, i,
                                  "needs " + std::to_string(pops) + " operands, has " + std::to_string(d)});
      continue;
    }
    std::size_t after = d - pops + pushes;
    for (Point s : nxt(m, i)) {
      if (s >= m.size()) continue;
      if (!out.depth[s]) {
        out.depth[s] = after;
        work.push_back(s);
      } else if (*out.depth[s] != after && reported.insert(s).second) {
        out.violations.push_back({Rule::StackMismatch, m.name, s,
                                  "depth " + std::to_string(*out.depth[s]) + " vs " + std::to_string(after)});
      }
    }
  }
  return out;
}

namespace detail {

inline void check_definite_assignment(const Method& m, std::vector<Violation>& out) {
  const std::size_t n = m.size();
  // Must-analysis: the locals assigned on every path to a point.
  std::vector<std::optional<std::set<std::string>>> in(n);
  in[0] = std::set<std::string>(m.argv.begin(), m.argv.end());
  std::vector<Point> work{0};
  while (!work.empty()) {
    Point i = work.back();
    work.pop_back();
    auto cur = *in[i];
    if (m.code[i].op == Opcode::store) cur.insert(m.code[i].name);
    for (Point s : nxt(m, i)) {
      if (s >= n) continue;
      if (!in[s]) {
        in[s] = cur;
        work.push_back(s);
      } else {
        std::set<std::string> meet;
        for (const auto& x : *in[s])
          if (cur.count(x)) meet.insert(x);
        if (meet != *in[s]) {
          in[s] = std::move(meet);
          work.push_back(s);
        }
      }
    }
  }
  for (Point i = 0; i < n; ++i) {
    if (!in[i] || m.code[i].op != Opcode::load) continue;
    if (!in[i]->count(m.code[i].name))
      out.push_back({Rule::UnboundLocal, m.name, i, "local '" + m.code[i].name + "' may be unassigned"});
  }
}

}  // namespace detail

inline std::vector<Violation> validate_method(const Program& p, const Method& m) {
  std::vector<Violation> out;
  const std::size_t n = m.size();
  if (m.version != 0 || m.kind != CodeKind::bytecode)
    out.push_back({Rule::NotBytecode, m.name, std::nullopt, "program methods must be version-0 bytecode"});
  {
    std::set<std::string> seen;
    for (const auto& a : m.argv)
      if (!seen.insert(a).second) out.push_back({Rule::DuplicateArgument, m.name, std::nullopt, a});
  }
  std::optional<Point> last_return;
  for (Point i = 0; i < n; ++i)
    if (m.code[i].op == Opcode::return_) last_return = i;
  if (!last_return) {
    out.push_back({Rule::MissingReturn, m.name, std::nullopt, "method must contain return"});
    return out;
  }
  bool structural = true;
  for (Point i = 0; i < n; ++i) {
    const Instruction& ins = m.code[i];
    if (ins.is_jump() && ins.target >= n) {
      out.push_back({Rule::JumpOutOfRange, m.name, i, "target " + std::to_string(ins.target)});
      structural = false;
    }
    if (ins.op == Opcode::return_ && i != *last_return) out.push_back({Rule::EarlyReturn, m.name, i, ""});
    if (ins.op == Opcode::deopt) {
      out.push_back({Rule::DeoptInBytecode, m.name, i, ""});
      structural = false;
    }
    if ((ins.op == Opcode::get || ins.op == Opcode::put) && !p.find_global(ins.name))
      out.push_back({Rule::UndeclaredGlobal, m.name, i, ins.name});
    if (ins.op == Opcode::invoke && !p.find(ins.name)) out.push_back({Rule::UnknownMethod, m.name, i, ins.name});
  }
  if (!m.code.back().is_terminator()) {
    out.push_back({Rule::FallOffEnd, m.name, n - 1, "last instruction falls through"});
    structural = false;
  }
  if (!structural) return out;

  auto depths = operand_depths(p, m);
  out.insert(out.end(), depths.violations.begin(), depths.violations.end());
  detail::check_definite_assignment(m, out);

  // Every reachable point must be able to reach the return.
  std::vector<std::set<Point>> succ(n), pred(n);
  for (Point i = 0; i < n; ++i)
    for (Point s : nxt(m, i)) {
      succ[i].insert(s);
      pred[s].insert(i);
    }
  auto reach = reachable_from(succ, 0);
  reach.insert(0);
  std::set<Point> coreach;
  for (Point i = 0; i < n; ++i) {
    if (m.code[i].op != Opcode::return_) continue;
    auto back = reachable_from(pred, i);
    coreach.insert(back.begin(), back.end());
    coreach.insert(i);
  }
  for (Point i : reach) {
    if (!coreach.count(i)) {
      out.push_back({Rule::UnreachableExit, m.name, i, "no path to return"});
      break;
    }
  }
  return out;
}

inline std::vector<Violation> validate(const Program& p) {
  std::vector<Violation> out;
  if (!p.find(p.entry)) out.push_back({Rule::EntryMissing, p.entry, std::nullopt, "entry method not defined"});
  for (const auto& x : p.public_inputs) {
    bool known = p.find_global(x) != nullptr;
    if (const Method* e = p.find(p.entry))
      for (const auto& a : e->argv) known |= a == x;
    if (!known) out.push_back({Rule::UnknownPublicInput, p.entry, std::nullopt, x});
  }
  {
    std::set<std::string> names;
    for (const auto& m : p.methods)
      if (!names.insert(m.name).second)
        out.push_back({Rule::UnknownMethod, m.name, std::nullopt, "duplicate method name"});
  }
  for (const auto& m : p.methods) {
    auto v = validate_method(p, m);
    out.insert(out.end(), v.begin(), v.end());
  }

  // Call graph must be acyclic.
  std::map<std::string, int> color;  // 0 white, 1 grey, 2 black
  std::set<std::string> reported;
  std::function<void(const Method&)> dfs = [&](const Method& m) {
    color[m.name] = 1;
    for (const auto& ins : m.code) {
      if (ins.op != Opcode::invoke) continue;
      const Method* c = p.find(ins.name);
      if (!c) continue;
      if (color[c->name] == 1) {
        if (reported.insert(c->name).second)
          out.push_back({Rule::RecursionCycle, m.name, std::nullopt, "cycle through '" + c->name + "'"});
      } else if (color[c->name] == 0) {
        dfs(*c);
      }
    }
    color[m.name] = 2;
  };
  for (const auto& m : p.methods)
    if (color[m.name] == 0) dfs(m);
  return out;
}

/// Methods in callee-before-caller order. Requires an acyclic call graph.
inline std::vector<std::string> callees_first(const Program& p) {
  std::vector<std::string> order;
  std::set<std::string> done;
  std::function<void(const Method&)> visit = [&](const Method& m) {
    if (!done.insert(m.name).second) return;
    for (const auto& ins : m.code)
      if (ins.op == Opcode::invoke)
        if (const Method* c = p.find(ins.name)) visit(*c);
    order.push_back(m.name);
  };
  for (const auto& m : p.methods) visit(m);
  return order;
}

}  // namespace jitleak
