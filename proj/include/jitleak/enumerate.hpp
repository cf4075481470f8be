#pragma once

// Finite directive universe and bounded schedule enumeration.

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "jitleak/schedule.hpp"

namespace jitleak {

struct UniverseOptions {
  bool omega_pairs = true;
  bool inline_with_omega = true;
  std::size_t max_inline_depth = 2;
  /// Restricts the branch points considered for ω; all conditionals when empty.
  std::function<bool(const std::string&, Point)> branch_filter;
};

namespace detail {

inline bool compiles(const Program& p, const Directive& d) {
  try {
    compile_directive(p, d);
    return true;
  } catch (const Error&) {
    return false;
  }
}

inline std::vector<BranchOpt> omega_variants(Point i) {
  std::vector<BranchOpt> out;
  for (OptKind k : {OptKind::bp, OptKind::oc})
    for (Pref b : {Pref::if_b, Pref::else_b}) out.push_back({k, i, b});
  return out;
}

inline void inline_trees(const Program& p, const std::string& m, std::size_t depth, std::vector<InlineTree>& out) {
  if (depth == 0) return;
  const Method& body = p.method(m);
  for (Point k = 0; k < body.size(); ++k) {
    if (body.code[k].op != Opcode::invoke) continue;
    const std::string& c = body.code[k].name;
    out.push_back(InlineTree{m, {{k, InlineTree{c, {}}}}});
    std::vector<InlineTree> sub;
    inline_trees(p, c, depth - 1, sub);
    for (auto& t : sub) out.push_back(InlineTree{m, {{k, std::move(t)}}});
  }
}

}  // namespace detail

/// Directives for `m`: plain compilation, every single ω on a conditional,
/// ω pairs, single-site inline trees up to the depth bound, and single-site
/// trees combined with one ω in the inlined body. Only compiling directives are kept.
inline std::vector<Directive> directive_universe(const Program& p, const std::string& m,
                                                 const UniverseOptions& opt = {}) {
  std::vector<Directive> out;
  std::set<std::string> seen;
  auto add = [&](Directive d) {
    if (!detail::compiles(p, d)) return;
    if (seen.insert(format_directive(d)).second) out.push_back(std::move(d));
  };
  auto eligible = [&](const Method& body, Point k) {
    if (!body.code[k].is_conditional()) return false;
    if (!opt.branch_filter) return true;
    SourcePoint sp = body.source_of(k);
    return sp.pc && opt.branch_filter(sp.method, *sp.pc);
  };

  add(Directive::plain(m));
  const Method& body = p.method(m);
  std::vector<Point> branches;
  for (Point k = 0; k < body.size(); ++k)
    if (eligible(body, k)) branches.push_back(k);
  for (Point i : branches)
    for (const auto& o : detail::omega_variants(i)) add(Directive::make({m, {}}, {o}));
  if (opt.omega_pairs) {
    for (std::size_t a = 0; a < branches.size(); ++a)
      for (std::size_t b = a + 1; b < branches.size(); ++b)
        for (const auto& o1 : detail::omega_variants(branches[a]))
          for (const auto& o2 : detail::omega_variants(branches[b])) add(Directive::make({m, {}}, {o1, o2}));
  }
  std::vector<InlineTree> trees;
  detail::inline_trees(p, m, opt.max_inline_depth, trees);
  for (const auto& t : trees) {
    add(Directive::make(t));
    if (!opt.inline_with_omega || t.depth() != 1) continue;
    Method tm;
    try {
      tm = inline_tree(p, t);
    } catch (const Error&) {
      continue;
    }
    for (Point k = 0; k < tm.size(); ++k)
      if (eligible(tm, k))
        for (const auto& o : detail::omega_variants(k)) add(Directive::make(t, {o}));
  }
  return out;
}

/// Activations of each method in the JIT-free run.
inline std::map<std::string, std::size_t> activation_counts(const Program& p, const std::map<std::string, Value>& inputs,
                                                            const CostModel& cm, const RunOptions& opt = {}) {
  RunOptions o = opt;
  o.record_trace = true;
  auto r = run(p, inputs, cm, o);
  std::map<std::string, std::size_t> n{{p.entry, 1}};
  for (const auto& e : r.trace)
    if (e.op == Opcode::invoke) ++n[e.callee];
  return n;
}

struct EnumOptions {
  UniverseOptions universe;
  /// Activations of each method that may receive a directive: 0 .. ordinals-1.
  std::size_t ordinals = 2;
  std::size_t max_schedules = 1'000'000;
  const Policy* policy = nullptr;
  /// Keep only directives for which this returns true (attack classes).
  std::function<bool(const Directive&)> directive_filter;
};

struct Slot {
  std::string method;
  std::size_t ordinal;
};

/// Candidate schedules with at most `depth` non-empty directives, bound per
/// method activation. Validity is not checked; see enumerate_schedules.
inline std::vector<Schedule> enumerate_candidates(const Program& p, const std::map<std::string, std::size_t>& counts,
                                                  std::size_t depth, const EnumOptions& opt = {}) {
  std::map<std::string, std::vector<Directive>> uni;
  std::vector<Slot> slots;
  for (const auto& [m, n] : counts) {
    if (!p.find(m)) continue;
    auto& u = uni[m];
    for (auto& d : directive_universe(p, m, opt.universe)) {
      if (opt.policy && !is_compliant(p, d, m, *opt.policy)) continue;
      if (opt.directive_filter && !opt.directive_filter(d)) continue;
      u.push_back(std::move(d));
    }
    if (u.empty()) continue;
    for (std::size_t k = 0; k < std::min(n, opt.ordinals); ++k) slots.push_back({m, k});
  }

  std::vector<Schedule> out{Schedule{}};
  auto push = [&](Schedule s) {
    if (out.size() >= opt.max_schedules) throw BudgetExceeded("schedule enumeration exceeds " +
                                                              std::to_string(opt.max_schedules));
    out.push_back(std::move(s));
  };
  auto bind = [](const Slot& s, const Directive& d) { return Binding{s.method, s.ordinal, d}; };
  if (depth >= 1)
    for (const auto& s : slots)
      for (const auto& d : uni.at(s.method)) push(Schedule{{bind(s, d)}});
  if (depth >= 2)
    for (std::size_t a = 0; a < slots.size(); ++a)
      for (std::size_t b = a + 1; b < slots.size(); ++b)
        for (const auto& d1 : uni.at(slots[a].method))
          for (const auto& d2 : uni.at(slots[b].method)) push(Schedule{{bind(slots[a], d1), bind(slots[b], d2)}});
  return out;
}

/// The valid candidates: those whose run on `inputs` does not get stuck.
inline std::vector<Schedule> enumerate_schedules(const Program& p, const std::map<std::string, Value>& inputs,
                                                 std::size_t depth, const CostModel& cm,
                                                 const EnumOptions& opt = {}, const RunOptions& ropt = {}) {
  auto cands = enumerate_candidates(p, activation_counts(p, inputs, cm, ropt), depth, opt);
  RunOptions quiet = ropt;
  quiet.record_trace = false;
  const CodeHeap ch = code_heap_of(p);
  std::vector<Schedule> out;
  for (auto& s : cands) {
    ScheduleSource src(s);
    try {
      run(p, inputs, src, cm, quiet, &ch);
    } catch (const Stuck&) {
      continue;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace jitleak
