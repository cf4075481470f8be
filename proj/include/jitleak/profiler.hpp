#pragma once

// Counter profile folded from trace events, and the profile-driven directive generator pf.

#include <map>
#include <string>
#include <utility>

#include "jitleak/interpreter.hpp"
#include "jitleak/policy.hpp"

namespace jitleak {

struct BranchCounts {
  std::size_t taken = 0;      // if-branch: the jump was followed in the bytecode sense
  std::size_t not_taken = 0;  // else-branch: fall-through
  std::size_t total() const { return taken + not_taken; }
  friend bool operator==(const BranchCounts&, const BranchCounts&) = default;
};

using SiteKey = std::pair<std::string, Point>;

/// Counts keyed by bytecode origin, so native and inlined copies of a point share one counter.
struct Profile {
  std::map<std::string, std::size_t> invocations;
  std::map<SiteKey, BranchCounts> branches;
  std::map<SiteKey, std::size_t> calls;

  std::size_t invocation_count(const std::string& m) const {
    auto it = invocations.find(m);
    return it == invocations.end() ? 0 : it->second;
  }
  BranchCounts branch(const std::string& m, Point i) const {
    auto it = branches.find({m, i});
    return it == branches.end() ? BranchCounts{} : it->second;
  }
  std::size_t call_count(const std::string& m, Point site) const {
    auto it = calls.find({m, site});
    return it == calls.end() ? 0 : it->second;
  }

  friend bool operator==(const Profile&, const Profile&) = default;
};

inline void update_profile_in_place(Profile& pr, const TraceEvent& ev) {
  if (ev.op == Opcode::invoke) {
    ++pr.invocations[ev.callee];
    if (ev.origin.pc) ++pr.calls[{ev.origin.method, *ev.origin.pc}];
  } else if ((ev.op == Opcode::ifeq || ev.op == Opcode::ifneq) && ev.taken && ev.origin.pc) {
    bool taken = *ev.taken != ev.origin.flipped;
    auto& c = pr.branches[{ev.origin.method, *ev.origin.pc}];
    ++(taken ? c.taken : c.not_taken);
  }
}

inline Profile update_profile(Profile pr, const TraceEvent& ev) {
  update_profile_in_place(pr, ev);
  return pr;
}

struct PfConfig {
  std::size_t compile_threshold = 10;
  std::size_t inline_threshold = 10;
  std::size_t inline_size = 12;
  std::size_t min_obs = 8;
  double oc_cutoff = 0.02;
  double bp_cutoff = 0.85;
  std::size_t max_inline_depth = 2;
};

namespace detail {

inline InlineTree pf_tree(const Program& p, const Profile& pr, const std::string& m, const PfConfig& cfg,
                          const Policy* pol, std::size_t depth) {
  InlineTree t{m, {}};
  if (depth >= cfg.max_inline_depth) return t;
  const Method& body = p.method(m);
  for (Point k = 0; k < body.size(); ++k) {
    const Instruction& ins = body.code[k];
    if (ins.op != Opcode::invoke) continue;
    if (pr.call_count(m, k) < cfg.inline_threshold) continue;
    if (p.method(ins.name).size() > cfg.inline_size) continue;
    if (pol && pol->prot1.count(ins.name)) continue;
    t.edges.push_back({k, pf_tree(p, pr, ins.name, cfg, pol, depth + 1)});
  }
  return t;
}

inline std::optional<BranchOpt> pf_branch(const BranchCounts& c, Point at, const PfConfig& cfg) {
  if (c.total() < cfg.min_obs) return std::nullopt;
  const double n = static_cast<double>(c.total());
  const bool if_dominant = c.taken >= c.not_taken;
  const double minority = static_cast<double>(if_dominant ? c.not_taken : c.taken) / n;
  const Pref side = if_dominant ? Pref::if_b : Pref::else_b;
  if (minority < cfg.oc_cutoff) return BranchOpt{OptKind::oc, at, side};
  if (1.0 - minority >= cfg.bp_cutoff) return BranchOpt{OptKind::bp, at, side};
  return std::nullopt;
}

}  // namespace detail

/// pf_m(π̂). Only version-0 methods past the compile threshold are compiled.
/// With a policy the generator never proposes a non-compliant directive.
inline Directive pf_next_directive(const Program& p, const Profile& pr, const std::string& m, const PfConfig& cfg,
                                   unsigned current_version = 0, const Policy* pol = nullptr) {
  if (current_version != 0) return Directive::none();
  if (pr.invocation_count(m) < cfg.compile_threshold) return Directive::none();
  if (pol && pol->mode == Mode::full && pol->prot1.count(m)) return Directive::none();

  Directive d = Directive::make(detail::pf_tree(p, pr, m, cfg, pol, 0));
  Method cur = inline_tree(p, d.tree);
  // Candidates in ascending t(m) order; each is tried against the method
  // transformed by the entries kept so far.
  std::vector<std::optional<Point>> pos(cur.size());
  for (Point k = 0; k < cur.size(); ++k) pos[k] = k;
  const Method tm = cur;
  for (Point k = 0; k < tm.size(); ++k) {
    if (!tm.code[k].is_conditional() || !pos[k]) continue;
    SourcePoint sp = tm.source_of(k);
    if (!sp.pc) continue;
    if (pol && pol->protects(sp.method, *sp.pc)) continue;
    auto o = detail::pf_branch(pr.branch(sp.method, *sp.pc), *pos[k], cfg);
    if (!o) continue;
    TransformResult r;
    try {
      r = apply_branch_opt(cur, *o);
    } catch (const TransformError&) {
      // Pruning an inlined arm is refused; prediction still applies.
      if (o->kind != OptKind::oc) continue;
      o->kind = OptKind::bp;
      try {
        r = apply_branch_opt(cur, *o);
      } catch (const TransformError&) {
        continue;
      }
    }
    for (auto& q : pos)
      if (q) q = *q < r.map.size() ? r.map[*q] : std::nullopt;
    cur = std::move(r.method);
    d.omega.push_back({o->kind, k, o->pref});
  }
  return d;
}

}  // namespace jitleak
