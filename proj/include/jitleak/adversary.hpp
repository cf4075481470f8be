#pragma once

// Schedule search for the largest cost gap between two pub-equal inputs.

#include <cstdlib>

#include "jitleak/enumerate.hpp"

namespace jitleak {

enum class AttackClass { any, bp, oc, inline_ };

inline std::string_view to_string(AttackClass a) {
  switch (a) {
    case AttackClass::any: return "any";
    case AttackClass::bp: return "bp";
    case AttackClass::oc: return "oc";
    case AttackClass::inline_: return "inline";
  }
  return "?";
}

inline AttackClass attack_class_from(std::string_view s) {
  if (s == "any") return AttackClass::any;
  if (s == "bp") return AttackClass::bp;
  if (s == "oc") return AttackClass::oc;
  if (s == "inline") return AttackClass::inline_;
  throw Error("unknown attack class '" + std::string(s) + "'");
}

/// bp: only branch prediction; oc: at least one uncommon trap; inline: a non-trivial tree.
inline bool in_class(const Directive& d, AttackClass a) {
  if (d.empty() || a == AttackClass::any) return true;
  auto has = [&](OptKind k) {
    return std::any_of(d.omega.begin(), d.omega.end(), [&](const BranchOpt& o) { return o.kind == k; });
  };
  switch (a) {
    case AttackClass::bp: return has(OptKind::bp) && !has(OptKind::oc);
    case AttackClass::oc: return has(OptKind::oc);
    case AttackClass::inline_: return !d.tree.edges.empty();
    default: return true;
  }
}

struct AttackOptions {
  std::size_t depth = 2;
  std::size_t budget = 20'000;  // schedule evaluations
  AttackClass attack = AttackClass::any;
  const Policy* policy = nullptr;
  UniverseOptions universe;
  std::size_t ordinals = 2;
};

struct AttackResult {
  Schedule witness;
  Cost delta = 0;
  Cost cost_a = 0;
  Cost cost_b = 0;
  std::size_t evaluated = 0;
  bool exhaustive = true;  // every candidate up to the depth bound was evaluated
};

namespace detail {

inline std::optional<std::pair<Cost, Cost>> pair_costs(const Program& p, const std::map<std::string, Value>& a,
                                                       const std::map<std::string, Value>& b, const Schedule& s,
                                                       const CostModel& cm, const CodeHeap& ch) {
  RunOptions quiet;
  quiet.record_trace = false;
  try {
    ScheduleSource sa(s), sb(s);
    Cost ca = run(p, a, sa, cm, quiet, &ch).total_cost;
    Cost cb = run(p, b, sb, cm, quiet, &ch).total_cost;
    return std::pair{ca, cb};
  } catch (const Stuck&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Exhaustive over the bounded candidates, then greedy: add one binding at a
/// time while it widens the gap and the budget lasts.
inline AttackResult adversarial_search(const Program& p, const std::map<std::string, Value>& a,
                                       const std::map<std::string, Value>& b, const CostModel& cm,
                                       const AttackOptions& opt = {}) {
  for (const auto& x : p.public_inputs) {
    auto ia = a.find(x), ib = b.find(x);
    Value va = ia != a.end() ? ia->second : 0, vb = ib != b.end() ? ib->second : 0;
    if ((ia == a.end()) != (ib == b.end()) || va != vb)
      throw Error("inputs disagree on public input '" + x + "'");
  }
  auto counts = activation_counts(p, a, cm);
  for (const auto& [m, n] : activation_counts(p, b, cm)) counts[m] = std::max(counts[m], n);

  EnumOptions eo;
  eo.universe = opt.universe;
  eo.ordinals = opt.ordinals;
  eo.policy = opt.policy;
  eo.directive_filter = [cls = opt.attack](const Directive& d) { return in_class(d, cls); };
  eo.max_schedules = std::numeric_limits<std::size_t>::max();
  auto cands = enumerate_candidates(p, counts, opt.depth, eo);

  const CodeHeap ch = code_heap_of(p);
  AttackResult best;
  auto consider = [&](const Schedule& s) {
    ++best.evaluated;
    auto c = detail::pair_costs(p, a, b, s, cm, ch);
    if (!c) return false;
    Cost delta = std::llabs(c->first - c->second);
    if (best.evaluated == 1 || delta > best.delta) {
      best.witness = s;
      best.delta = delta;
      best.cost_a = c->first;
      best.cost_b = c->second;
      return true;
    }
    return false;
  };
  for (const auto& s : cands) {
    if (best.evaluated >= opt.budget) {
      best.exhaustive = false;
      break;
    }
    consider(s);
  }
  if (!best.exhaustive) return best;

  // Greedy extension beyond the depth bound.
  auto deeper = enumerate_candidates(p, counts, 1, eo);
  bool improved = true;
  while (improved && best.evaluated < opt.budget) {
    improved = false;
    Schedule base = best.witness;
    for (const auto& single : deeper) {
      if (single.bindings.empty() || best.evaluated >= opt.budget) continue;
      const Binding& extra = single.bindings[0];
      bool taken = std::any_of(base.bindings.begin(), base.bindings.end(),
                               [&](const Binding& x) { return x.method == extra.method && x.ordinal == extra.ordinal; });
      if (taken) continue;
      Schedule s = base;
      s.bindings.push_back(extra);
      if (consider(s)) improved = true;
    }
  }
  return best;
}

}  // namespace jitleak
