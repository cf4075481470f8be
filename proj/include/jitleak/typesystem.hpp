#pragma once

// Two-level information-flow type system over bytecode, with policy inference.

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "jitleak/cfg.hpp"
#include "jitleak/policy.hpp"
#include "jitleak/validate.hpp"

namespace jitleak {

enum class Sec { L, H };

inline Sec join(Sec a, Sec b) { return (a == Sec::H || b == Sec::H) ? Sec::H : Sec::L; }
inline bool leq(Sec a, Sec b) { return a == Sec::L || b == Sec::H; }
inline char to_char(Sec s) { return s == Sec::H ? 'H' : 'L'; }

using LevelMap = std::map<std::string, Sec>;

inline Sec level_of(const LevelMap& m, const std::string& x) {
  auto it = m.find(x);
  return it == m.end() ? Sec::L : it->second;
}

inline bool leq(const LevelMap& a, const LevelMap& b) {
  for (const auto& [x, s] : a)
    if (!leq(s, level_of(b, x))) return false;
  return true;
}

inline LevelMap join(LevelMap a, const LevelMap& b) {
  for (const auto& [x, s] : b) a[x] = join(level_of(a, x), s);
  return a;
}

inline std::string format_levels(const LevelMap& m) {
  std::string s = "{";
  bool first = true;
  for (const auto& [x, l] : m) {
    if (!first) s += ", ";
    first = false;
    s += x + ":" + to_char(l);
  }
  return s + "}";
}

/// (pt, ht, lt, st); the stack is stored bottom first.
struct TypingContext {
  Sec pt = Sec::L;
  LevelMap ht;
  LevelMap lt;
  std::vector<Sec> st;

  friend bool operator==(const TypingContext&, const TypingContext&) = default;
};

/// (ht, τ) at a return point.
struct ReturnContext {
  LevelMap ht;
  Sec tau = Sec::L;
  friend bool operator==(const ReturnContext&, const ReturnContext&) = default;
};

inline bool leq(const TypingContext& a, const TypingContext& b) {
  if (a.st.size() != b.st.size()) return false;
  for (std::size_t k = 0; k < a.st.size(); ++k)
    if (!leq(a.st[k], b.st[k])) return false;
  return leq(a.pt, b.pt) && leq(a.ht, b.ht) && leq(a.lt, b.lt);
}

inline TypingContext join(const TypingContext& a, const TypingContext& b) {
  if (a.st.size() != b.st.size())
    throw AnalysisError("stack types of depth " + std::to_string(a.st.size()) + " and " +
                        std::to_string(b.st.size()) + " meet");
  TypingContext c;
  c.pt = join(a.pt, b.pt);
  c.ht = join(a.ht, b.ht);
  c.lt = join(a.lt, b.lt);
  c.st.resize(a.st.size());
  for (std::size_t k = 0; k < a.st.size(); ++k) c.st[k] = join(a.st[k], b.st[k]);
  return c;
}

inline std::string format_context(const TypingContext& c) {
  std::string s = std::string("pt=") + to_char(c.pt) + " ht=" + format_levels(c.ht) + " lt=" + format_levels(c.lt) +
                  " st=[";
  for (std::size_t k = c.st.size(); k-- > 0;) {
    s += to_char(c.st[k]);
    if (k) s += ' ';
  }
  return s + "]";
}

/// (pt, ht_in, lt_in) ↪ (ht_out, τ). lt_in ranges over the formal arguments.
struct Signature {
  Sec pt = Sec::L;
  LevelMap ht_in;
  LevelMap lt_in;
  LevelMap ht_out;
  Sec tau = Sec::L;

  friend bool operator==(const Signature&, const Signature&) = default;
};

using Signatures = std::map<std::string, Signature>;

inline std::string format_signature(const Signature& s) {
  return std::string("(") + to_char(s.pt) + ", " + format_levels(s.ht_in) + ", " + format_levels(s.lt_in) +
         ") -> (" + format_levels(s.ht_out) + ", " + to_char(s.tau) + ")";
}

enum class TypeRule { UnprotectedSecretBranch, SignatureViolation, CallContextViolation };

inline std::string_view to_string(TypeRule r) {
  switch (r) {
    case TypeRule::UnprotectedSecretBranch: return "UnprotectedSecretBranch";
    case TypeRule::SignatureViolation: return "SignatureViolation";
    case TypeRule::CallContextViolation: return "CallContextViolation";
  }
  return "?";
}

struct TypeViolation {
  TypeRule rule;
  std::string method;
  Point point = 0;
  std::string detail;

  std::string to_string() const {
    return std::string(jitleak::to_string(rule)) + "(" + method + "@" + std::to_string(point) + "): " + detail;
  }
  friend bool operator==(const TypeViolation&, const TypeViolation&) = default;
};

class TypeError : public Error {
 public:
  explicit TypeError(TypeViolation v) : Error(v.to_string()), v_(std::move(v)) {}
  const TypeViolation& violation() const noexcept { return v_; }

 private:
  TypeViolation v_;
};

using TransferResult = std::variant<TypingContext, ReturnContext>;

namespace detail {

inline Sec pop_level(std::vector<Sec>& st, const Method& m, Point i) {
  if (st.empty()) throw AnalysisError(m.name + ": stack type underflow at " + std::to_string(i));
  Sec s = st.back();
  st.pop_back();
  return s;
}

inline const Signature& signature_of(const Signatures& sigs, const std::string& m) {
  static const Signature kLow{};
  auto it = sigs.find(m);
  return it == sigs.end() ? kLow : it->second;
}

/// The transfer function; violations go to `sink`, or are thrown when it is null.
inline TransferResult transfer(const Program& p, const Method& m, Point i, const TypingContext& ctx,
                               const Signatures& sigs, const Policy& pol, std::vector<TypeViolation>* sink) {
  auto violate = [&](TypeRule r, std::string what) {
    TypeViolation v{r, m.name, i, std::move(what)};
    if (!sink) throw TypeError(v);
    sink->push_back(std::move(v));
  };
  const Instruction& ins = m.code.at(i);
  TypingContext c = ctx;
  switch (ins.op) {
    case Opcode::push: c.st.push_back(c.pt); break;
    case Opcode::binop: {
      Sec t1 = pop_level(c.st, m, i);
      Sec t2 = pop_level(c.st, m, i);
      c.st.push_back(join(join(t1, t2), c.pt));
      break;
    }
    case Opcode::pop: pop_level(c.st, m, i); break;
    case Opcode::swap: {
      Sec t1 = pop_level(c.st, m, i);
      Sec t2 = pop_level(c.st, m, i);
      c.st.push_back(join(t1, c.pt));
      c.st.push_back(join(t2, c.pt));
      break;
    }
    case Opcode::load: c.st.push_back(join(level_of(c.lt, ins.name), c.pt)); break;
    case Opcode::store: c.lt[ins.name] = join(pop_level(c.st, m, i), c.pt); break;
    case Opcode::get: c.st.push_back(join(level_of(c.ht, ins.name), c.pt)); break;
    case Opcode::put: c.ht[ins.name] = join(pop_level(c.st, m, i), c.pt); break;
    case Opcode::ifeq:
    case Opcode::ifneq: {
      c.pt = join(pop_level(c.st, m, i), c.pt);
      if (c.pt == Sec::H && !pol.protects(m.name, i) && !pol.prot1.count(m.name))
        violate(TypeRule::UnprotectedSecretBranch, "secret branch not in prot2");
      break;
    }
    case Opcode::goto_: break;
    case Opcode::return_: {
      ReturnContext r{c.ht, pop_level(c.st, m, i)};
      const Signature& sig = signature_of(sigs, m.name);
      if (!leq(r.ht, sig.ht_out) || !leq(r.tau, sig.tau))
        violate(TypeRule::SignatureViolation, "return context exceeds the signature of " + m.name);
      return r;
    }
    case Opcode::invoke: {
      const Method* callee = p.find(ins.name);
      if (!callee) throw UnknownMethod(ins.name);
      const Signature& sig = signature_of(sigs, ins.name);
      std::vector<Sec> args(callee->argv.size());
      for (std::size_t k = args.size(); k-- > 0;) args[k] = pop_level(c.st, m, i);
      if (!leq(c.pt, sig.pt)) violate(TypeRule::CallContextViolation, "path context above " + ins.name + "'s");
      if (!leq(c.ht, sig.ht_in)) violate(TypeRule::CallContextViolation, "global levels above " + ins.name + "'s");
      for (std::size_t k = 0; k < args.size(); ++k)
        if (!leq(args[k], level_of(sig.lt_in, callee->argv[k])))
          violate(TypeRule::CallContextViolation, "argument " + callee->argv[k] + " above its formal level");
      c.ht = sig.ht_out;
      c.st.push_back(join(sig.tau, c.pt));
      break;
    }
    case Opcode::deopt: throw AnalysisError(m.name + ": deopt at " + std::to_string(i) + " is not bytecode");
  }
  return c;
}

}  // namespace detail

/// One rule application; throws TypeError naming the violated premise.
inline TransferResult type_transfer(const Program& p, const Method& m, Point i, const TypingContext& ctx,
                                    const Signatures& sigs, const Policy& pol) {
  return detail::transfer(p, m, i, ctx, sigs, pol, nullptr);
}

struct CallObservation {
  Point site;
  std::string callee;
  Sec pt;
  LevelMap ht;
  std::vector<Sec> args;
};

struct MethodTyping {
  std::string method;
  /// se_m; nullopt for unreachable points. Return points hold their incoming context.
  std::vector<std::optional<TypingContext>> se;
  std::map<Point, ReturnContext> returns;
  std::vector<TypeViolation> violations;
  /// Branch points whose outgoing path context is H.
  std::set<Point> high_branches;
  /// For each junction, a maxBP point witnessing its path context.
  std::map<Point, Point> junction_witness;
  std::vector<CallObservation> calls;

  bool ok() const { return violations.empty(); }
};

/// Worklist fixpoint for se_m. Junction contexts take the path context of the
/// maximal branch points whose regions feed them; everything else is a pointwise join.
inline MethodTyping type_method(const Program& p, const Method& m, const Signatures& sigs, const Policy& pol,
                                const CfgInfo& cfg) {
  const std::size_t n = m.size();
  MethodTyping out;
  out.method = m.name;
  out.se.assign(n, std::nullopt);
  if (n == 0) return out;
  const Signature& sig = detail::signature_of(sigs, m.name);
  out.se[0] = TypingContext{sig.pt, sig.ht_in, sig.lt_in, {}};

  // For a junction k and predecessor j, the maxBP points whose scope holds j.
  auto scope_of = [&](Point k, Point j) {
    std::vector<Point> bs;
    auto it = cfg.maxbp.find(k);
    if (it == cfg.maxbp.end()) return bs;
    for (Point b : it->second)
      if (b == j || cfg.region.at(b).count(j)) bs.push_back(b);
    return bs;
  };

  std::vector<char> queued(n, 0);
  std::vector<Point> work{0};
  queued[0] = 1;
  while (!work.empty()) {
    // Lowest point first keeps the iteration close to program order.
    auto low = std::min_element(work.begin(), work.end());
    Point i = *low;
    work.erase(low);
    queued[i] = 0;
    auto res = detail::transfer(p, m, i, *out.se[i], sigs, pol, &out.violations);
    if (!std::holds_alternative<TypingContext>(res)) continue;
    const auto& next = std::get<TypingContext>(res);
    for (Point k : cfg.nxt[i]) {
      TypingContext contrib = next;
      if (cfg.is_junction(k)) {
        auto bs = scope_of(k, i);
        if (!bs.empty()) {
          bool ready = true;
          Sec pt = Sec::L;
          for (Point b : bs) {
            if (!out.se[b]) ready = false;
            else pt = join(pt, out.se[b]->pt);
          }
          if (ready) contrib.pt = pt;
        }
      }
      TypingContext merged = out.se[k] ? join(*out.se[k], contrib) : contrib;
      if (!out.se[k] || !(merged == *out.se[k])) {
        out.se[k] = std::move(merged);
        if (!queued[k]) {
          queued[k] = 1;
          work.push_back(k);
        }
      }
    }
  }

  // Final pass over the fixpoint: violations, returns, branch levels, calls.
  out.violations.clear();
  for (Point i = 0; i < n; ++i) {
    if (!out.se[i]) continue;
    const TypingContext& c = *out.se[i];
    auto res = detail::transfer(p, m, i, c, sigs, pol, &out.violations);
    const Instruction& ins = m.code[i];
    if (auto* r = std::get_if<ReturnContext>(&res)) out.returns[i] = *r;
    if (ins.is_conditional() && std::get<TypingContext>(res).pt == Sec::H) out.high_branches.insert(i);
    if (ins.op == Opcode::invoke) {
      const Method& callee = p.method(ins.name);
      CallObservation obs{i, ins.name, c.pt, c.ht, {}};
      obs.args.assign(c.st.end() - static_cast<std::ptrdiff_t>(callee.argv.size()), c.st.end());
      out.calls.push_back(std::move(obs));
    }
  }
  for (const auto& [k, bs] : cfg.maxbp) {
    if (!out.se[k]) continue;
    for (Point b : bs)
      if (out.se[b] && leq(out.se[b]->pt, out.se[k]->pt)) {
        out.junction_witness[k] = b;
        break;
      }
  }
  return out;
}

inline MethodTyping type_method(const Program& p, const Method& m, const Signatures& sigs, const Policy& pol) {
  return type_method(p, m, sigs, pol, analyze_cfg(m));
}

/// (prot1, prot2, sig) ▷ m.
inline MethodTyping check_method(const Program& p, const std::string& m, const Signatures& sigs, const Policy& pol) {
  return type_method(p, p.method(m), sigs, pol);
}

struct ProgramCheck {
  bool ok = true;
  std::vector<std::string> problems;
  std::map<std::string, MethodTyping> methods;
};

/// (prot1, prot2, sig) ▷ P: entry signature low with secrets high, H-context
/// methods in prot1, and every method typable.
inline ProgramCheck check_program(const Program& p, const Signatures& sigs, const Policy& pol) {
  ProgramCheck out;
  auto fail = [&](std::string why) {
    out.ok = false;
    out.problems.push_back(std::move(why));
  };
  const Signature& entry = detail::signature_of(sigs, p.entry);
  if (entry.pt != Sec::L) fail("entry signature has a high path context");
  const Method& em = p.method(p.entry);
  for (const auto& x : p.secret_inputs()) {
    bool is_arg = std::find(em.argv.begin(), em.argv.end(), x) != em.argv.end();
    Sec s = is_arg ? level_of(entry.lt_in, x) : level_of(entry.ht_in, x);
    if (s != Sec::H) fail("secret input '" + x + "' is not high in the entry signature");
  }
  for (const auto& [m, pts] : pol.prot2)
    if (!pts.empty() && pol.prot1.count(m)) fail("'" + m + "' is in both prot1 and prot2");
  for (const auto& m : p.methods) {
    if (detail::signature_of(sigs, m.name).pt == Sec::H && !pol.prot1.count(m.name))
      fail("'" + m.name + "' has a high path context but is not in prot1");
    auto t = type_method(p, m, sigs, pol);
    for (const auto& v : t.violations) fail(v.to_string());
    out.methods.emplace(m.name, std::move(t));
  }
  return out;
}

/// Entry signature: secrets high, publics low, path context low.
inline Signature entry_signature(const Program& p) {
  Signature s;
  const auto secrets = p.secret_inputs();
  for (const auto& g : p.globals) s.ht_in[g.name] = secrets.count(g.name) ? Sec::H : Sec::L;
  for (const auto& a : p.method(p.entry).argv) s.lt_in[a] = secrets.count(a) ? Sec::H : Sec::L;
  s.ht_out = s.ht_in;
  return s;
}

struct Inference {
  Signatures sigs;
  Policy policy;
  std::map<std::string, MethodTyping> typings;
  /// For each secret branch, the methods its region invokes directly.
  std::map<std::pair<std::string, Point>, std::set<std::string>> swept;
};

namespace detail {

inline std::set<std::string> invoked_in(const Method& m, const std::set<Point>& pts) {
  std::set<std::string> out;
  for (Point k : pts)
    if (m.code[k].op == Opcode::invoke) out.insert(m.code[k].name);
  return out;
}

inline void add_transitive_callees(const Program& p, const std::string& m, std::set<std::string>& into) {
  if (!into.insert(m).second) return;
  for (const auto& ins : p.method(m).code)
    if (ins.op == Opcode::invoke) add_transitive_callees(p, ins.name, into);
}

}  // namespace detail

/// Whole-program fixpoint over signatures and policy. Signatures start low
/// and rise with the call contexts and return contexts observed; secret
/// branches go to prot2, methods invoked in their regions (and their callees)
/// to prot1. Branches of prot1 methods are dropped from prot2.
inline Inference infer_policy(const Program& p) {
  Inference inf;
  std::map<std::string, CfgInfo> cfgs;
  for (const auto& m : p.methods) {
    cfgs.emplace(m.name, analyze_cfg(m));
    Signature s;
    for (const auto& g : p.globals) s.ht_in[g.name] = Sec::L;
    for (const auto& a : m.argv) s.lt_in[a] = Sec::L;
    s.ht_out = s.ht_in;
    inf.sigs[m.name] = s;
  }
  inf.sigs[p.entry] = entry_signature(p);

  bool changed = true;
  while (changed) {
    changed = false;
    Signatures next = inf.sigs;
    Policy pol = inf.policy;
    for (const auto& m : p.methods) {
      auto t = type_method(p, m, inf.sigs, pol, cfgs.at(m.name));
      Signature& own = next[m.name];
      for (const auto& [i, r] : t.returns) {
        own.ht_out = join(own.ht_out, r.ht);
        own.tau = join(own.tau, r.tau);
      }
      for (const auto& obs : t.calls) {
        Signature& cs = next[obs.callee];
        const Method& callee = p.method(obs.callee);
        cs.pt = join(cs.pt, obs.pt);
        cs.ht_in = join(cs.ht_in, obs.ht);
        for (std::size_t k = 0; k < obs.args.size(); ++k)
          cs.lt_in[callee.argv[k]] = join(level_of(cs.lt_in, callee.argv[k]), obs.args[k]);
      }
      for (Point i : t.high_branches) {
        auto direct = detail::invoked_in(m, cfgs.at(m.name).region.at(i));
        inf.swept[{m.name, i}] = direct;
        for (const auto& c : direct) detail::add_transitive_callees(p, c, pol.prot1);
        pol.prot2[m.name].insert(i);
      }
      inf.typings[m.name] = std::move(t);
    }
    for (const auto& [name, s] : next)
      if (s.pt == Sec::H) detail::add_transitive_callees(p, name, pol.prot1);
    if (!(next == inf.sigs) || !(pol == inf.policy)) changed = true;
    inf.sigs = std::move(next);
    inf.policy = std::move(pol);
  }
  for (const auto& m : inf.policy.prot1) inf.policy.prot2.erase(m);
  for (auto it = inf.policy.prot2.begin(); it != inf.policy.prot2.end();)
    it = it->second.empty() ? inf.policy.prot2.erase(it) : std::next(it);
  inf.policy.mode = Mode::full;
  return inf;
}

/// Every protected branch invokes the same multiset of methods on both sides.
inline bool check_light_assumption(const Program& p, const Policy& pol) {
  for (const auto& [name, pts] : pol.prot2) {
    const Method* m = p.find(name);
    if (!m) continue;
    auto cfg = analyze_cfg(*m);
    for (Point i : pts) {
      if (i >= m->size() || !m->code[i].is_conditional()) continue;
      const Point j = cfg.junc.at(i);
      auto side = [&](Point start) {
        std::multiset<std::string> calls;
        std::set<Point> pts2 = start == j ? std::set<Point>{} : reachable_from(cfg.nxt, start, j);
        if (start != j) pts2.insert(start);
        for (Point k : pts2)
          if (k != j && m->code[k].op == Opcode::invoke) calls.insert(m->code[k].name);
        return calls;
      };
      if (side(m->code[i].target) != side(i + 1)) return false;
    }
  }
  return true;
}

/// Human-readable report: signatures, se_m tables, secret branches with regions and swept calls.
inline std::string typing_report(const Program& p, const Inference& inf) {
  std::ostringstream os;
  for (const auto& m : p.methods) {
    os << "method " << m.name << " " << format_signature(inf.sigs.at(m.name)) << "\n";
    const auto& t = inf.typings.at(m.name);
    const CfgInfo cfg = analyze_cfg(m);
    for (Point i = 0; i < m.size(); ++i) {
      os << "  " << i << ": " << format_instruction(m.code[i]) << "  ";
      os << (t.se[i] ? format_context(*t.se[i]) : std::string("unreachable")) << "\n";
    }
    for (Point i : t.high_branches) {
      os << "  secret branch " << i << " region {";
      bool first = true;
      for (Point k : cfg.region.at(i)) {
        os << (first ? "" : ",") << k;
        first = false;
      }
      os << "} calls {";
      first = true;
      auto it = inf.swept.find({m.name, i});
      if (it != inf.swept.end())
        for (const auto& c : it->second) {
          os << (first ? "" : ",") << c;
          first = false;
        }
      os << "}\n";
    }
  }
  return os.str();
}

}  // namespace jitleak
