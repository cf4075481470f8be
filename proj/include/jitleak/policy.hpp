#pragma once

// Fine-grained JIT policies (prot1, prot2) and directive compliance.

#include <map>
#include <ostream>
#include <set>
#include <string>

#include <json.hpp>

#include "jitleak/jit.hpp"

namespace jitleak {

enum class Mode { full, light };

inline std::string_view to_string(Mode m) { return m == Mode::full ? "full" : "light"; }

inline Mode mode_from(std::string_view s) {
  if (s == "full") return Mode::full;
  if (s == "light") return Mode::light;
  throw Error("unknown protection mode '" + std::string(s) + "'");
}

/// prot1: methods never compiled or inlined. prot2: bytecode branch points never optimized.
struct Policy {
  std::set<std::string> prot1;
  std::map<std::string, std::set<Point>> prot2;
  Mode mode = Mode::full;

  bool protects(const std::string& m, Point i) const {
    auto it = prot2.find(m);
    return it != prot2.end() && it->second.count(i);
  }
  bool empty() const {
    if (!prot1.empty()) return false;
    for (const auto& [m, pts] : prot2)
      if (!pts.empty()) return false;
    return true;
  }
  Policy with_mode(Mode m) const {
    Policy p = *this;
    p.mode = m;
    return p;
  }

  friend bool operator==(const Policy&, const Policy&) = default;
};

namespace detail {

inline bool inlines_protected(const InlineTree& t, const std::set<std::string>& prot1) {
  for (const auto& e : t.edges)
    if (prot1.count(e.callee.method) || inlines_protected(e.callee, prot1)) return true;
  return false;
}

}  // namespace detail

/// Whether `d`, used on `target`, respects `pol`. ω points are resolved to
/// their bytecode origins, so optimizing an inlined copy of a protected
/// branch is caught too. A directive that does not compile is not compliant.
inline bool is_compliant(const Program& p, const Directive& d, const std::string& target, const Policy& pol) {
  if (d.empty()) return true;
  if (pol.mode == Mode::full && pol.prot1.count(target)) return false;
  if (detail::inlines_protected(d.tree, pol.prot1)) return false;
  if (d.omega.empty()) return true;
  try {
    Method cur = inline_tree(p, d.tree);
    std::vector<std::optional<Point>> pts;
    for (const auto& o : d.omega) pts.emplace_back(o.point);
    for (std::size_t k = 0; k < d.omega.size(); ++k) {
      if (!pts[k] || *pts[k] >= cur.size()) return false;
      SourcePoint sp = cur.source_of(*pts[k]);
      if (!sp.pc || pol.protects(sp.method, *sp.pc)) return false;
      BranchOpt o = d.omega[k];
      o.point = *pts[k];
      auto r = apply_branch_opt(cur, o);
      for (std::size_t l = k + 1; l < pts.size(); ++l)
        if (pts[l]) pts[l] = *pts[l] < r.map.size() ? r.map[*pts[l]] : std::nullopt;
      cur = std::move(r.method);
    }
  } catch (const Error&) {
    return false;
  }
  return true;
}

inline void to_json(nlohmann::json& j, const Policy& pol) {
  nlohmann::json prot2 = nlohmann::json::object();
  for (const auto& [m, pts] : pol.prot2)
    if (!pts.empty()) prot2[m] = pts;
  j = nlohmann::json{{"prot1", pol.prot1}, {"prot2", prot2}, {"mode", std::string(to_string(pol.mode))}};
}

inline void from_json(const nlohmann::json& j, Policy& pol) {
  pol = Policy{};
  if (j.contains("prot1")) pol.prot1 = j.at("prot1").get<std::set<std::string>>();
  if (j.contains("prot2"))
    for (const auto& [m, pts] : j.at("prot2").items()) pol.prot2[m] = pts.get<std::set<Point>>();
  if (j.contains("mode")) pol.mode = mode_from(j.at("mode").get<std::string>());
  for (const auto& m : pol.prot1)
    if (pol.prot2.count(m) && !pol.prot2.at(m).empty())
      throw Error("policy lists '" + m + "' in both prot1 and prot2");
}

inline Policy parse_policy(std::string_view text) {
  try {
    return nlohmann::json::parse(text).get<Policy>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, 0, std::string("policy: ") + e.what());
  }
}

/// CompileCommand-style lines: exclude / dontinline per prot1 method, dontprune per prot2 method.
inline void write_hotspot(std::ostream& os, const Policy& pol) {
  for (const auto& m : pol.prot1) {
    if (pol.mode == Mode::full) os << "exclude " << m << '\n';
    os << "dontinline " << m << '\n';
  }
  for (const auto& [m, pts] : pol.prot2) {
    if (pts.empty()) continue;
    os << "dontprune " << m;
    for (Point i : pts) os << ' ' << i;
    os << '\n';
  }
}

}  // namespace jitleak
