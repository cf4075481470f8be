#pragma once

// Control-flow analyses over a single method: successors, immediate
// post-dominators, junctions, regions and maximal branch points.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "jitleak/bytecode.hpp"
#include "jitleak/error.hpp"

namespace jitleak {

/// Successor points of `i`; return and deopt leave the method.
inline std::set<Point> nxt(const Method& m, Point i) {
  const Instruction& ins = m.code.at(i);
  switch (ins.op) {
    case Opcode::goto_: return {ins.target};
    case Opcode::ifeq:
    case Opcode::ifneq: return {i + 1, ins.target};
    case Opcode::return_:
    case Opcode::deopt: return {};
    default: return {i + 1};
  }
}

struct CfgInfo {
  std::vector<std::set<Point>> nxt;
  std::vector<std::set<Point>> pred;
  /// Immediate post-dominator; nullopt when it is the virtual exit or undefined.
  std::vector<std::optional<Point>> ipdom;
  /// Full post-dominator sets (reflexive). Points that cannot reach an exit keep every point.
  std::vector<std::vector<char>> pdom;
  std::map<Point, Point> junc;
  std::map<Point, std::set<Point>> region;
  std::map<Point, std::set<Point>> maxbp;

  bool is_junction(Point j) const { return maxbp.count(j) != 0; }
  bool postdominates(Point d, Point k) const { return pdom.at(k).at(d) != 0; }
};

/// Points reachable from `from` in at least one step, optionally never passing through `avoid`.
inline std::set<Point> reachable_from(const std::vector<std::set<Point>>& succ, Point from,
                                      std::optional<Point> avoid = std::nullopt) {
  std::set<Point> seen;
  std::vector<Point> work(succ.at(from).begin(), succ.at(from).end());
  while (!work.empty()) {
    Point k = work.back();
    work.pop_back();
    if (k >= succ.size() || (avoid && k == *avoid) || !seen.insert(k).second) continue;
    for (Point s : succ[k]) work.push_back(s);
  }
  return seen;
}

inline CfgInfo analyze_cfg(const Method& m) {
  const std::size_t n = m.size();
  CfgInfo info;
  info.nxt.resize(n);
  info.pred.resize(n);
  for (Point i = 0; i < n; ++i) {
    info.nxt[i] = nxt(m, i);
    for (Point s : info.nxt[i]) {
      if (s >= n) throw AnalysisError(m.name + ": successor " + std::to_string(s) + " of point " + std::to_string(i) +
                                      " is outside the method");
      info.pred[s].insert(i);
    }
  }

  // Post-dominators with a virtual exit node `n` fed by every exiting point.
  std::vector<std::vector<char>> pd(n + 1, std::vector<char>(n + 1, 1));
  pd[n].assign(n + 1, 0);
  pd[n][n] = 1;
  bool changed = true;
  while (changed) {
    changed = false;
    for (Point k = n; k-- > 0;) {
      std::vector<char> next(n + 1, 1);
      const bool exits = info.nxt[k].empty();
      if (exits) {
        next = pd[n];
      } else {
        for (Point s : info.nxt[k])
          for (std::size_t d = 0; d <= n; ++d) next[d] = next[d] && pd[s][d];
      }
      next[k] = 1;
      if (next != pd[k]) {
        pd[k] = std::move(next);
        changed = true;
      }
    }
  }

  info.ipdom.assign(n, std::nullopt);
  info.pdom.resize(n);
  for (Point k = 0; k < n; ++k) {
    info.pdom[k].assign(pd[k].begin(), pd[k].begin() + static_cast<std::ptrdiff_t>(n));
    // The closest strict post-dominator is post-dominated by all the others.
    std::size_t strict = 0;
    for (std::size_t d = 0; d <= n; ++d) strict += (d != k && pd[k][d]);
    for (std::size_t d = 0; d <= n; ++d) {
      if (d == k || !pd[k][d]) continue;
      std::size_t size = 0;
      for (std::size_t e = 0; e <= n; ++e) size += pd[d][e] != 0;
      if (size == strict) {
        if (d < n) info.ipdom[k] = d;
        break;
      }
    }
  }

  for (Point i = 0; i < n; ++i) {
    if (!m.code[i].is_conditional()) continue;
    if (!info.ipdom[i]) throw AnalysisError(m.name + ": branch at " + std::to_string(i) + " has no junction");
    Point j = *info.ipdom[i];
    info.junc[i] = j;
    std::set<Point> reg;
    for (Point k : reachable_from(info.nxt, i))
      if (k != j && info.pdom[k][j]) reg.insert(k);
    info.region[i] = std::move(reg);
  }

  std::map<Point, std::vector<Point>> by_junction;
  for (const auto& [i, j] : info.junc) by_junction[j].push_back(i);
  for (const auto& [j, cands] : by_junction) {
    std::set<Point> keep;
    for (Point i : cands) {
      const auto& ri = info.region[i];
      bool dominated = false;
      for (Point o : cands) {
        if (o == i) continue;
        const auto& ro = info.region[o];
        bool subset = std::includes(ro.begin(), ro.end(), ri.begin(), ri.end());
        if (subset && (ro.size() > ri.size() || o < i)) {
          dominated = true;
          break;
        }
      }
      if (!dominated) keep.insert(i);
    }
    info.maxbp[j] = std::move(keep);
  }
  return info;
}

}  // namespace jitleak
