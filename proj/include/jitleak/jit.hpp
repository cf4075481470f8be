#pragma once

// Compilation directives: inline trees, branch optimizations and their
// application to a code heap.

#include <cctype>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "jitleak/assembly.hpp"
#include "jitleak/bytecode.hpp"
#include "jitleak/error.hpp"
#include "jitleak/validate.hpp"

namespace jitleak {

using CodeHeap = std::map<std::string, std::shared_ptr<const Method>>;

inline CodeHeap code_heap_of(const Program& p) {
  CodeHeap ch;
  for (const auto& m : p.methods) ch[m.name] = std::make_shared<const Method>(m);
  return ch;
}

/// The version-0 body every compilation starts from.
inline const Method& base_version(const Program& p, std::string_view name) { return p.method(name); }

enum class OptKind { bp, oc };
enum class Pref { if_b, else_b };

inline std::string_view to_string(OptKind k) { return k == OptKind::bp ? "bp" : "oc"; }
inline std::string_view to_string(Pref b) { return b == Pref::if_b ? "if" : "else"; }

struct BranchOpt {
  OptKind kind = OptKind::bp;
  Point point = 0;
  Pref pref = Pref::else_b;
  friend bool operator==(const BranchOpt&, const BranchOpt&) = default;
};

struct InlineTree {
  struct Edge;
  std::string method;
  std::vector<Edge> edges;

  std::size_t depth() const;
  void labels(std::set<std::string>& out) const;
};

struct InlineTree::Edge {
  Point site = 0;
  InlineTree callee;
};

inline bool operator==(const InlineTree& a, const InlineTree& b);
inline bool operator==(const InlineTree::Edge& a, const InlineTree::Edge& b) {
  return a.site == b.site && a.callee == b.callee;
}
inline bool operator==(const InlineTree& a, const InlineTree& b) { return a.method == b.method && a.edges == b.edges; }

inline std::size_t InlineTree::depth() const {
  std::size_t d = 0;
  for (const auto& e : edges) d = std::max(d, 1 + e.callee.depth());
  return d;
}

inline void InlineTree::labels(std::set<std::string>& out) const {
  out.insert(method);
  for (const auto& e : edges) e.callee.labels(out);
}

/// Either no recompilation, or an inline tree rooted at the target plus an optimization sequence.
struct Directive {
  bool compile = false;
  InlineTree tree;
  std::vector<BranchOpt> omega;

  static Directive none() { return {}; }
  static Directive make(InlineTree t, std::vector<BranchOpt> omega = {}) {
    Directive d;
    d.compile = true;
    d.tree = std::move(t);
    d.omega = std::move(omega);
    return d;
  }
  static Directive plain(std::string method) { return make(InlineTree{std::move(method), {}}); }

  bool empty() const noexcept { return !compile; }
  const std::string& target() const noexcept { return tree.method; }

  friend bool operator==(const Directive& a, const Directive& b) {
    if (a.compile != b.compile) return false;
    return !a.compile || (a.tree == b.tree && a.omega == b.omega);
  }
};

// ---------------------------------------------------------------------------
// Branch optimizations

struct TransformResult {
  Method method;
  /// Old point -> new point; nullopt for points removed by pruning.
  std::vector<std::optional<Point>> map;
};

namespace detail {

// Layout of a forward if/else around the conditional at i:
//   A = [0, i]   E = [i+1, g)   G = g = j-1 (goto J)   T = [j, J)   R = [J, n)
struct BranchShape {
  Point i, j, g, J, n;
};

inline BranchShape branch_shape(const Method& m, Point i) {
  if (i >= m.size() || !m.code[i].is_conditional())
    throw TransformError(m.name + ": point " + std::to_string(i) + " is not a conditional");
  const Point n = m.size();
  const Point j = m.code[i].target;
  if (j <= i + 1 || j >= n)
    throw TransformError(m.name + ": branch at " + std::to_string(i) + " is not a forward if/else");
  const Instruction& g = m.code[j - 1];
  if (g.op != Opcode::goto_ || g.target < j)
    throw TransformError(m.name + ": branch at " + std::to_string(i) + " has no forward goto closing its else arm");
  if (!m.code.back().is_terminator()) throw TransformError(m.name + ": last instruction falls through");
  return {i, j, j - 1, g.target, n};
}

class Emitter {
 public:
  explicit Emitter(const Method& src) : src_(src), map_(src.size()) {}

  void copy(Point lo, Point hi) {
    for (Point k = lo; k < hi; ++k) {
      map_[k] = code_.size();
      code_.push_back(src_.code[k]);
      source_.push_back(src_.source_of(k));
      old_.push_back(k);
    }
  }

  /// Appends a synthetic instruction; jump targets are given in old coordinates.
  Point synth(Instruction ins, SourcePoint sp) {
    code_.push_back(std::move(ins));
    source_.push_back(std::move(sp));
    old_.push_back(std::nullopt);
    return code_.size() - 1;
  }

  void alias(Point old_point, Point same_as) { alias_[old_point] = same_as; }

  Point resolve(Point old_target) const {
    if (map_[old_target]) return *map_[old_target];
    auto it = alias_.find(old_target);
    if (it != alias_.end() && map_[it->second]) return *map_[it->second];
    throw TransformError(src_.name + ": jump into a removed region at " + std::to_string(old_target));
  }

  /// Re-links every jump copied or synthesized with old-coordinate targets.
  void relink() {
    for (Point q = 0; q < code_.size(); ++q) {
      bool old_jump = old_[q].has_value() && code_[q].is_jump();
      bool new_jump = !old_[q].has_value() && code_[q].is_jump();
      if (old_jump || new_jump) code_[q].target = resolve(code_[q].target);
    }
  }

  Point position(Point old_point) const { return *map_.at(old_point); }
  std::vector<Instruction>& code() { return code_; }
  std::vector<SourcePoint>& source() { return source_; }

  TransformResult finish(const Method& like) {
    TransformResult r;
    r.method = like;
    r.method.code = std::move(code_);
    r.method.source = std::move(source_);
    for (Point k = 0; k < map_.size(); ++k) {
      if (!map_[k]) {
        auto it = alias_.find(k);
        if (it != alias_.end()) map_[k] = map_[it->second];
      }
    }
    r.map = std::move(map_);
    return r;
  }

 private:
  const Method& src_;
  std::vector<Instruction> code_;
  std::vector<SourcePoint> source_;
  std::vector<std::optional<Point>> old_;
  std::vector<std::optional<Point>> map_;
  std::map<Point, Point> alias_;
};

inline Opcode flip(Opcode op) { return op == Opcode::ifeq ? Opcode::ifneq : Opcode::ifeq; }

inline void record_optimized(Method& out, const Method& in, Point i) {
  SourcePoint sp = in.source_of(i);
  sp.flipped = false;
  sp.inlined = false;
  out.optimized.push_back(std::move(sp));
}

inline void check_prunable(const Method& m, const BranchShape& s, Point lo, Point hi, Point first) {
  for (Point k = 0; k < m.size(); ++k) {
    if (k == s.i || (k >= lo && k < hi)) continue;
    const Instruction& ins = m.code[k];
    if (ins.is_jump() && ins.target >= lo && ins.target < hi && !(ins.target == first && k == s.i))
      throw TransformError(m.name + ": point " + std::to_string(k) + " jumps into the pruned arm");
  }
  SourcePoint sp = m.source_of(first);
  if (!sp.pc || sp.inlined || sp.method != m.name)
    throw TransformError(m.name + ": pruned arm does not start at a bytecode point of the method");
}

}  // namespace detail

/// Branch prediction: the preferred arm becomes the fall-through path and
/// the other arm moves to the end of the method.
inline TransformResult transform_bp_mapped(const Method& m, Point i, Pref b) {
  auto s = detail::branch_shape(m, i);
  detail::Emitter e(m);
  if (b == Pref::else_b) {
    e.copy(0, s.i + 1);
    e.copy(s.i + 1, s.g);
    e.copy(s.J, s.n);
    e.copy(s.j, s.J);
    e.synth(Instruction::goto_(s.J), SourcePoint{m.name, std::nullopt, false, false});
    e.alias(s.g, s.J);
    e.relink();
  } else {
    e.copy(0, s.i + 1);
    e.copy(s.j, s.J);
    e.copy(s.J, s.n);
    e.copy(s.i + 1, s.j);
    e.relink();
    Point q = e.position(s.i);
    auto& ins = e.code()[q];
    ins.op = detail::flip(ins.op);
    ins.target = e.position(s.i + 1);
    e.source()[q].flipped = !e.source()[q].flipped;
  }
  auto r = e.finish(m);
  detail::record_optimized(r.method, m, i);
  return r;
}

/// Optimistic compilation: the arm not preferred is replaced by an uncommon trap.
inline TransformResult transform_oc_mapped(const Method& m, Point i, Pref b) {
  auto s = detail::branch_shape(m, i);
  detail::Emitter e(m);
  if (b == Pref::else_b) {
    detail::check_prunable(m, s, s.j, s.J, s.j);
    Point resume = *m.source_of(s.j).pc;
    e.copy(0, s.i + 1);
    e.copy(s.i + 1, s.g);
    e.copy(s.J, s.n);
    e.alias(s.g, s.J);
    e.code()[e.position(s.i)].target = s.J;
    e.relink();
    Point trap = e.code().size();
    e.code().push_back(Instruction::deopt({m.name, resume}));
    e.source().push_back(SourcePoint{m.name, std::nullopt, false, false});
    e.code()[e.position(s.i)].target = trap;
  } else {
    detail::check_prunable(m, s, s.i + 1, s.j, s.i + 1);
    Point resume = *m.source_of(s.i + 1).pc;
    e.copy(0, s.i + 1);
    e.copy(s.j, s.J);
    e.copy(s.J, s.n);
    e.code()[e.position(s.i)].target = s.J;
    e.relink();
    Point trap = e.code().size();
    e.code().push_back(Instruction::deopt({m.name, resume}));
    e.source().push_back(SourcePoint{m.name, std::nullopt, false, false});
    Point q = e.position(s.i);
    auto& ins = e.code()[q];
    ins.op = detail::flip(ins.op);
    ins.target = trap;
    e.source()[q].flipped = !e.source()[q].flipped;
  }
  auto r = e.finish(m);
  detail::record_optimized(r.method, m, i);
  return r;
}

inline Method transform_bp(const Method& m, Point i, Pref b) { return transform_bp_mapped(m, i, b).method; }
inline Method transform_oc(const Method& m, Point i, Pref b) { return transform_oc_mapped(m, i, b).method; }

inline TransformResult apply_branch_opt(const Method& m, const BranchOpt& o) {
  return o.kind == OptKind::bp ? transform_bp_mapped(m, o.point, o.pref) : transform_oc_mapped(m, o.point, o.pref);
}

// ---------------------------------------------------------------------------
// Inlining

namespace detail {

inline std::string fresh_local(const std::string& callee, std::size_t n, const std::string& x) {
  return callee + "$" + std::to_string(n) + "." + x;
}

inline Method inline_node(const Program& base, const InlineTree& t, std::size_t& fresh) {
  const Method& parent = base.method(t.method);
  if (t.edges.empty()) return parent;

  std::map<Point, Method> bodies;
  for (const auto& edge : t.edges) {
    if (edge.site >= parent.size() || parent.code[edge.site].op != Opcode::invoke ||
        parent.code[edge.site].name != edge.callee.method)
      throw InlineError(parent.name + ": call site " + std::to_string(edge.site) + " does not invoke '" +
                        edge.callee.method + "'");
    if (bodies.count(edge.site))
      throw InlineError(parent.name + ": call site " + std::to_string(edge.site) + " inlined twice");
    bodies.emplace(edge.site, inline_node(base, edge.callee, fresh));
  }

  std::vector<Instruction> code;
  std::vector<SourcePoint> source;
  std::vector<Point> map(parent.size());
  std::vector<std::pair<Point, Point>> post_fixups;  // (goto position, site)
  std::vector<bool> relink;                          // parent jump with old target

  for (Point k = 0; k < parent.size(); ++k) {
    map[k] = code.size();
    auto it = bodies.find(k);
    if (it == bodies.end()) {
      code.push_back(parent.code[k]);
      source.push_back(parent.source_of(k));
      relink.push_back(parent.code[k].is_jump());
      continue;
    }
    const Method& body = it->second;
    const Method& callee = base.method(body.name);
    const std::size_t n = ++fresh;
    const SourcePoint site{parent.name, k, false, false};
    for (auto a = callee.argv.rbegin(); a != callee.argv.rend(); ++a) {
      code.push_back(Instruction::store(fresh_local(callee.name, n, *a)));
      source.push_back(site);
      relink.push_back(false);
    }
    auto depths = operand_depths(base, body);
    auto ret_depth = [&](Point q) -> std::size_t {
      auto d = depths.depth[q];
      return d && *d > 0 ? *d : 1;
    };
    std::vector<Point> pos(body.size());
    Point at = code.size();
    for (Point q = 0; q < body.size(); ++q) {
      pos[q] = at;
      at += body.code[q].op == Opcode::return_ ? 2 * (ret_depth(q) - 1) + 1 : 1;
    }
    for (Point q = 0; q < body.size(); ++q) {
      Instruction ins = body.code[q];
      SourcePoint sp = body.source_of(q);
      sp.inlined = true;
      if (ins.op == Opcode::load || ins.op == Opcode::store) ins.name = fresh_local(callee.name, n, ins.name);
      if (ins.is_jump()) ins.target = pos[ins.target];
      if (ins.op == Opcode::return_) {
        for (std::size_t c = 1; c < ret_depth(q); ++c) {
          code.push_back(Instruction::swap());
          code.push_back(Instruction::pop());
          source.push_back(sp);
          source.push_back(sp);
          relink.push_back(false);
          relink.push_back(false);
        }
        post_fixups.emplace_back(code.size(), k);
        code.push_back(Instruction::goto_(0));
      } else {
        code.push_back(std::move(ins));
      }
      source.push_back(sp);
      relink.push_back(false);
    }
  }
  for (Point q = 0; q < code.size(); ++q)
    if (relink[q]) code[q].target = map.at(code[q].target);
  for (auto [q, k] : post_fixups) code[q].target = map.at(k + 1);

  Method out = parent;
  out.code = std::move(code);
  out.source = std::move(source);
  return out;
}

}  // namespace detail

/// t(m): splices every call site of the tree, innermost first. Callees come from `base`.
inline Method inline_tree(const Program& base, const InlineTree& t) {
  std::size_t fresh = 0;
  return detail::inline_node(base, t, fresh);
}

inline Method inline_tree(const Method& m, const InlineTree& t, const Program& base) {
  if (t.method != m.name) throw InlineError("inline tree rooted at '" + t.method + "' applied to '" + m.name + "'");
  return inline_tree(base, t);
}

// ---------------------------------------------------------------------------
// Directive application

/// d(m) before versioning: t(m) followed by ω left to right. ω points are
/// t(m) coordinates, carried through each transformation's point map.
inline Method compile_directive(const Program& base, const Directive& d) {
  Method cur = inline_tree(base, d.tree);
  std::vector<std::optional<Point>> pts;
  std::set<Point> seen;
  for (const auto& o : d.omega) {
    if (!seen.insert(o.point).second)
      throw InvalidDirective("point " + std::to_string(o.point) + " optimized more than once");
    pts.emplace_back(o.point);
  }
  for (std::size_t k = 0; k < d.omega.size(); ++k) {
    if (!pts[k]) throw InvalidDirective("branch point " + std::to_string(d.omega[k].point) + " was pruned earlier");
    BranchOpt o = d.omega[k];
    o.point = *pts[k];
    auto r = apply_branch_opt(cur, o);
    for (std::size_t l = k + 1; l < pts.size(); ++l) {
      if (pts[l] && *pts[l] < r.map.size()) pts[l] = r.map[*pts[l]];
      else if (pts[l]) throw TransformError(cur.name + ": point " + std::to_string(*pts[l]) + " out of range");
    }
    cur = std::move(r.method);
  }
  cur.kind = CodeKind::native;
  return cur;
}

/// ch[m ↦ d(m)] with the version bumped; d_∅ leaves ch unchanged.
inline CodeHeap apply_directive(const CodeHeap& ch, const Program& base, const std::string& name,
                                const Directive& d, unsigned v_max) {
  if (d.empty()) return ch;
  if (d.target() != name) throw InvalidDirective("directive for '" + d.target() + "' used on '" + name + "'");
  auto it = ch.find(name);
  if (it == ch.end()) throw UnknownMethod(name);
  unsigned next = it->second->version + 1;
  if (next > v_max)
    throw InvalidDirective("version " + std::to_string(next) + " of '" + name + "' exceeds maximum " +
                           std::to_string(v_max));
  Method m = compile_directive(base, d);
  m.version = next;
  CodeHeap out = ch;
  out[name] = std::make_shared<const Method>(std::move(m));
  return out;
}

// ---------------------------------------------------------------------------
// Directive literals:  compile verifyPin { inline: [7:f[3:g]]; opt: [bp@3:else] }  or  none

inline std::string format_tree_edges(const InlineTree& t) {
  std::string s = "[";
  for (std::size_t k = 0; k < t.edges.size(); ++k) {
    if (k) s += ", ";
    s += std::to_string(t.edges[k].site) + ":" + t.edges[k].callee.method;
    if (!t.edges[k].callee.edges.empty()) s += format_tree_edges(t.edges[k].callee);
  }
  return s + "]";
}

inline std::string format_directive(const Directive& d) {
  if (d.empty()) return "none";
  std::string s = "compile " + d.target() + " { inline: " + format_tree_edges(d.tree) + "; opt: [";
  for (std::size_t k = 0; k < d.omega.size(); ++k) {
    if (k) s += ", ";
    const auto& o = d.omega[k];
    s += std::string(to_string(o.kind)) + "@" + std::to_string(o.point) + ":" + std::string(to_string(o.pref));
  }
  return s + "] }";
}

namespace detail {

class DirectiveReader {
 public:
  DirectiveReader(std::string_view text, std::size_t line) : s_(text), line_(line) {}

  Directive read() {
    skip();
    if (peek_word() == "none") {
      pos_ += 4;
      end();
      return Directive::none();
    }
    expect_word("compile");
    Directive d;
    d.compile = true;
    d.tree.method = ident();
    expect('{');
    expect_word("inline");
    expect(':');
    d.tree.edges = edges();
    expect(';');
    expect_word("opt");
    expect(':');
    expect('[');
    skip();
    if (!at(']')) {
      while (true) {
        d.omega.push_back(opt());
        skip();
        if (at(',')) {
          ++pos_;
          continue;
        }
        break;
      }
    }
    expect(']');
    expect('}');
    end();
    return d;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(line_, pos_ + 1, what); }

  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool at(char c) {
    skip();
    return pos_ < s_.size() && s_[pos_] == c;
  }
  void expect(char c) {
    if (!at(c)) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  std::string_view peek_word() {
    skip();
    std::size_t e = pos_;
    while (e < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[e])) || s_[e] == '_' || s_[e] == '$' ||
                             s_[e] == '.'))
      ++e;
    return s_.substr(pos_, e - pos_);
  }
  void expect_word(std::string_view w) {
    if (peek_word() != w) fail("expected '" + std::string(w) + "'");
    pos_ += w.size();
  }
  std::string ident() {
    auto w = peek_word();
    if (!is_identifier(w)) fail("expected method name");
    pos_ += w.size();
    return std::string(w);
  }
  Point number() {
    skip();
    std::size_t e = pos_;
    while (e < s_.size() && std::isdigit(static_cast<unsigned char>(s_[e]))) ++e;
    if (e == pos_) fail("expected program point");
    auto p = parse_point(s_.substr(pos_, e - pos_));
    if (!p) fail("bad program point");
    pos_ = e;
    return *p;
  }
  std::vector<InlineTree::Edge> edges() {
    expect('[');
    std::vector<InlineTree::Edge> out;
    if (at(']')) {
      ++pos_;
      return out;
    }
    while (true) {
      InlineTree::Edge e;
      e.site = number();
      expect(':');
      e.callee.method = ident();
      if (at('[')) e.callee.edges = edges();
      out.push_back(std::move(e));
      if (at(',')) {
        ++pos_;
        continue;
      }
      expect(']');
      return out;
    }
  }
  BranchOpt opt() {
    BranchOpt o;
    auto w = peek_word();
    if (w == "bp") o.kind = OptKind::bp;
    else if (w == "oc") o.kind = OptKind::oc;
    else fail("expected 'bp' or 'oc'");
    pos_ += 2;
    expect('@');
    o.point = number();
    expect(':');
    auto b = peek_word();
    if (b == "if") o.pref = Pref::if_b;
    else if (b == "else") o.pref = Pref::else_b;
    else fail("expected 'if' or 'else'");
    pos_ += b.size();
    return o;
  }
  void end() {
    skip();
    if (pos_ != s_.size()) fail("trailing characters");
  }

  std::string_view s_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Directive parse_directive(std::string_view text, std::size_t line = 1) {
  return detail::DirectiveReader(text, line).read();
}

}  // namespace jitleak
