#pragma once

// Random well-formed programs for differential and property tests.
//
// Programs are generated as a small structured AST (assignments, global
// writes, if/else, counted loops, calls to earlier methods) and compiled to
// bytecode, so every method is valid: balanced stack, single trailing return,
// no recursion, bounded loops.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "jitleak/bytecode.hpp"
#include "jitleak/validate.hpp"

namespace gen {

using jitleak::BinOp;
using jitleak::Instruction;
using jitleak::Method;
using jitleak::Point;
using jitleak::Program;
using jitleak::Value;

struct Expr;
using ExprP = std::shared_ptr<Expr>;

struct Expr {
  enum Kind { constant, local, global, bin, call } kind = constant;
  Value value = 0;
  bool free = true;  // constant that may be rewritten without changing control flow
  std::string name;
  BinOp op = BinOp::add;
  ExprP lhs, rhs;
  std::vector<ExprP> args;
};

struct Stmt;
using Block = std::vector<Stmt>;

struct Stmt {
  enum Kind { store, put, drop, branch, loop } kind = store;
  std::string name;
  ExprP e;
  bool ifneq = false;
  Block else_arm, then_arm;
  bool then_goto = false;
  Value bound = 0;
  Block body;
};

struct Options {
  std::size_t max_methods = 4;
  std::size_t max_instructions = 40;  // per method
  std::size_t max_nesting = 2;
  Value max_bound = 3;
  /// Mirror every branch whose condition may be secret so both arms cost the same.
  bool balanced = false;
};

class Generator {
 public:
  Generator(std::uint64_t seed, Options opt) : rng_(seed), opt_(opt) {}

  Program program() {
    Program p;
    std::size_t n_globals = pick(1, 3);
    for (std::size_t k = 0; k < n_globals; ++k) {
      std::string g = "g" + std::to_string(k);
      p.globals.push_back({g, small()});
      if (coin(0.5)) p.public_inputs.insert(g);
    }
    std::size_t n_methods = pick(1, opt_.max_methods);
    for (std::size_t k = 0; k < n_methods; ++k) {
      const bool entry = k + 1 == n_methods;
      Method m;
      m.name = entry ? "main" : "f" + std::to_string(k);
      std::size_t n_args = pick(0, 2);
      for (std::size_t a = 0; a < n_args; ++a) m.argv.push_back("a" + std::to_string(a));
      if (entry)
        for (const auto& a : m.argv)
          if (coin(0.5)) p.public_inputs.insert(a);
      build_method(p, m, entry);
      p.methods.push_back(std::move(m));
    }
    p.entry = "main";
    return p;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  // Generation state for the method being built.
  struct Scope {
    std::vector<std::string> defined;
    std::vector<std::string> readonly_public;  // sources whose value is public and never written
    std::size_t counters = 0;
  };

  std::size_t pick(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_); }
  bool coin(double p) { return std::bernoulli_distribution(p)(rng_); }
  Value small() { return std::uniform_int_distribution<Value>(-6, 6)(rng_); }

  const Program* prog_ = nullptr;
  std::vector<std::string> callable_;
  std::vector<std::string> writable_globals_;
  std::vector<std::string> readable_globals_;

  void build_method(const Program& p, Method& m, bool entry) {
    prog_ = &p;
    callable_.clear();
    for (const auto& c : p.methods) callable_.push_back(c.name);
    readable_globals_.clear();
    writable_globals_.clear();
    Scope sc;
    for (const auto& g : p.globals) {
      readable_globals_.push_back(g.name);
      // Balanced programs only write secret globals, so public ones stay read-only.
      if (!opt_.balanced || !p.public_inputs.count(g.name)) writable_globals_.push_back(g.name);
      else sc.readonly_public.push_back(g.name);
    }
    for (const auto& a : m.argv) {
      sc.defined.push_back(a);
      if (entry && p.public_inputs.count(a)) sc.readonly_public.push_back(a);
    }
    for (std::size_t attempt = 0; attempt < 8; ++attempt) {
      Block body;
      Scope s = sc;
      const std::size_t target = pick(2, 6);
      std::size_t used = 0;
      ExprP result;
      for (std::size_t k = 0; k < target; ++k) {
        Scope next = s;
        Stmt st = statement(next, 0);
        std::size_t sz = size_of(st);
        if (used + sz + 8 > opt_.max_instructions) break;
        used += sz;
        s = std::move(next);
        body.push_back(std::move(st));
      }
      result = expr(s, 2);
      std::vector<Instruction> code;
      emit_block(body, code);
      emit_expr(*result, code);
      code.push_back(Instruction::return_());
      if (code.size() > opt_.max_instructions) continue;
      m.code = std::move(code);
      return;
    }
    m.code = {Instruction::push(0), Instruction::return_()};
  }

  // ---- expressions

  ExprP leaf(const Scope& s) {
    auto e = std::make_shared<Expr>();
    std::size_t r = pick(0, 2);
    if (r == 1 && !s.defined.empty()) {
      e->kind = Expr::local;
      e->name = s.defined[pick(0, s.defined.size() - 1)];
    } else if (r == 2 && !readable_globals_.empty()) {
      e->kind = Expr::global;
      e->name = readable_globals_[pick(0, readable_globals_.size() - 1)];
    } else {
      e->value = small();
    }
    return e;
  }

  ExprP constant(Value v, bool free) {
    auto e = std::make_shared<Expr>();
    e->value = v;
    e->free = free;
    return e;
  }

  ExprP expr(const Scope& s, std::size_t depth) {
    if (depth == 0 || coin(0.35)) return leaf(s);
    if (!callable_.empty() && coin(0.15)) {
      auto e = std::make_shared<Expr>();
      e->kind = Expr::call;
      e->name = callable_[pick(0, callable_.size() - 1)];
      for (std::size_t k = 0; k < prog_->method(e->name).argv.size(); ++k) e->args.push_back(expr(s, depth - 1));
      return e;
    }
    static const BinOp ops[] = {BinOp::add, BinOp::sub, BinOp::mul, BinOp::div, BinOp::eq,
                                BinOp::lt,  BinOp::and_, BinOp::or_, BinOp::xor_};
    auto e = std::make_shared<Expr>();
    e->kind = Expr::bin;
    e->op = ops[pick(0, 8)];
    e->lhs = expr(s, depth - 1);
    if (e->op == BinOp::div) {
      Value d = 0;
      while (d == 0) d = small();
      e->rhs = constant(d, false);
    } else {
      e->rhs = expr(s, depth - 1);
    }
    return e;
  }

  /// Public by construction: constants and read-only public sources.
  ExprP public_expr(const Scope& s) {
    auto pleaf = [&]() -> ExprP {
      if (!s.readonly_public.empty() && coin(0.7)) {
        auto e = std::make_shared<Expr>();
        const auto& n = s.readonly_public[pick(0, s.readonly_public.size() - 1)];
        bool is_global = std::find(readable_globals_.begin(), readable_globals_.end(), n) != readable_globals_.end();
        e->kind = is_global ? Expr::global : Expr::local;
        e->name = n;
        return e;
      }
      return constant(small(), false);
    };
    if (coin(0.5)) return pleaf();
    auto e = std::make_shared<Expr>();
    e->kind = Expr::bin;
    e->op = coin(0.5) ? BinOp::lt : BinOp::sub;
    e->lhs = pleaf();
    e->rhs = pleaf();
    return e;
  }

  // ---- statements

  Stmt statement(Scope& s, std::size_t nesting) {
    const std::size_t r = pick(0, 9);
    Stmt st;
    if (r <= 3) {
      st.kind = Stmt::store;
      st.e = expr(s, 2);
      // Arguments are never overwritten, so public arguments stay public.
      st.name = "x" + std::to_string(pick(0, 3));
      if (std::find(s.defined.begin(), s.defined.end(), st.name) == s.defined.end()) s.defined.push_back(st.name);
      return st;
    }
    if (r == 4 && !writable_globals_.empty()) {
      st.kind = Stmt::put;
      st.e = expr(s, 2);
      st.name = writable_globals_[pick(0, writable_globals_.size() - 1)];
      return st;
    }
    if (r == 5) {
      st.kind = Stmt::drop;
      st.e = expr(s, 2);
      return st;
    }
    if (nesting >= opt_.max_nesting) {
      st.kind = Stmt::drop;
      st.e = expr(s, 1);
      return st;
    }
    if (r <= 8) {
      st.kind = Stmt::branch;
      st.ifneq = coin(0.5);
      const bool mirrored = opt_.balanced && coin(0.75);
      st.e = opt_.balanced && !mirrored ? public_expr(s) : expr(s, 2);
      Scope inner = s;
      st.else_arm = block(inner, nesting + 1, pick(0, 2));
      if (mirrored) {
        st.then_arm = rewrite_constants(st.else_arm);
        st.then_goto = true;
      } else {
        Scope other = s;
        st.then_arm = block(other, nesting + 1, pick(0, 2));
        st.then_goto = coin(0.5);
      }
      return st;
    }
    st.kind = Stmt::loop;
    st.name = "i" + std::to_string(nesting) + "_" + std::to_string(s.counters++);
    st.bound = static_cast<Value>(pick(0, static_cast<std::size_t>(opt_.max_bound)));
    Scope inner = s;
    inner.defined.push_back(st.name);
    st.body = block(inner, nesting + 1, pick(0, 2));
    return st;
  }

  Block block(Scope& s, std::size_t nesting, std::size_t n) {
    Block b;
    for (std::size_t k = 0; k < n; ++k) b.push_back(statement(s, nesting));
    return b;
  }

  ExprP rewrite_expr(const ExprP& e) {
    if (!e) return e;
    auto c = std::make_shared<Expr>(*e);
    if (c->kind == Expr::constant && c->free) c->value = small();
    c->lhs = rewrite_expr(e->lhs);
    c->rhs = rewrite_expr(e->rhs);
    for (auto& a : c->args) a = rewrite_expr(a);
    return c;
  }

  /// Same shape, different free constants. Branch conditions inside keep
  /// their constants only where they steer public control flow.
  Block rewrite_constants(const Block& b) {
    Block out;
    for (const auto& st : b) {
      Stmt c = st;
      if (c.kind == Stmt::branch && !c.then_goto) c.e = st.e;  // public condition: keep
      else c.e = rewrite_expr(st.e);
      c.else_arm = rewrite_constants(st.else_arm);
      c.then_arm = rewrite_constants(st.then_arm);
      c.body = rewrite_constants(st.body);
      out.push_back(std::move(c));
    }
    return out;
  }

  // ---- code generation

  void emit_expr(const Expr& e, std::vector<Instruction>& out) {
    switch (e.kind) {
      case Expr::constant: out.push_back(Instruction::push(e.value)); break;
      case Expr::local: out.push_back(Instruction::load(e.name)); break;
      case Expr::global: out.push_back(Instruction::get(e.name)); break;
      case Expr::bin:
        emit_expr(*e.rhs, out);
        emit_expr(*e.lhs, out);
        out.push_back(Instruction::binop(e.op));
        break;
      case Expr::call:
        for (const auto& a : e.args) emit_expr(*a, out);
        out.push_back(Instruction::invoke(e.name));
        break;
    }
  }

  void emit_block(const Block& b, std::vector<Instruction>& out) {
    for (const auto& st : b) emit_stmt(st, out);
  }

  void emit_stmt(const Stmt& st, std::vector<Instruction>& out) {
    switch (st.kind) {
      case Stmt::store:
        emit_expr(*st.e, out);
        out.push_back(Instruction::store(st.name));
        break;
      case Stmt::put:
        emit_expr(*st.e, out);
        out.push_back(Instruction::put(st.name));
        break;
      case Stmt::drop:
        emit_expr(*st.e, out);
        out.push_back(Instruction::pop());
        break;
      case Stmt::branch: {
        emit_expr(*st.e, out);
        const Point cond = out.size();
        out.push_back(st.ifneq ? Instruction::ifneq(0) : Instruction::ifeq(0));
        emit_block(st.else_arm, out);
        const Point g = out.size();
        out.push_back(Instruction::goto_(0));
        out[cond].target = out.size();
        emit_block(st.then_arm, out);
        if (st.then_goto) {
          out.push_back(Instruction::goto_(out.size() + 1));
        }
        out[g].target = out.size();
        break;
      }
      case Stmt::loop: {
        out.push_back(Instruction::push(0));
        out.push_back(Instruction::store(st.name));
        const Point head = out.size();
        out.push_back(Instruction::push(st.bound));
        out.push_back(Instruction::load(st.name));
        out.push_back(Instruction::binop(BinOp::lt));
        const Point cond = out.size();
        out.push_back(Instruction::ifeq(0));
        emit_block(st.body, out);
        out.push_back(Instruction::push(1));
        out.push_back(Instruction::load(st.name));
        out.push_back(Instruction::binop(BinOp::add));
        out.push_back(Instruction::store(st.name));
        out.push_back(Instruction::goto_(head));
        out[cond].target = out.size();
        break;
      }
    }
  }

  std::size_t size_of(const Stmt& st) {
    std::vector<Instruction> tmp;
    emit_stmt(st, tmp);
    return tmp.size();
  }

  std::mt19937_64 rng_;
  Options opt_;
};

inline Program random_program(std::uint64_t seed, Options opt = {}) {
  Generator g(seed, opt);
  return g.program();
}

/// Random values for every entry argument and global.
inline std::map<std::string, Value> random_inputs(const Program& p, std::mt19937_64& rng, Value lo = -6,
                                                  Value hi = 6) {
  std::uniform_int_distribution<Value> d(lo, hi);
  std::map<std::string, Value> in;
  for (const auto& g : p.globals) in[g.name] = d(rng);
  for (const auto& a : p.method(p.entry).argv) in[a] = d(rng);
  return in;
}

/// Random control-flow skeleton with a single trailing return and every point
/// able to reach it. Only the control flow is meaningful.
inline Method random_cfg(std::mt19937_64& rng, std::size_t max_points = 18) {
  std::uniform_int_distribution<std::size_t> size_d(2, max_points);
  for (;;) {
    const std::size_t n = size_d(rng);
    Method m;
    m.name = "cfg";
    std::uniform_int_distribution<std::size_t> any(0, n - 1);
    std::uniform_int_distribution<int> kind(0, 9);
    for (Point i = 0; i + 1 < n; ++i) {
      int k = kind(rng);
      if (k <= 3) m.code.push_back(Instruction::ifeq(any(rng)));
      else if (k <= 5) m.code.push_back(Instruction::goto_(any(rng)));
      else m.code.push_back(Instruction::push(0));
    }
    m.code.push_back(Instruction::return_());
    // Reject skeletons with points that cannot reach the exit.
    std::vector<std::vector<Point>> rev(n);
    for (Point i = 0; i < n; ++i)
      for (Point s : jitleak::nxt(m, i)) rev[s].push_back(i);
    std::vector<char> ok(n, 0);
    std::vector<Point> work{n - 1};
    ok[n - 1] = 1;
    while (!work.empty()) {
      Point k = work.back();
      work.pop_back();
      for (Point q : rev[k])
        if (!ok[q]) {
          ok[q] = 1;
          work.push_back(q);
        }
    }
    if (std::all_of(ok.begin(), ok.end(), [](char c) { return c != 0; })) return m;
  }
}

}  // namespace gen
