#pragma once

// Line-oriented textual assembly for programs and method listings.
//
//   global pin = 5
//   method verifyPin(x0):
//     0: load x0
//     ...
//   entry verifyPin
//   public x0

#include <charconv>
#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "jitleak/bytecode.hpp"
#include "jitleak/error.hpp"

namespace jitleak {

namespace detail {

struct Token {
  std::string_view text;
  std::size_t column;  // 1-based
};

inline std::vector<Token> tokenize(std::string_view line) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < line.size()) {
    char c = line[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == '#') break;
    if (c == '(' || c == ')' || c == ',' || c == ':' || c == '=') {
      out.push_back({line.substr(i, 1), i + 1});
      ++i;
      continue;
    }
    std::size_t start = i;
    while (i < line.size()) {
      char d = line[i];
      if (std::isspace(static_cast<unsigned char>(d)) || d == '(' || d == ')' || d == ',' || d == ':' || d == '=' ||
          d == '#')
        break;
      ++i;
    }
    out.push_back({line.substr(start, i - start), start + 1});
  }
  return out;
}

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  auto head = static_cast<unsigned char>(s[0]);
  if (!(std::isalpha(head) || s[0] == '_')) return false;
  for (char c : s) {
    auto u = static_cast<unsigned char>(c);
    if (!(std::isalnum(u) || c == '_' || c == '$' || c == '.')) return false;
  }
  return true;
}

inline std::optional<Value> parse_int(std::string_view s) {
  bool neg = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    neg = s[0] == '-';
    s.remove_prefix(1);
  }
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    base = 16;
    s.remove_prefix(2);
  }
  if (s.empty()) return std::nullopt;
  std::uint64_t mag = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), mag, base);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  auto v = static_cast<Value>(mag);
  return neg ? static_cast<Value>(0ULL - mag) : v;
}

inline std::optional<Point> parse_point(std::string_view s) {
  Point p = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), p);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return p;
}

/// `method@pc` operand of a deopt instruction.
inline std::optional<DeoptMetadata> parse_deopt_operand(std::string_view s) {
  auto at = s.find('@');
  if (at == std::string_view::npos) return std::nullopt;
  auto name = s.substr(0, at);
  auto pc = parse_point(s.substr(at + 1));
  if (!is_identifier(name) || !pc) return std::nullopt;
  return DeoptMetadata{std::string(name), *pc};
}

struct PendingInvoke {
  std::size_t line, column;
  std::string callee;
};

}  // namespace detail

inline std::string format_instruction(const Instruction& ins) {
  std::string out(mnemonic(ins.op));
  switch (ins.op) {
    case Opcode::binop: out += ' '; out += mnemonic(ins.bop); break;
    case Opcode::push: out += ' '; out += std::to_string(ins.value); break;
    case Opcode::load:
    case Opcode::store:
    case Opcode::get:
    case Opcode::put:
    case Opcode::invoke: out += ' '; out += ins.name; break;
    case Opcode::ifeq:
    case Opcode::ifneq:
    case Opcode::goto_: out += ' '; out += std::to_string(ins.target); break;
    case Opcode::deopt: out += ' '; out += ins.md.source_method + "@" + std::to_string(ins.md.resume_pc); break;
    default: break;
  }
  return out;
}

/// One `method` block. Native methods are prefixed by a `# native vN` comment.
inline std::string serialize_method(const Method& m) {
  std::ostringstream os;
  if (m.kind == CodeKind::native) os << "# native v" << m.version << "\n";
  os << "method " << m.name << "(";
  for (std::size_t k = 0; k < m.argv.size(); ++k) os << (k ? ", " : "") << m.argv[k];
  os << "):\n";
  for (std::size_t i = 0; i < m.code.size(); ++i) os << "  " << i << ": " << format_instruction(m.code[i]) << "\n";
  return os.str();
}

inline std::string serialize_program(const Program& p) {
  std::ostringstream os;
  for (const auto& g : p.globals) os << "global " << g.name << " = " << g.initial << "\n";
  for (const auto& m : p.methods) os << serialize_method(m);
  os << "entry " << p.entry << "\n";
  if (!p.public_inputs.empty()) {
    os << "public";
    for (const auto& x : p.public_inputs) os << ' ' << x;
    os << "\n";
  }
  return os.str();
}

inline Program parse_program(std::string_view text) {
  using detail::Token;
  Program prog;
  bool have_entry = false;
  std::size_t entry_line = 0;
  Method* current = nullptr;
  std::size_t current_line = 0;
  std::map<std::string, std::size_t> method_lines;
  std::vector<detail::PendingInvoke> invokes;
  // (method index, point) -> source position of jump operand
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> jumps;

  auto finish_method = [&]() {
    if (!current) return;
    bool has_return = false;
    for (const auto& ins : current->code) has_return |= ins.op == Opcode::return_;
    if (!has_return) throw ParseError(current_line, 1, "method must contain return");
    current = nullptr;
  };

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    auto toks = detail::tokenize(line);
    if (toks.empty()) continue;
    auto expect_end = [&](std::size_t k) {
      if (toks.size() > k) throw ParseError(line_no, toks[k].column, "unexpected token '" + std::string(toks[k].text) + "'");
    };
    auto ident_at = [&](std::size_t k, const char* what) -> std::string {
      if (k >= toks.size())
        throw ParseError(line_no, line.size() + 1, std::string("malformed operand: missing ") + what);
      if (!detail::is_identifier(toks[k].text))
        throw ParseError(line_no, toks[k].column, std::string("malformed operand: bad ") + what + " '" +
                                                      std::string(toks[k].text) + "'");
      return std::string(toks[k].text);
    };

    const auto head = toks[0].text;
    if (head == "global") {
      finish_method();
      auto name = ident_at(1, "global name");
      if (toks.size() < 4 || toks[2].text != "=")
        throw ParseError(line_no, toks.size() > 2 ? toks[2].column : line.size() + 1, "malformed operand: expected '='");
      auto v = detail::parse_int(toks[3].text);
      if (!v) throw ParseError(line_no, toks[3].column, "malformed operand: bad integer '" + std::string(toks[3].text) + "'");
      expect_end(4);
      if (prog.find_global(name)) throw ParseError(line_no, toks[1].column, "duplicate global '" + name + "'");
      prog.globals.push_back({name, *v});
    } else if (head == "method") {
      finish_method();
      auto name = ident_at(1, "method name");
      if (method_lines.count(name)) throw ParseError(line_no, toks[1].column, "duplicate method name '" + name + "'");
      if (toks.size() < 3 || toks[2].text != "(")
        throw ParseError(line_no, toks.size() > 2 ? toks[2].column : line.size() + 1, "malformed operand: expected '('");
      Method m;
      m.name = name;
      std::size_t k = 3;
      bool expect_arg = true;
      while (k < toks.size() && toks[k].text != ")") {
        if (expect_arg) {
          m.argv.push_back(ident_at(k, "argument name"));
          expect_arg = false;
        } else {
          if (toks[k].text != ",") throw ParseError(line_no, toks[k].column, "malformed operand: expected ','");
          expect_arg = true;
        }
        ++k;
      }
      if (k >= toks.size()) throw ParseError(line_no, line.size() + 1, "malformed operand: expected ')'");
      if (expect_arg && !m.argv.empty()) throw ParseError(line_no, toks[k].column, "malformed operand: dangling ','");
      ++k;
      if (k >= toks.size() || toks[k].text != ":")
        throw ParseError(line_no, k < toks.size() ? toks[k].column : line.size() + 1, "malformed operand: expected ':'");
      expect_end(k + 1);
      method_lines[name] = line_no;
      prog.methods.push_back(std::move(m));
      current = &prog.methods.back();
      current_line = line_no;
    } else if (head == "entry") {
      finish_method();
      prog.entry = ident_at(1, "entry method");
      expect_end(2);
      have_entry = true;
      entry_line = line_no;
    } else if (head == "public") {
      finish_method();
      for (std::size_t k = 1; k < toks.size(); ++k) {
        if (toks[k].text == ",") continue;
        prog.public_inputs.insert(ident_at(k, "input name"));
      }
    } else {
      // `<label>: <mnemonic> [operand]`
      auto label = detail::parse_point(head);
      if (!label) throw ParseError(line_no, toks[0].column, "unknown directive '" + std::string(head) + "'");
      if (!current) throw ParseError(line_no, toks[0].column, "instruction outside of a method");
      if (*label != current->code.size())
        throw ParseError(line_no, toks[0].column,
                         "label " + std::to_string(*label) + " out of sequence, expected " +
                             std::to_string(current->code.size()));
      if (toks.size() < 2 || toks[1].text != ":")
        throw ParseError(line_no, toks.size() > 1 ? toks[1].column : line.size() + 1, "expected ':' after label");
      if (toks.size() < 3) throw ParseError(line_no, line.size() + 1, "missing mnemonic");
      auto op = opcode_from(toks[2].text);
      if (!op) throw ParseError(line_no, toks[2].column, "unknown mnemonic '" + std::string(toks[2].text) + "'");
      Instruction ins;
      ins.op = *op;
      auto operand = [&]() -> const Token& {
        if (toks.size() < 4) throw ParseError(line_no, line.size() + 1, "malformed operand: missing operand");
        return toks[3];
      };
      std::size_t consumed = 3;
      switch (*op) {
        case Opcode::binop: {
          auto b = binop_from(operand().text);
          if (!b) throw ParseError(line_no, toks[3].column, "malformed operand: unknown binop '" + std::string(toks[3].text) + "'");
          ins.bop = *b;
          consumed = 4;
          break;
        }
        case Opcode::push: {
          auto v = detail::parse_int(operand().text);
          if (!v) throw ParseError(line_no, toks[3].column, "malformed operand: bad integer '" + std::string(toks[3].text) + "'");
          ins.value = *v;
          consumed = 4;
          break;
        }
        case Opcode::load:
        case Opcode::store:
        case Opcode::get:
        case Opcode::put:
        case Opcode::invoke:
          ins.name = ident_at(3, "name");
          if (*op == Opcode::invoke) invokes.push_back({line_no, toks[3].column, ins.name});
          consumed = 4;
          break;
        case Opcode::ifeq:
        case Opcode::ifneq:
        case Opcode::goto_: {
          auto j = detail::parse_point(operand().text);
          if (!j) throw ParseError(line_no, toks[3].column, "malformed operand: bad jump target '" + std::string(toks[3].text) + "'");
          ins.target = *j;
          jumps.emplace_back(prog.methods.size() - 1, current->code.size(), line_no, toks[3].column);
          consumed = 4;
          break;
        }
        case Opcode::deopt: {
          auto md = detail::parse_deopt_operand(operand().text);
          if (!md) throw ParseError(line_no, toks[3].column, "malformed operand: expected method@pc");
          ins.md = *md;
          consumed = 4;
          break;
        }
        default: break;
      }
      expect_end(consumed);
      current->code.push_back(std::move(ins));
    }
  }
  finish_method();

  for (const auto& [mi, pt, ln, col] : jumps) {
    const Method& m = prog.methods[mi];
    if (m.code[pt].target >= m.code.size()) throw ParseError(ln, col, "jump target out of range");
  }
  for (const auto& inv : invokes) {
    if (!prog.find(inv.callee)) throw ParseError(inv.line, inv.column, "unknown invoke target '" + inv.callee + "'");
  }
  if (!have_entry) throw ParseError(line_no, 1, "missing entry declaration");
  if (!prog.find(prog.entry)) throw ParseError(entry_line, 7, "unknown entry method '" + prog.entry + "'");
  return prog;
}

}  // namespace jitleak
