#pragma once

// Schedules: explicit directive bindings to invoke transitions, and the profiler-driven source.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "jitleak/profiler.hpp"

namespace jitleak {

/// `@invoke N` binds the N-th invoke transition overall; `@invoke m#N` binds
/// the N-th activation of m. The entry activation is ordinal 0 in both counts.
struct Binding {
  std::optional<std::string> method;
  std::size_t ordinal = 0;
  Directive directive;

  friend bool operator==(const Binding&, const Binding&) = default;
};

enum class ScheduleOrigin { explicit_, pf };

struct Schedule {
  std::vector<Binding> bindings;
  ScheduleOrigin origin = ScheduleOrigin::explicit_;

  std::size_t depth() const {
    std::size_t n = 0;
    for (const auto& b : bindings) n += !b.directive.empty();
    return n;
  }
  /// The directive bound to an activation, or d_∅.
  const Directive* lookup(std::size_t ordinal, const std::string& m, std::size_t method_ordinal) const {
    for (const auto& b : bindings) {
      if (b.method ? (*b.method == m && b.ordinal == method_ordinal) : b.ordinal == ordinal) return &b.directive;
    }
    return nullptr;
  }

  /// The schedule actually consumed by a run, as per-method bindings.
  static Schedule from_consumed(const std::vector<AppliedDirective>& consumed, ScheduleOrigin origin) {
    Schedule s;
    s.origin = origin;
    for (const auto& a : consumed) s.bindings.push_back({a.method, a.method_ordinal, a.directive});
    return s;
  }

  friend bool operator==(const Schedule& a, const Schedule& b) { return a.bindings == b.bindings; }
};

inline std::string format_binding(const Binding& b) {
  std::string s = "@invoke ";
  if (b.method) s += *b.method + "#";
  return s + std::to_string(b.ordinal) + " " + format_directive(b.directive);
}

inline std::string format_schedule(const Schedule& s) {
  std::string out;
  for (const auto& b : s.bindings) out += format_binding(b) + "\n";
  return out;
}

inline Schedule parse_schedule(std::string_view text) {
  Schedule s;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    auto last = line.find_last_not_of(" \t\r");
    std::string_view rest = std::string_view(line).substr(first, last - first + 1);
    constexpr std::string_view kTag = "@invoke";
    if (rest.substr(0, kTag.size()) != kTag) throw ParseError(lineno, first + 1, "expected '@invoke'");
    rest.remove_prefix(kTag.size());
    std::size_t ws = rest.find_first_not_of(" \t");
    if (ws == 0 || ws == std::string_view::npos) throw ParseError(lineno, first + 1, "expected an invoke ordinal");
    rest.remove_prefix(ws);
    std::size_t end = rest.find_first_of(" \t");
    std::string_view key = rest.substr(0, end);
    Binding b;
    std::string_view num = key;
    if (auto hash = key.find('#'); hash != std::string_view::npos) {
      b.method = std::string(key.substr(0, hash));
      if (!detail::is_identifier(*b.method)) throw ParseError(lineno, first + 1, "malformed method in binding");
      num = key.substr(hash + 1);
    }
    if (num.empty() || num.find_first_not_of("0123456789") != std::string_view::npos)
      throw ParseError(lineno, first + 1, "malformed invoke ordinal '" + std::string(key) + "'");
    b.ordinal = std::stoull(std::string(num));
    if (end == std::string_view::npos) throw ParseError(lineno, line.size(), "missing directive");
    b.directive = parse_directive(rest.substr(end), lineno);
    if (std::find_if(s.bindings.begin(), s.bindings.end(), [&](const Binding& o) {
          return o.method == b.method && o.ordinal == b.ordinal;
        }) != s.bindings.end())
      throw ParseError(lineno, first + 1, "invoke " + std::string(key) + " bound twice");
    s.bindings.push_back(std::move(b));
  }
  return s;
}

class ScheduleSource final : public DirectiveSource {
 public:
  explicit ScheduleSource(const Schedule& s, bool lenient = false) : s_(s), lenient_(lenient) {}
  DirectiveChoice choose(const InvokeContext& ctx) override {
    const Directive* d = s_.lookup(ctx.ordinal, ctx.method, ctx.method_ordinal);
    if (!d) return {};
    return {*d, lenient_};
  }

 private:
  const Schedule& s_;
  bool lenient_;
};

/// Generates a pf-schedule on the fly: each activation gets pf_m of the profile
/// folded from the trace so far. The profile may outlive a single run.
class PfSource final : public DirectiveSource {
 public:
  PfSource(const Program& p, Profile& pr, PfConfig cfg = {}, const Policy* pol = nullptr)
      : p_(p), pr_(pr), cfg_(cfg), pol_(pol) {}

  DirectiveChoice choose(const InvokeContext& ctx) override {
    unsigned v = ctx.config.ch.at(ctx.method)->version;
    Directive d = pf_next_directive(p_, pr_, ctx.method, cfg_, v, pol_);
    // Non-entry activations are counted when their invoke event is observed.
    if (!ctx.site) ++pr_.invocations[ctx.method];
    return {std::move(d), false};
  }
  void observe(const TraceEvent& ev) override { update_profile_in_place(pr_, ev); }
  bool observes() const override { return true; }

 private:
  const Program& p_;
  Profile& pr_;
  PfConfig cfg_;
  const Policy* pol_;
};

}  // namespace jitleak
