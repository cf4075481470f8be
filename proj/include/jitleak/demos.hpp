#pragma once

// The three attack demonstrations, with and without protection.

#include <string>
#include <vector>

#include "jitleak/leakage.hpp"
#include "jitleak/programs.hpp"
#include "jitleak/typesystem.hpp"

namespace jitleak {

enum class Protect { none, full, light };

inline std::string_view to_string(Protect p) {
  switch (p) {
    case Protect::none: return "none";
    case Protect::full: return "full";
    case Protect::light: return "light";
  }
  return "?";
}

inline Protect protect_from(std::string_view s) {
  if (s == "none") return Protect::none;
  if (s == "full") return Protect::full;
  if (s == "light") return Protect::light;
  throw Error("unknown protection '" + std::string(s) + "'");
}

inline const std::vector<std::string>& demo_names() {
  static const std::vector<std::string> names{"pwdEq", "verifyPin", "checkSecret"};
  return names;
}

/// A demo: program, attacker priming runs, and the probe inputs split into secret classes.
struct DemoSetup {
  Program program;
  std::vector<Assignment> priming;
  IoSpec probes;
  std::string recipe;
};

inline DemoSetup demo_setup(std::string_view name) {
  DemoSetup d;
  if (name == "verifyPin") {
    d.program = programs::verify_pin();
    // The attacker's guess hits the pin once in every eight runs.
    for (int k = 0; k < 50; ++k) d.priming.push_back({{"x0", k % 8 == 7 ? 5 : 9}});
    d.probes.publics = {{"x0", 5}};
    for (Value pin : {5, 5, 5, 5}) {
      d.probes.secrets.push_back({{"pin", pin}});
      d.probes.classes.push_back(0);
    }
    for (Value pin : {1, 2, 9, 1000}) {
      d.probes.secrets.push_back({{"pin", pin}});
      d.probes.classes.push_back(1);
    }
    d.recipe = "50 runs, guess equal to the pin at run 7 of every 8";
  } else if (name == "pwdEq") {
    d.program = programs::pwd_eq();
    const Value pwd = programs::pack8("password");
    for (int k = 0; k < 50; ++k) d.priming.push_back({{"a", programs::pack8("PASSWORD")}, {"pwd", pwd}});
    d.probes.publics = {{"a", programs::pack8("pzzzzzzz")}};
    for (const char* s : {"password", "pa55word", "pxxxxxxx", "p0000000"}) {
      d.probes.secrets.push_back({{"pwd", programs::pack8(s)}});
      d.probes.classes.push_back(0);
    }
    for (const char* s : {"qassword", "Password", "secret!!", "hunter22"}) {
      d.probes.secrets.push_back({{"pwd", programs::pack8(s)}});
      d.probes.classes.push_back(1);
    }
    d.recipe = "50 runs with a guess mismatching every character";
  } else if (name == "checkSecret") {
    d.program = programs::check_secret();
    d.priming.push_back({{"guess", 0}, {"n", 4}});
    d.probes.publics = {{"guess", 500}, {"n", 4}};
    for (Value s : {500, 501, 1000, 4000}) {
      d.probes.secrets.push_back({{"secret", s}});
      d.probes.classes.push_back(0);
    }
    for (Value s : {0, 1, 250, 499}) {
      d.probes.secrets.push_back({{"secret", s}});
      d.probes.classes.push_back(1);
    }
    d.recipe = "one run with guess 0, which calls consume1 sixteen times";
  } else {
    throw Error("unknown demo '" + std::string(name) + "'");
  }
  return d;
}

struct DemoReport {
  std::string name;
  Protect protect = Protect::none;
  std::optional<Policy> policy;
  std::optional<bool> light_assumption;
  LeakReport report;
  CodeHeap primed_code;
  std::string recipe;
};

/// Primes a session with the attacker's runs, then probes every secret
/// assignment from a snapshot of the primed code heap and profile.
inline DemoReport run_demo(std::string_view name, Protect protect, const CostModel& cm = CostModel::defaults(),
                           const PfConfig& pf = {}, std::size_t n_bins = 20, std::size_t jobs = 1) {
  DemoSetup d = demo_setup(name);
  DemoReport out;
  out.name = std::string(name);
  out.protect = protect;
  out.recipe = d.recipe;
  if (protect != Protect::none) {
    Policy pol = infer_policy(d.program).policy;
    pol.mode = protect == Protect::full ? Mode::full : Mode::light;
    out.policy = pol;
    out.light_assumption = check_light_assumption(d.program, pol);
  }
  Session s(d.program, cm, pf, out.policy);
  s.opt.record_trace = false;
  for (const auto& a : d.priming) s.run(a);
  out.primed_code = s.ch;

  LeakReport& r = out.report;
  r.runs = d.priming.size();
  std::vector<Cost> costs(d.probes.size());
  detail::parallel_for(costs.size(), jobs, [&](std::size_t k) {
    Session probe = s.snapshot();
    costs[k] = probe.run(d.probes.input(k)).total_cost;
  });
  for (std::size_t k = 0; k < costs.size(); ++k) {
    r.samples.push_back({d.probes.class_of(k), static_cast<double>(costs[k])});
    ++r.runs;
  }
  r.schedules = 1;
  for (std::size_t a = 0; a < costs.size() && !r.witness; ++a)
    for (std::size_t b = a + 1; b < costs.size(); ++b)
      if (costs[a] != costs[b]) {
        Witness w;
        w.origin = ScheduleOrigin::pf;
        w.priming = d.priming;
        w.input_a = d.probes.input(a);
        w.input_b = d.probes.input(b);
        w.cost_a = costs[a];
        w.cost_b = costs[b];
        r.witness = std::move(w);
        break;
      }
  r.verdict = r.witness ? Verdict::leaky : Verdict::secure;
  r.mi_bits = mutual_information(r.samples, n_bins);
  r.hist = histogram(r.samples, n_bins);
  return out;
}

}  // namespace jitleak
