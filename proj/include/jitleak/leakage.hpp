#pragma once

// Constant-time and JIT-constant-time checks, and timing leakage as mutual information.

#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "jitleak/enumerate.hpp"
#include "jitleak/session.hpp"

namespace jitleak {

using Assignment = std::map<std::string, Value>;

/// One public assignment and the secret assignments run against it, each with a class label.
struct IoSpec {
  Assignment publics;
  std::vector<Assignment> secrets;
  std::vector<int> classes;  // empty: one class per secret assignment

  Assignment input(std::size_t k) const {
    Assignment a = publics;
    for (const auto& [x, v] : secrets.at(k)) a[x] = v;
    return a;
  }
  int class_of(std::size_t k) const { return classes.empty() ? static_cast<int>(k) : classes.at(k); }
  std::size_t size() const { return secrets.size(); }

  void check(const Program& p) const {
    if (!classes.empty() && classes.size() != secrets.size())
      throw Error("io spec has " + std::to_string(classes.size()) + " class labels for " +
                  std::to_string(secrets.size()) + " secret assignments");
    for (const auto& s : secrets)
      for (const auto& [x, v] : s)
        if (p.public_inputs.count(x)) throw Error("secret assignment binds public input '" + x + "'");
  }
};

struct Sample {
  int cls;
  double time;
};

struct HistogramRow {
  int cls;
  double lo, hi;
  std::size_t count;
};

namespace detail {

struct Binning {
  double lo = 0, width = 0;
  std::size_t bins = 1;
  std::size_t index(double t) const {
    if (bins == 1 || width <= 0) return 0;
    auto k = static_cast<std::size_t>(std::floor((t - lo) / width));
    return std::min(k, bins - 1);
  }
};

inline Binning binning(const std::vector<Sample>& s, std::size_t n_bins) {
  if (s.empty()) throw EmptySample();
  if (n_bins == 0) throw Error("bin count must be positive");
  double lo = s[0].time, hi = s[0].time;
  for (const auto& x : s) {
    lo = std::min(lo, x.time);
    hi = std::max(hi, x.time);
  }
  if (hi == lo) return {lo, 0, 1};
  return {lo, (hi - lo) / static_cast<double>(n_bins), n_bins};
}

inline double entropy(const std::map<int, std::size_t>& counts, double n) {
  double h = 0;
  for (const auto& [k, c] : counts) {
    if (c == 0) continue;
    double q = static_cast<double>(c) / n;
    h -= q * std::log2(q);
  }
  return h;
}

}  // namespace detail

/// I(K;T) = H(K) − H(K|T) in bits, with T discretized into equal-width bins over [min, max].
inline double mutual_information(const std::vector<Sample>& samples, std::size_t n_bins = 20) {
  auto b = detail::binning(samples, n_bins);
  const double n = static_cast<double>(samples.size());
  std::map<int, std::size_t> by_class;
  std::map<std::size_t, std::map<int, std::size_t>> by_bin;
  for (const auto& s : samples) {
    ++by_class[s.cls];
    ++by_bin[b.index(s.time)][s.cls];
  }
  double h_k = detail::entropy(by_class, n);
  double h_k_t = 0;
  for (const auto& [bin, cls] : by_bin) {
    std::size_t nb = 0;
    for (const auto& [k, c] : cls) nb += c;
    h_k_t += static_cast<double>(nb) / n * detail::entropy(cls, static_cast<double>(nb));
  }
  return std::max(0.0, h_k - h_k_t);
}

inline std::vector<HistogramRow> histogram(const std::vector<Sample>& samples, std::size_t n_bins = 20) {
  auto b = detail::binning(samples, n_bins);
  std::map<std::pair<int, std::size_t>, std::size_t> counts;
  std::set<int> classes;
  for (const auto& s : samples) {
    ++counts[{s.cls, b.index(s.time)}];
    classes.insert(s.cls);
  }
  std::vector<HistogramRow> rows;
  for (int k : classes)
    for (std::size_t i = 0; i < b.bins; ++i) {
      double lo = b.lo + b.width * static_cast<double>(i);
      double hi = b.bins == 1 ? b.lo : lo + b.width;
      auto it = counts.find({k, i});
      rows.push_back({k, lo, hi, it == counts.end() ? 0 : it->second});
    }
  return rows;
}

inline void write_histogram_csv(std::ostream& os, const std::vector<HistogramRow>& rows) {
  os << "class,bin_lo,bin_hi,count\n";
  for (const auto& r : rows) os << r.cls << ',' << r.lo << ',' << r.hi << ',' << r.count << '\n';
}

/// Gaussian noise on the times, for illustrative histograms only.
inline std::vector<Sample> jitter(std::vector<Sample> s, double sigma, std::uint64_t seed) {
  if (sigma <= 0) return s;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& x : s) x.time += noise(rng);
  return s;
}

namespace detail {

/// Calls fn(k) for k in [0, n) on up to `jobs` threads, striding the indices.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex mu;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t k = t; k < n; k += jobs) fn(k);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace detail

enum class Verdict { secure, leaky, inconclusive };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::secure: return "secure";
    case Verdict::leaky: return "leaky";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "?";
}

/// Two runs from the same starting code heap that differ in cost. An
/// explicit witness replays `schedule` on both inputs; a profiler witness
/// replays `priming` through a fresh session, then probes each input.
struct Witness {
  ScheduleOrigin origin = ScheduleOrigin::explicit_;
  Schedule schedule;
  std::vector<Assignment> priming;
  Assignment input_a, input_b;
  Cost cost_a = 0, cost_b = 0;
  Cost delta() const { return cost_a > cost_b ? cost_a - cost_b : cost_b - cost_a; }
};

struct LeakReport {
  Verdict verdict = Verdict::secure;
  std::optional<Witness> witness;
  double mi_bits = 0;
  std::vector<Sample> samples;
  std::vector<HistogramRow> hist;
  std::size_t runs = 0;
  std::size_t schedules = 0;
  std::string note;
};

namespace detail {

inline void finish_report(LeakReport& r, std::size_t n_bins) {
  if (!r.samples.empty()) {
    r.mi_bits = mutual_information(r.samples, n_bins);
    r.hist = histogram(r.samples, n_bins);
  }
}

/// The first witness in enumeration order, which is the simplest schedule found.
inline void keep_first(std::optional<Witness>& best, Witness w) {
  if (w.delta() != 0 && !best) best = std::move(w);
}

}  // namespace detail

/// JIT-free runs of every secret assignment; secure iff all costs agree.
inline LeakReport check_constant_time(const Program& p, const IoSpec& io, const CostModel& cm,
                                      const RunOptions& opt = {}, std::size_t n_bins = 20) {
  io.check(p);
  LeakReport r;
  RunOptions quiet = opt;
  quiet.record_trace = false;
  std::vector<Cost> costs;
  for (std::size_t k = 0; k < io.size(); ++k) {
    costs.push_back(run(p, io.input(k), cm, quiet).total_cost);
    r.samples.push_back({io.class_of(k), static_cast<double>(costs.back())});
    ++r.runs;
  }
  for (std::size_t a = 0; a < costs.size(); ++a)
    for (std::size_t b = a + 1; b < costs.size(); ++b)
      if (costs[a] != costs[b]) {
        Witness w;
        w.input_a = io.input(a);
        w.input_b = io.input(b);
        w.cost_a = costs[a];
        w.cost_b = costs[b];
        detail::keep_first(r.witness, std::move(w));
      }
  if (r.witness) r.verdict = Verdict::leaky;
  detail::finish_report(r, n_bins);
  return r;
}

struct JitCtOptions {
  PfConfig pf;
  UniverseOptions universe;
  std::size_t ordinals = 2;
  std::size_t max_runs = 2'000'000;
  bool explicit_schedules = true;
  bool pf_schedules = true;
  RunOptions run;
  std::size_t n_bins = 20;
  std::size_t jobs = 1;  // threads for the explicit schedules; the report does not depend on it
};

/// Replays a witness; returns the two costs.
inline std::pair<Cost, Cost> replay_witness(const Program& p, const Witness& w, const CostModel& cm,
                                            const Policy* pol = nullptr, const PfConfig& pf = {},
                                            const RunOptions& opt = {}) {
  if (w.origin == ScheduleOrigin::explicit_) {
    ScheduleSource sa(w.schedule), sb(w.schedule);
    return {run(p, w.input_a, sa, cm, opt).total_cost, run(p, w.input_b, sb, cm, opt).total_cost};
  }
  Session s(p, cm, pf, pol ? std::optional<Policy>(*pol) : std::nullopt);
  s.opt = opt;
  for (const auto& a : w.priming) s.run(a);
  Session a = s.snapshot(), b = s.snapshot();
  return {a.run(w.input_a).total_cost, b.run(w.input_b).total_cost};
}

/// Explicit part: every enumerated schedule (compliant with `pol` when given)
/// is run on all secret assignments. Profiler part: fresh sessions are primed
/// with batches of runs and every assignment is probed from the same primed
/// code heap and profile. Secure iff matched runs always cost the same.
inline LeakReport check_jit_constant_time(const Program& p, const IoSpec& io, const Policy* pol, std::size_t depth,
                                          const CostModel& cm, const JitCtOptions& opt = {}) {
  io.check(p);
  LeakReport r;
  RunOptions quiet = opt.run;
  quiet.record_trace = false;
  auto budget_left = [&] { return r.runs < opt.max_runs; };
  bool out_of_budget = false;

  if (opt.explicit_schedules && io.size() > 0) {
    std::map<std::string, std::size_t> counts;
    for (std::size_t k = 0; k < io.size(); ++k)
      for (const auto& [m, n] : activation_counts(p, io.input(k), cm, opt.run)) counts[m] = std::max(counts[m], n);
    EnumOptions eo;
    eo.universe = opt.universe;
    eo.ordinals = opt.ordinals;
    eo.policy = pol;
    eo.max_schedules = std::numeric_limits<std::size_t>::max();
    auto cands = enumerate_candidates(p, counts, depth, eo);
    const CodeHeap ch = code_heap_of(p);
    // Schedule k runs iff k * io.size() runs came before it, as if evaluated one at a time.
    const std::size_t affordable = (opt.max_runs + io.size() - 1) / io.size();
    const std::size_t n = std::min(cands.size(), affordable);
    out_of_budget = n < cands.size();
    std::vector<std::vector<std::pair<std::size_t, Cost>>> all(n);
    detail::parallel_for(n, opt.jobs, [&](std::size_t j) {
      for (std::size_t k = 0; k < io.size(); ++k) {
        ScheduleSource src(cands[j]);
        try {
          all[j].emplace_back(k, run(p, io.input(k), src, cm, quiet, &ch).total_cost);
        } catch (const Stuck&) {
          continue;  // not valid for this initial configuration
        }
      }
    });
    for (std::size_t j = 0; j < n; ++j) {
      const Schedule& s = cands[j];
      const auto& costs = all[j];
      ++r.schedules;
      r.runs += io.size();
      if (s.bindings.empty())
        for (auto [k, c] : costs) r.samples.push_back({io.class_of(k), static_cast<double>(c)});
      for (std::size_t a = 0; a < costs.size(); ++a)
        for (std::size_t b = a + 1; b < costs.size(); ++b)
          if (costs[a].second != costs[b].second) {
            Witness w;
            w.schedule = s;
            w.input_a = io.input(costs[a].first);
            w.input_b = io.input(costs[b].first);
            w.cost_a = costs[a].second;
            w.cost_b = costs[b].second;
            detail::keep_first(r.witness, std::move(w));
          }
    }
  }

  if (opt.pf_schedules && io.size() > 0 && !out_of_budget) {
    const std::size_t batch = opt.pf.compile_threshold + 1;
    std::vector<std::vector<Assignment>> primings;
    for (std::size_t k = 0; k < io.size(); ++k) primings.push_back({io.input(k)});
    if (io.size() > 1) {
      std::vector<Assignment> mix;
      for (std::size_t k = 0; k < io.size(); ++k) mix.push_back(io.input(k));
      primings.push_back(std::move(mix));
    }
    std::optional<Policy> popt = pol ? std::optional<Policy>(*pol) : std::nullopt;
    for (const auto& cycle : primings) {
      Session s(p, cm, opt.pf, popt);
      s.opt = quiet;
      std::vector<Assignment> seq;
      for (std::size_t level = 1; level <= std::max<std::size_t>(depth, 1); ++level) {
        if (!budget_left()) {
          out_of_budget = true;
          break;
        }
        for (std::size_t k = 0; k < batch; ++k) {
          const Assignment& a = cycle[(seq.size()) % cycle.size()];
          s.run(a);
          seq.push_back(a);
          ++r.runs;
        }
        std::vector<Cost> costs;
        for (std::size_t k = 0; k < io.size(); ++k) {
          Session probe = s.snapshot();
          costs.push_back(probe.run(io.input(k)).total_cost);
          ++r.runs;
        }
        ++r.schedules;
        for (std::size_t a = 0; a < costs.size(); ++a)
          for (std::size_t b = a + 1; b < costs.size(); ++b)
            if (costs[a] != costs[b]) {
              Witness w;
              w.origin = ScheduleOrigin::pf;
              w.priming = seq;
              w.input_a = io.input(a);
              w.input_b = io.input(b);
              w.cost_a = costs[a];
              w.cost_b = costs[b];
              detail::keep_first(r.witness, std::move(w));
            }
      }
      if (out_of_budget) break;
    }
  }

  if (r.witness) r.verdict = Verdict::leaky;
  else if (out_of_budget) {
    r.verdict = Verdict::inconclusive;
    r.note = "inconclusive(" + std::to_string(depth) + ")";
  }
  detail::finish_report(r, opt.n_bins);
  return r;
}

}  // namespace jitleak
