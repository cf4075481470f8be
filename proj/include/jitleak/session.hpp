#pragma once

// A JVM-like process: code heap and profile persist across runs of the entry method.

#include <optional>

#include "jitleak/schedule.hpp"

namespace jitleak {

struct Session {
  const Program* program = nullptr;
  CodeHeap ch;
  Profile profile;
  PfConfig cfg;
  std::optional<Policy> policy;
  CostModel cm = CostModel::defaults();
  RunOptions opt;

  Session(const Program& p, CostModel cost = CostModel::defaults(), PfConfig pf = {},
          std::optional<Policy> pol = std::nullopt)
      : program(&p), ch(code_heap_of(p)), cfg(pf), policy(std::move(pol)), cm(cost) {}

  RunResult run(const std::map<std::string, Value>& inputs) {
    PfSource src(*program, profile, cfg, policy ? &*policy : nullptr);
    RunResult r = jitleak::run(*program, inputs, src, cm, opt, &ch);
    ch = r.final_code;
    return r;
  }

  Session snapshot() const { return *this; }
};

}  // namespace jitleak
