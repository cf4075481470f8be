#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "jitleak/adversary.hpp"
#include "jitleak/demos.hpp"
#include "support/oracles.hpp"

using namespace jitleak;

namespace {

std::vector<Sample> samples_of(const std::vector<std::pair<int, double>>& xs) {
  std::vector<Sample> out;
  for (auto [k, t] : xs) out.push_back({k, t});
  return out;
}

IoSpec verify_pin_io() {
  IoSpec io;
  io.publics = {{"x0", 5}};
  io.secrets = {{{"pin", 5}}, {{"pin", 3}}};
  return io;
}

const Program kStraight = parse_program(R"(method main(x):
  0: load x
  1: push 2
  2: binop mul
  3: return
entry main
)");

}  // namespace

TEST(MutualInformation, IdenticalTimesGiveZero) {
  EXPECT_EQ(mutual_information(samples_of({{0, 7}, {1, 7}, {0, 7}, {1, 7}})), 0.0);
}

TEST(MutualInformation, SeparatedUniformClassesGiveLogK) {
  EXPECT_EQ(mutual_information(samples_of({{0, 6}, {1, 7}})), 1.0);
  EXPECT_EQ(mutual_information(samples_of({{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 1}, {1, 2}, {2, 3}, {3, 4}})), 2.0);
  std::vector<Sample> eight;
  for (int k = 0; k < 8; ++k) eight.push_back({k, 100.0 * k});
  EXPECT_EQ(mutual_information(eight), 3.0);
  EXPECT_DOUBLE_EQ(mutual_information(samples_of({{0, 1}, {1, 2}, {2, 3}})), std::log2(3.0));
}

TEST(MutualInformation, NearbyTimesShareABin) {
  // 20 bins over [0, 100]: 0 and 4 land together, 100 alone.
  auto s = samples_of({{0, 0}, {1, 4}, {0, 100}, {1, 100}});
  EXPECT_EQ(mutual_information(s, 20), 0.0);
  EXPECT_GT(mutual_information(samples_of({{0, 0}, {1, 6}, {0, 100}, {1, 100}}), 20), 0.0);
}

TEST(MutualInformation, EmptyThrows) {
  EXPECT_THROW(mutual_information({}), EmptySample);
}

TEST(MutualInformation, MatchesDoubleSumOracleOnRandomJointHistograms) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t K = std::uniform_int_distribution<std::size_t>(2, 5)(rng);
    const std::size_t T = std::uniform_int_distribution<std::size_t>(2, 12)(rng);
    std::vector<std::vector<double>> joint(K, std::vector<double>(T, 0));
    std::uniform_int_distribution<int> cnt(0, 6);
    for (auto& row : joint)
      for (auto& c : row) c = cnt(rng);
    // Every time value must occur so the bin edges sit on the integers.
    for (std::size_t t = 0; t < T; ++t) joint[std::uniform_int_distribution<std::size_t>(0, K - 1)(rng)][t] += 1;
    std::vector<Sample> s;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t t = 0; t < T; ++t)
        for (int n = 0; n < joint[k][t]; ++n) s.push_back({static_cast<int>(k), static_cast<double>(t)});
    std::shuffle(s.begin(), s.end(), rng);
    EXPECT_NEAR(mutual_information(s, T), oracle::mutual_information(joint), 1e-9) << "trial " << trial;
  }
}

TEST(Histogram, RowsAndCsv) {
  auto rows = histogram(samples_of({{0, 6}, {1, 7}, {1, 7}}), 2);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].count, 1u);
  EXPECT_EQ(rows[3].count, 2u);
  std::ostringstream os;
  write_histogram_csv(os, rows);
  const std::string csv = os.str();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "class,bin_lo,bin_hi,count");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Histogram, JitterIsSeededAndOffByDefault) {
  auto s = samples_of({{0, 6}, {1, 7}});
  EXPECT_EQ(jitter(s, 0.0, 1)[0].time, 6.0);
  auto a = jitter(s, 1.0, 42), b = jitter(s, 1.0, 42);
  EXPECT_EQ(a[0].time, b[0].time);
  EXPECT_NE(a[0].time, 6.0);
}

TEST(ConstantTime, VerifyPinIsBalancedWithoutJit) {
  auto r = check_constant_time(programs::verify_pin(), verify_pin_io(), CostModel::defaults());
  EXPECT_EQ(r.verdict, Verdict::secure);
  EXPECT_EQ(r.mi_bits, 0.0);
  EXPECT_EQ(r.samples[0].time, 70.0);
}

TEST(ConstantTime, UnbalancedBranchLeaks) {
  Program p = parse_program(R"(global pin = 5
method verifyPin(x0):
  0: load x0
  1: get pin
  2: binop sub
  3: ifeq 5
  4: goto 7
  5: goto 6
  6: goto 7
  7: push 1
  8: return
entry verifyPin
public x0
)");
  auto r = check_constant_time(p, verify_pin_io(), CostModel::defaults());
  ASSERT_EQ(r.verdict, Verdict::leaky);
  EXPECT_EQ(r.witness->delta(), 10);
  EXPECT_EQ(r.mi_bits, 1.0);
}

TEST(ConstantTime, BalancedDemosAreConstantTime) {
  IoSpec pwd;
  pwd.publics = {{"a", programs::pack8("pzzzzzzz")}};
  pwd.secrets = {{{"pwd", programs::pack8("password")}}, {{"pwd", programs::pack8("qwerty!!")}}};
  EXPECT_EQ(check_constant_time(programs::pwd_eq(), pwd, CostModel::defaults()).verdict, Verdict::secure);
  IoSpec cs;
  cs.publics = {{"guess", 500}, {"n", 4}};
  cs.secrets = {{{"secret", 0}}, {{"secret", 1000}}};
  auto r = check_constant_time(programs::check_secret(), cs, CostModel::defaults());
  EXPECT_EQ(r.verdict, Verdict::secure);
  EXPECT_EQ(r.mi_bits, 0.0);
}

TEST(ConstantTime, SecretMayNotBindPublic) {
  IoSpec io;
  io.secrets = {{{"x0", 1}}};
  EXPECT_THROW(check_constant_time(programs::verify_pin(), io, CostModel::defaults()), Error);
}

TEST(Enumerate, DepthZeroIsOnlyTheEmptySchedule) {
  auto s = enumerate_schedules(programs::verify_pin(), {{"x0", 5}, {"pin", 5}}, 0, CostModel::defaults());
  ASSERT_EQ(s.size(), 1u);
  EXPECT_TRUE(s[0].bindings.empty());
}

TEST(Enumerate, VerifyPinDepthOne) {
  auto s = enumerate_schedules(programs::verify_pin(), {{"x0", 5}, {"pin", 5}}, 1, CostModel::defaults());
  EXPECT_EQ(s.size(), 6u);
}

TEST(Enumerate, StraightLineHasOnlyPlainCompilation) {
  auto s = enumerate_schedules(kStraight, {{"x", 3}}, 2, CostModel::defaults());
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[1].bindings[0].directive, Directive::plain("main"));
}

TEST(Enumerate, PolicyFiltersDirectives) {
  Policy pol;
  pol.prot2["verifyPin"] = {3};
  EnumOptions eo;
  eo.policy = &pol;
  auto s = enumerate_schedules(programs::verify_pin(), {{"x0", 5}, {"pin", 5}}, 2, CostModel::defaults(), eo);
  EXPECT_EQ(s.size(), 2u);
}

TEST(Enumerate, BudgetExceeded) {
  EnumOptions eo;
  eo.max_schedules = 3;
  EXPECT_THROW(enumerate_candidates(programs::verify_pin(), {{"verifyPin", 1}}, 1, eo), BudgetExceeded);
}

TEST(Enumerate, CheckSecretSlotsCoverCallees) {
  auto counts = activation_counts(programs::check_secret(), {{"guess", 0}, {"n", 4}, {"secret", 9}}, CostModel::defaults());
  EXPECT_EQ(counts.at("consume1"), 16u);
  EXPECT_EQ(counts.count("consume2"), 0u);
  auto s = enumerate_candidates(programs::check_secret(), counts, 1);
  bool callee = false;
  for (const auto& x : s)
    for (const auto& b : x.bindings) callee |= b.method == std::optional<std::string>("consume1");
  EXPECT_TRUE(callee);
}

TEST(Adversary, VerifyPinBranchPredictionGivesOne) {
  AttackOptions opt;
  opt.depth = 1;
  opt.attack = AttackClass::bp;
  auto r = adversarial_search(programs::verify_pin(), {{"x0", 5}, {"pin", 5}}, {{"x0", 5}, {"pin", 3}},
                              CostModel::defaults(), opt);
  EXPECT_EQ(r.delta, 1);
  ASSERT_EQ(r.witness.bindings.size(), 1u);
  EXPECT_EQ(r.witness.bindings[0].directive.omega.at(0).kind, OptKind::bp);
}

TEST(Adversary, TrapWidensTheGap) {
  auto r = adversarial_search(programs::verify_pin(), {{"x0", 5}, {"pin", 5}}, {{"x0", 5}, {"pin", 3}},
                              CostModel::defaults());
  EXPECT_EQ(r.delta, 85 - 6);
}

TEST(Adversary, CompliantSearchFindsNothing) {
  Policy pol = infer_policy(programs::verify_pin()).policy;
  AttackOptions opt;
  opt.depth = 2;
  opt.policy = &pol;
  auto r = adversarial_search(programs::verify_pin(), {{"x0", 5}, {"pin", 5}}, {{"x0", 5}, {"pin", 3}},
                              CostModel::defaults(), opt);
  EXPECT_TRUE(r.exhaustive);
  EXPECT_EQ(r.delta, 0);
}

TEST(Adversary, PublicInputsMustAgree) {
  EXPECT_THROW(adversarial_search(programs::verify_pin(), {{"x0", 5}, {"pin", 5}}, {{"x0", 4}, {"pin", 5}},
                                  CostModel::defaults()),
               Error);
}

TEST(Adversary, ClassNames) {
  for (auto a : {AttackClass::any, AttackClass::bp, AttackClass::oc, AttackClass::inline_})
    EXPECT_EQ(attack_class_from(to_string(a)), a);
  EXPECT_THROW(attack_class_from("spectre"), Error);
}

TEST(JitConstantTime, VerifyPinWitnessIsBranchPrediction) {
  auto r = check_jit_constant_time(programs::verify_pin(), verify_pin_io(), nullptr, 1, CostModel::defaults());
  ASSERT_EQ(r.verdict, Verdict::leaky);
  ASSERT_TRUE(r.witness);
  EXPECT_EQ(r.witness->origin, ScheduleOrigin::explicit_);
  EXPECT_EQ(r.witness->delta(), 1);
  auto [a, b] = replay_witness(programs::verify_pin(), *r.witness, CostModel::defaults());
  EXPECT_EQ(a, r.witness->cost_a);
  EXPECT_EQ(b, r.witness->cost_b);
}

TEST(JitConstantTime, VerifyPinSecureUnderInferredPolicy) {
  Policy pol = infer_policy(programs::verify_pin()).policy;
  IoSpec io = verify_pin_io();
  io.secrets.push_back({{"pin", 9}});
  auto r = check_jit_constant_time(programs::verify_pin(), io, &pol, 2, CostModel::defaults());
  EXPECT_EQ(r.verdict, Verdict::secure);
  EXPECT_FALSE(r.witness);
}

TEST(JitConstantTime, PwdEqProfilerWitnessReplays) {
  IoSpec io;
  io.publics = {{"a", programs::pack8("PASSWORD")}};
  io.secrets = {{{"pwd", programs::pack8("password")}}, {{"pwd", programs::pack8("PASSWORD")}}};
  JitCtOptions opt;
  opt.explicit_schedules = false;
  auto r = check_jit_constant_time(programs::pwd_eq(), io, nullptr, 1, CostModel::defaults(), opt);
  ASSERT_EQ(r.verdict, Verdict::leaky);
  EXPECT_EQ(r.witness->origin, ScheduleOrigin::pf);
  auto [a, b] = replay_witness(programs::pwd_eq(), *r.witness, CostModel::defaults());
  EXPECT_EQ(a, r.witness->cost_a);
  EXPECT_EQ(b, r.witness->cost_b);

  Policy pol = infer_policy(programs::pwd_eq()).policy;
  EXPECT_EQ(check_jit_constant_time(programs::pwd_eq(), io, &pol, 2, CostModel::defaults()).verdict, Verdict::secure);
}

TEST(JitConstantTime, BudgetGivesInconclusive) {
  JitCtOptions opt;
  opt.max_runs = 3;
  Policy pol = infer_policy(programs::pwd_eq()).policy;
  IoSpec io;
  io.publics = {{"a", 1}};
  io.secrets = {{{"pwd", 1}}, {{"pwd", 2}}};
  auto r = check_jit_constant_time(programs::pwd_eq(), io, &pol, 2, CostModel::defaults(), opt);
  EXPECT_EQ(r.verdict, Verdict::inconclusive);
  EXPECT_EQ(r.note, "inconclusive(2)");
}

TEST(Demo, VerifyPin) {
  auto none = run_demo("verifyPin", Protect::none);
  EXPECT_EQ(none.report.mi_bits, 1.0);
  EXPECT_EQ(none.report.verdict, Verdict::leaky);
  auto full = run_demo("verifyPin", Protect::full);
  EXPECT_EQ(full.report.mi_bits, 0.0);
  EXPECT_EQ(full.report.verdict, Verdict::secure);
  EXPECT_EQ(full.policy->prot2.at("verifyPin"), std::set<Point>{3});
}

TEST(Demo, PwdEqTrapClassPaysThePenalty) {
  const CostModel cm = CostModel::defaults();
  auto none = run_demo("pwdEq", Protect::none, cm);
  EXPECT_EQ(none.report.mi_bits, 1.0);
  // Class 0 shares the first character with the guess and hits the trap.
  double trap_min = 1e18, plain_max = 0;
  for (const auto& s : none.report.samples) {
    if (s.cls == 0) trap_min = std::min(trap_min, s.time);
    else plain_max = std::max(plain_max, s.time);
  }
  EXPECT_GE(trap_min - plain_max, static_cast<double>(cm.deopt_penalty));
  EXPECT_EQ(run_demo("pwdEq", Protect::full, cm).report.mi_bits, 0.0);
  EXPECT_EQ(run_demo("pwdEq", Protect::light, cm).report.mi_bits, 0.0);
}

TEST(Demo, CheckSecretLightModeGap) {
  auto none = run_demo("checkSecret", Protect::none);
  EXPECT_EQ(none.report.mi_bits, 1.0);
  auto full = run_demo("checkSecret", Protect::full);
  EXPECT_EQ(full.report.mi_bits, 0.0);
  EXPECT_EQ(full.light_assumption, std::optional<bool>(false));
  auto light = run_demo("checkSecret", Protect::light);
  EXPECT_EQ(light.report.mi_bits, 1.0);
  EXPECT_EQ(light.light_assumption, std::optional<bool>(false));
}

TEST(Demo, Names) {
  EXPECT_EQ(demo_names().size(), 3u);
  EXPECT_THROW(demo_setup("bogus"), Error);
  EXPECT_EQ(protect_from("light"), Protect::light);
  EXPECT_THROW(protect_from("half"), Error);
}
