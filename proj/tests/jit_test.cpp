#include <gtest/gtest.h>

#include "jitleak/interpreter.hpp"
#include "jitleak/jit.hpp"
#include "jitleak/programs.hpp"

using namespace jitleak;

namespace {

std::vector<std::string> listing(const Method& m) {
  std::vector<std::string> out;
  for (const auto& ins : m.code) out.push_back(format_instruction(ins));
  return out;
}

const std::vector<std::string> kPrefix{"load x0", "get pin", "binop sub"};

std::vector<std::string> with_prefix(std::vector<std::string> rest) {
  std::vector<std::string> out = kPrefix;
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

Program inline_pair() {
  return parse_program(R"(method f(a):
  0: load a
  1: push 1
  2: return
method main(x):
  0: load x
  1: invoke f
  2: return
entry main
)");
}

Program nested_calls() {
  return parse_program(R"(global k = 3
method g(u, v):
  0: load v
  1: load u
  2: binop sub
  3: return
method f(a):
  0: get k
  1: load a
  2: invoke g
  3: push 2
  4: binop mul
  5: return
method main(x):
  0: load x
  1: invoke f
  2: load x
  3: invoke f
  4: binop add
  5: return
entry main
public x
)");
}

}  // namespace

TEST(Transform, BpElseVerifyPin) {
  Program p = programs::verify_pin();
  Method t = transform_bp(p.methods[0], 3, Pref::else_b);
  EXPECT_EQ(listing(t), with_prefix({"ifeq 6", "push 0", "return", "push 1", "goto 5", "goto 5"}));
  ASSERT_EQ(t.optimized.size(), 1u);
  EXPECT_EQ(t.optimized[0].pc, std::optional<Point>(3));
  // The synthetic goto has no bytecode origin.
  EXPECT_FALSE(t.source_of(8).pc);
  EXPECT_EQ(t.source_of(5).pc, std::optional<Point>(8));
  EXPECT_EQ(t.source_of(6).pc, std::optional<Point>(6));
}

TEST(Transform, BpIfVerifyPin) {
  Program p = programs::verify_pin();
  Method t = transform_bp(p.methods[0], 3, Pref::if_b);
  EXPECT_EQ(listing(t), with_prefix({"ifneq 7", "push 1", "goto 6", "return", "push 0", "goto 6"}));
  EXPECT_TRUE(t.source_of(3).flipped);
}

TEST(Transform, OcElseVerifyPin) {
  Program p = programs::verify_pin();
  Method t = transform_oc(p.methods[0], 3, Pref::else_b);
  EXPECT_EQ(listing(t), with_prefix({"ifeq 6", "push 0", "return", "deopt verifyPin@6"}));
}

TEST(Transform, OcIfVerifyPin) {
  Program p = programs::verify_pin();
  Method t = transform_oc(p.methods[0], 3, Pref::if_b);
  EXPECT_EQ(listing(t), with_prefix({"ifneq 7", "push 1", "goto 6", "return", "deopt verifyPin@4"}));
}

TEST(Transform, PointMaps) {
  Program p = programs::verify_pin();
  auto bp = transform_bp_mapped(p.methods[0], 3, Pref::else_b);
  EXPECT_EQ(bp.map[4], std::optional<Point>(4));
  EXPECT_EQ(bp.map[6], std::optional<Point>(6));
  EXPECT_EQ(bp.map[8], std::optional<Point>(5));
  auto oc = transform_oc_mapped(p.methods[0], 3, Pref::else_b);
  EXPECT_FALSE(oc.map[6]);
  EXPECT_FALSE(oc.map[7]);
  EXPECT_EQ(oc.map[8], std::optional<Point>(5));
}

TEST(Transform, RejectsNonBranches) {
  Program p = programs::verify_pin();
  EXPECT_THROW(transform_bp(p.methods[0], 4, Pref::else_b), TransformError);
  EXPECT_THROW(transform_oc(p.methods[0], 99, Pref::if_b), TransformError);
  // The loop exit of pwdEq is closed by a backward goto.
  Program pw = programs::pwd_eq();
  EXPECT_THROW(transform_bp(pw.methods[0], 13, Pref::else_b), TransformError);
  EXPECT_NO_THROW(transform_bp(pw.methods[0], programs::kPwdEqCompare, Pref::if_b));
}

TEST(Transform, OcRefusesToPruneInlinedArm) {
  Program p = parse_program(R"(method f(a):
  0: load a
  1: ifeq 4
  2: push 0
  3: goto 5
  4: push 1
  5: return
method main(x):
  0: load x
  1: invoke f
  2: return
entry main
)");
  Method in = inline_tree(p, InlineTree{"main", {{1, InlineTree{"f", {}}}}});
  Point branch = 0;
  for (Point k = 0; k < in.size(); ++k)
    if (in.code[k].is_conditional()) branch = k;
  EXPECT_THROW(transform_oc(in, branch, Pref::if_b), TransformError);
  EXPECT_THROW(transform_oc(in, branch, Pref::else_b), TransformError);
  EXPECT_NO_THROW(transform_bp(in, branch, Pref::else_b));
}

TEST(Inline, GrowthAndFreshLocals) {
  Program p = inline_pair();
  Method in = inline_tree(p, InlineTree{"main", {{1, InlineTree{"f", {}}}}});
  EXPECT_EQ(in.size(), p.method("main").size() + 5);
  EXPECT_EQ(listing(in), (std::vector<std::string>{"load x", "store f$1.a", "load f$1.a", "push 1", "swap", "pop",
                                                   "goto 7", "return"}));
  EXPECT_FALSE(in.source_of(1).inlined);
  EXPECT_EQ(in.source_of(1).method, "main");
  EXPECT_TRUE(in.source_of(2).inlined);
  EXPECT_EQ(in.source_of(2).method, "f");
  EXPECT_TRUE(in.source_of(6).inlined);
}

TEST(Inline, DepthTwoMatchesBytecode) {
  Program p = nested_calls();
  InlineTree t{"main", {{1, InlineTree{"f", {{2, InlineTree{"g", {}}}}}}, {3, InlineTree{"f", {}}}}};
  EXPECT_EQ(t.depth(), 2u);
  Program q = p;
  q.methods[2] = inline_tree(p, t);
  EXPECT_TRUE(validate(q).empty());
  for (Value x : {-4, 0, 1, 17}) {
    auto a = run(p, {{"x", x}}, CostModel::defaults());
    auto b = run(q, {{"x", x}}, CostModel::defaults());
    EXPECT_EQ(a.return_value, b.return_value) << x;
    EXPECT_EQ(a.final_heap, b.final_heap);
  }
}

TEST(Inline, BadSites) {
  Program p = nested_calls();
  EXPECT_THROW(inline_tree(p, InlineTree{"main", {{0, InlineTree{"f", {}}}}}), InlineError);
  EXPECT_THROW(inline_tree(p, InlineTree{"main", {{1, InlineTree{"g", {}}}}}), InlineError);
  EXPECT_THROW(inline_tree(p, InlineTree{"main", {{1, InlineTree{"f", {}}}, {1, InlineTree{"f", {}}}}}),
               InlineError);
}

TEST(Directive, ApplyBumpsVersion) {
  Program p = programs::verify_pin();
  CodeHeap ch = code_heap_of(p);
  Directive d = Directive::plain("verifyPin");
  auto v1 = apply_directive(ch, p, "verifyPin", d, 3);
  EXPECT_EQ(v1.at("verifyPin")->version, 1u);
  EXPECT_EQ(v1.at("verifyPin")->kind, CodeKind::native);
  EXPECT_EQ(ch.at("verifyPin")->version, 0u);
  auto v2 = apply_directive(v1, p, "verifyPin", d, 3);
  auto v3 = apply_directive(v2, p, "verifyPin", d, 3);
  EXPECT_EQ(v3.at("verifyPin")->version, 3u);
  EXPECT_THROW(apply_directive(v3, p, "verifyPin", d, 3), InvalidDirective);
  EXPECT_EQ(apply_directive(v3, p, "verifyPin", Directive::none(), 3), v3);
}

TEST(Directive, OmegaCollisionAndWrongTarget) {
  Program p = programs::verify_pin();
  CodeHeap ch = code_heap_of(p);
  Directive twice =
      Directive::make({"verifyPin", {}}, {{OptKind::bp, 3, Pref::else_b}, {OptKind::oc, 3, Pref::if_b}});
  EXPECT_THROW(apply_directive(ch, p, "verifyPin", twice, 3), InvalidDirective);
  EXPECT_THROW(apply_directive(ch, p, "other", Directive::plain("verifyPin"), 3), InvalidDirective);
}

TEST(Directive, OmegaPointsFollowEarlierTransforms) {
  // Two sequential if/else blocks; pruning the first shifts the second.
  Program p = parse_program(R"(method m(a, b):
  0: load a
  1: ifeq 4
  2: push 0
  3: goto 5
  4: push 1
  5: pop
  6: load b
  7: ifeq 10
  8: push 0
  9: goto 11
  10: push 1
  11: return
entry m
)");
  Directive d = Directive::make({"m", {}}, {{OptKind::oc, 1, Pref::else_b}, {OptKind::bp, 7, Pref::if_b}});
  Method c = compile_directive(p, d);
  ASSERT_EQ(c.optimized.size(), 2u);
  EXPECT_EQ(c.optimized[1].pc, std::optional<Point>(7));
  for (Value b : {0, 1}) {
    auto base = run(p, {{"a", 5}, {"b", b}}, CostModel::defaults());
    CodeHeap ch = code_heap_of(p);
    ch["m"] = std::make_shared<const Method>(c);
    NoDirectives none;
    auto got = run(p, {{"a", 5}, {"b", b}}, none, CostModel::defaults(), {}, &ch);
    EXPECT_EQ(base.return_value, got.return_value);
  }
}

TEST(Directive, LiteralRoundTrip) {
  const std::string text = "compile main { inline: [1:f[2:g], 3:f]; opt: [bp@3:else, oc@9:if] }";
  Directive d = parse_directive(text);
  EXPECT_EQ(d.target(), "main");
  EXPECT_EQ(d.tree.depth(), 2u);
  ASSERT_EQ(d.omega.size(), 2u);
  EXPECT_EQ(d.omega[1].kind, OptKind::oc);
  EXPECT_EQ(d.omega[1].pref, Pref::if_b);
  EXPECT_EQ(format_directive(d), text);
  EXPECT_EQ(parse_directive(format_directive(d)), d);
  EXPECT_TRUE(parse_directive("none").empty());
  EXPECT_EQ(format_directive(Directive::none()), "none");
  EXPECT_EQ(parse_directive("compile f { inline: []; opt: [] }"), Directive::plain("f"));
}

TEST(Directive, LiteralErrors) {
  EXPECT_THROW(parse_directive("compile f { inline: [x:g]; opt: [] }"), ParseError);
  EXPECT_THROW(parse_directive("compile f { inline: []; opt: [zz@1:if] }"), ParseError);
  EXPECT_THROW(parse_directive("compile f { inline: []; opt: [bp@1:maybe] }"), ParseError);
  EXPECT_THROW(parse_directive("compile f { inline: []; opt: [] } extra"), ParseError);
  EXPECT_THROW(parse_directive("compile { inline: []; opt: [] }"), ParseError);
}
