// Apache License, Version 2.0, refer to LICENSE.txt
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "symconj/pattern.hpp"
#include "test_util.hpp"

using namespace symconj;
using symconj::testing::random_tensor;

namespace {

Pattern distribute_pattern() {
  return op_pat(Op::kEinsum,
                {str("formula"), segment("args1"),
                 choice({op_pat({Op::kSubtract}, "op", {val("x"), val("y")}),
                         op_pat({Op::kAdd}, "op", {val("x"), val("y")})}),
                 segment("args2")});
}

Rule distribute_rule() {
  return Rule{"distribute_einsum", distribute_pattern(), [](const Captures& c) {
                std::vector<Expr> lhs = c.segment("args1");
                std::vector<Expr> rhs = lhs;
                lhs.push_back(c.node("x"));
                rhs.push_back(c.node("y"));
                for (const Expr& e : c.segment("args2")) {
                  lhs.push_back(e);
                  rhs.push_back(e);
                }
                Expr l = einsum(c.str("formula"), lhs);
                Expr r = einsum(c.str("formula"), rhs);
                return c.str("op") == "add" ? l + r : l - r;
              }};
}

// --- exhaustive substitution oracle -------------------------------------------

// Assignment of pattern variables: nodes, segments, strings.
struct Subst {
  std::map<std::string, NodeId> vals;
  std::map<std::string, std::vector<NodeId>> segs;
  std::map<std::string, std::string> strs;
};

// Checks that the pattern instantiated under `s` is exactly the subject.
bool instance_of(const Pattern& p, const Subst& s, const TermGraph& g, NodeId id);

bool list_instance(const std::vector<Pattern>& items, const Subst& s, const TermGraph& g,
                   const Node& n) {
  // Element list: the attribute (if any), then the arguments.
  struct El {
    bool attr;
    NodeId id;
  };
  std::vector<El> elems;
  if (has_attr(n.op)) elems.push_back({true, {}});
  for (NodeId a : n.args) elems.push_back({false, a});
  std::size_t pos = 0;
  for (const auto& it : items) {
    const auto& pn = it.node();
    if (pn.kind == detail::PatternKind::kSegment) {
      for (NodeId a : s.segs.at(pn.name)) {
        if (pos >= elems.size() || elems[pos].attr || elems[pos].id != a) return false;
        ++pos;
      }
    } else if (pn.kind == detail::PatternKind::kStr) {
      if (pos >= elems.size() || !elems[pos].attr || s.strs.at(pn.name) != attr_string(n)) return false;
      ++pos;
    } else {
      if (pos >= elems.size() || elems[pos].attr || !instance_of(it, s, g, elems[pos].id)) return false;
      ++pos;
    }
  }
  return pos == elems.size();
}

bool instance_of(const Pattern& p, const Subst& s, const TermGraph& g, NodeId id) {
  const auto& pn = p.node();
  switch (pn.kind) {
    case detail::PatternKind::kVal:
      return s.vals.at(pn.name) == id;
    case detail::PatternKind::kOp: {
      const Node& n = g.node(id);
      if (n.kind != NodeKind::kPrim) return false;
      if (std::find(pn.ops.begin(), pn.ops.end(), n.op) == pn.ops.end()) return false;
      if (!pn.name.empty() && s.strs.at(pn.name) != op_name(n.op)) return false;
      return list_instance(pn.items, s, g, n);
    }
    default:
      ADD_FAILURE() << "oracle does not support this combinator";
      return false;
  }
}

void collect_vars(const Pattern& p, std::set<std::string>& vals, std::set<std::string>& segs,
                  std::set<std::string>& strs) {
  const auto& pn = p.node();
  if (pn.kind == detail::PatternKind::kVal) vals.insert(pn.name);
  if (pn.kind == detail::PatternKind::kSegment) segs.insert(pn.name);
  if (pn.kind == detail::PatternKind::kStr) strs.insert(pn.name);
  if (pn.kind == detail::PatternKind::kOp && !pn.name.empty()) strs.insert(pn.name);
  for (const auto& it : pn.items) collect_vars(it, vals, segs, strs);
}

std::size_t oracle_count(const Pattern& p, const TermGraph& g, NodeId root) {
  std::set<std::string> vals, segs, strs;
  collect_vars(p, vals, segs, strs);
  const auto live = g.reachable();
  std::set<std::vector<NodeId>> slices;
  std::set<std::string> strings;
  for (NodeId id : live) {
    const Node& n = g.node(id);
    for (std::size_t i = 0; i <= n.args.size(); ++i) {
      for (std::size_t j = i; j <= n.args.size(); ++j) {
        slices.emplace(n.args.begin() + static_cast<std::ptrdiff_t>(i),
                       n.args.begin() + static_cast<std::ptrdiff_t>(j));
      }
    }
    if (n.kind == NodeKind::kPrim) {
      strings.insert(std::string(op_name(n.op)));
      if (has_attr(n.op)) strings.insert(attr_string(n));
    }
  }
  std::vector<std::string> val_names(vals.begin(), vals.end());
  std::vector<std::string> seg_names(segs.begin(), segs.end());
  std::vector<std::string> str_names(strs.begin(), strs.end());
  std::vector<std::vector<NodeId>> slice_list(slices.begin(), slices.end());
  std::vector<std::string> string_list(strings.begin(), strings.end());

  std::size_t count = 0;
  Subst s;
  std::function<void(std::size_t)> rec = [&](std::size_t depth) {
    const std::size_t nv = val_names.size(), ns = seg_names.size();
    if (depth < nv) {
      for (NodeId id : live) {
        s.vals[val_names[depth]] = id;
        rec(depth + 1);
      }
      return;
    }
    if (depth < nv + ns) {
      for (const auto& sl : slice_list) {
        s.segs[seg_names[depth - nv]] = sl;
        rec(depth + 1);
      }
      return;
    }
    if (depth < nv + ns + str_names.size()) {
      for (const auto& st : string_list) {
        s.strs[str_names[depth - nv - ns]] = st;
        rec(depth + 1);
      }
      return;
    }
    if (instance_of(p, s, g, root)) ++count;
  };
  rec(0);
  return count;
}

TermGraph random_small_graph(std::mt19937_64& rng) {
  GraphBuilder b(true);
  std::vector<Expr> pool{b.input("x", {2}), b.input("y", {2})};
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  const std::vector<std::string> formulas{"a,a->a", "b,b->b", "a,a,a->a", "a->a", "a,a,a,a->a"};
  while (b.size() < 11) {
    Expr a = pool[pick(pool.size())];
    Expr c = pool[pick(pool.size())];
    switch (pick(6)) {
      case 0: pool.push_back(a + c); break;
      case 1: pool.push_back(a * c); break;
      case 2: pool.push_back(log(a)); break;
      case 3: pool.push_back(exp(a)); break;
      default: {
        const std::string& f = formulas[pick(formulas.size())];
        const auto arity = static_cast<std::size_t>(std::count(f.begin(), f.end(), ',') + 1);
        std::vector<Expr> ops;
        for (std::size_t i = 0; i < arity; ++i) ops.push_back(pool[pick(pool.size())]);
        pool.push_back(einsum(f, ops));
      }
    }
  }
  return b.finish(pool.back());
}

}  // namespace

TEST(Match, AddBindsBothArguments) {
  GraphBuilder b;
  Expr a = b.input("a", {2}), c = b.input("b", {2});
  TermGraph g = b.finish(a + c);
  auto m = match_first(op_pat(Op::kAdd, {val("x"), val("y")}), g, g.output());
  ASSERT_TRUE(m);
  EXPECT_EQ(bound_node(*m, "x"), a.id());
  EXPECT_EQ(bound_node(*m, "y"), c.id());
  EXPECT_EQ(m->size(), 2u);
}

TEST(Match, DistributePatternBindings) {
  GraphBuilder b;
  Expr A = b.input("A", {2, 3}), B = b.input("B", {3, 4}), C = b.input("C", {3, 4});
  TermGraph g = b.finish(einsum("ij,jk->ik", {A, B + C}));
  auto m = match_first(distribute_pattern(), g, g.output());
  ASSERT_TRUE(m);
  EXPECT_EQ(bound_string(*m, "formula"), "ij,jk->ik");
  EXPECT_EQ(bound_segment(*m, "args1"), std::vector<NodeId>{A.id()});
  EXPECT_EQ(bound_string(*m, "op"), "add");
  EXPECT_EQ(bound_node(*m, "x"), B.id());
  EXPECT_EQ(bound_node(*m, "y"), C.id());
  EXPECT_TRUE(bound_segment(*m, "args2").empty());
  EXPECT_EQ(m->size(), 6u);
}

TEST(Match, NonlinearPatterns) {
  GraphBuilder b;
  Expr a = b.input("a", {}), c = b.input("b", {});
  Expr aa = a * a, ab = a * c;
  TermGraph g = b.finish(aa + ab);
  Pattern p = op_pat(Op::kMultiply, {val("x"), val("x")});
  EXPECT_TRUE(match_first(p, g, aa.id()));
  EXPECT_FALSE(match_first(p, g, ab.id()));
}

TEST(Match, SegmentSplitsEnumerateEachPosition) {
  GraphBuilder b;
  Expr x = b.input("x", {2}), y = b.input("y", {2}), z = b.input("z", {2});
  TermGraph g = b.finish(einsum("a,a,a->", {x, y, z}));
  auto all = match_all(op_pat(Op::kEinsum, {str("f"), segment("pre"), val("v"), segment("post")}),
                       g, g.output());
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(bound_node(all[0], "v"), x.id());
  EXPECT_EQ(bound_node(all[1], "v"), y.id());
  EXPECT_EQ(bound_node(all[2], "v"), z.id());
  // Shortest prefix first.
  EXPECT_TRUE(bound_segment(all[0], "pre").empty());
  auto first = match_first(op_pat(Op::kEinsum, {str("f"), segment("pre"), val("v"), segment("post")}),
                           g, g.output());
  EXPECT_EQ(*first, all[0]);
}

TEST(Match, ChoiceInListedOrder) {
  GraphBuilder b;
  Expr x = b.input("x", {}), y = b.input("y", {});
  TermGraph g = b.finish(x + y);
  Pattern p = choice({op_pat(Op::kAdd, {val("p"), val("q")}), op_pat(Op::kAdd, {val("q"), val("p")})});
  auto all = match_all(p, g, g.output());
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(bound_node(all[0], "p"), x.id());
  EXPECT_EQ(bound_node(all[1], "p"), y.id());
}

TEST(Match, BindConstAndLiteralStrings) {
  GraphBuilder b;
  Expr x = b.input("x", {3});
  Expr lx = log(x);
  TermGraph g = b.finish(einsum("a,->", {lx, b.constant(2.0)}));
  Pattern p = op_pat(Op::kEinsum, {str_eq("a,->"), bind("inner", op_pat(Op::kLog, {val("v")})),
                                   const_pat([](const Tensor& t) { return t.item() > 0; }, "c")});
  auto m = match_first(p, g, g.output());
  ASSERT_TRUE(m);
  EXPECT_EQ(bound_node(*m, "inner"), lx.id());
  EXPECT_EQ(bound_node(*m, "v"), x.id());
  EXPECT_FALSE(match_first(op_pat(Op::kEinsum, {str_eq("b,->"), val(), val()}), g, g.output()));
  EXPECT_FALSE(match_first(op_pat(Op::kEinsum, {str("f"), val(), const_pat([](const Tensor& t) {
                                                   return t.item() < 0;
                                                 })}),
                           g, g.output()));
}

TEST(Match, SegmentOutsideListIsMalformed) {
  GraphBuilder b;
  TermGraph g = b.finish(b.input("x", {}));
  EXPECT_THROW(match_first(segment("s"), g, g.output()), PatternError);
  EXPECT_THROW(match_first(choice({segment("s")}), g, g.output()), PatternError);
}

TEST(Match, Deterministic) {
  std::mt19937_64 rng(7);
  TermGraph g = random_small_graph(rng);
  Pattern p = op_pat(Op::kEinsum, {str("f"), segment("a"), val("x"), segment("b")});
  for (NodeId id : g.reachable()) EXPECT_EQ(match_all(p, g, id), match_all(p, g, id));
}

TEST(Match, AgreesWithExhaustiveSubstitution) {
  std::mt19937_64 rng(101);
  const std::vector<Pattern> patterns{
      op_pat(Op::kEinsum, {str("f"), segment("a"), val("x"), segment("b")}),
      op_pat({Op::kAdd, Op::kMultiply}, "op", {val("x"), val("x")}),
      op_pat({Op::kAdd, Op::kMultiply}, "op", {val("x"), val("y")}),
      op_pat(Op::kAdd, {val("x"), op_pat({Op::kLog, Op::kExp}, "g", {val("y")})}),
      op_pat(Op::kEinsum, {str("f"), segment("a"), op_pat({Op::kLog, Op::kExp}, "g", {val("x")}),
                           val("y")}),
      op_pat(Op::kEinsum, {str("f"), val("x"), segment("a"), val("x")}),
  };
  std::size_t total = 0;
  for (int trial = 0; trial < 25; ++trial) {
    TermGraph g = random_small_graph(rng);
    ASSERT_LE(g.reachable().size(), 12u);
    for (const auto& p : patterns) {
      for (NodeId id : g.reachable()) {
        const std::size_t got = match_all(p, g, id).size();
        EXPECT_EQ(got, oracle_count(p, g, id));
        total += got;
      }
    }
  }
  EXPECT_GT(total, 50u);
}

TEST(Rule, DistributeEinsumOverAdd) {
  GraphBuilder b;
  Expr a = b.input("a", {3}), bb = b.input("b", {3}), c = b.input("c", {3});
  TermGraph g = b.finish(einsum("i,i->", {a, bb + c}));
  auto [h, applied] = apply_rule(distribute_rule(), g);
  ASSERT_TRUE(applied);
  const Node& out = h.node(h.output());
  ASSERT_TRUE(out.is_prim(Op::kAdd));
  const Node& l = h.node(out.args[0]);
  const Node& r = h.node(out.args[1]);
  ASSERT_TRUE(l.is_prim(Op::kEinsum));
  ASSERT_TRUE(r.is_prim(Op::kEinsum));
  EXPECT_EQ(l.attrs.formula, "i,i->");
  EXPECT_EQ(h.node(l.args[0]).name, "a");
  EXPECT_EQ(h.node(l.args[1]).name, "b");
  EXPECT_EQ(h.node(r.args[1]).name, "c");
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    Env env{{"a", random_tensor({3}, rng)}, {"b", random_tensor({3}, rng)}, {"c", random_tensor({3}, rng)}};
    EXPECT_NEAR(evaluate(h, env).item(), evaluate(g, env).item(), 1e-12);
  }
}

TEST(Rule, DistributeEinsumOverSubtractInsideLargerGraph) {
  GraphBuilder b;
  Expr a = b.input("a", {2, 3}), x = b.input("x", {3}), y = b.input("y", {3});
  TermGraph g = b.finish(log1p(square(sum(einsum("ij,j->i", {a, x - y})))));
  auto [h, applied] = apply_rule(distribute_rule(), g);
  ASSERT_TRUE(applied);
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    Env env{{"a", random_tensor({2, 3}, rng)}, {"x", random_tensor({3}, rng)}, {"y", random_tensor({3}, rng)}};
    EXPECT_NEAR(evaluate(h, env).item(), evaluate(g, env).item(), 1e-12);
  }
  // The full sum is itself an einsum over the new difference, so it fires once more.
  auto [h2, again] = apply_rule(distribute_rule(), h);
  EXPECT_TRUE(again);
  EXPECT_FALSE(apply_rule(distribute_rule(), h2).second);
}

TEST(Rule, NoMatchLeavesGraphUnchanged) {
  GraphBuilder b;
  Expr x = b.input("x", {3});
  TermGraph g = b.finish(sum(log(x)));
  auto [h, applied] = apply_rule(distribute_rule(), g);
  EXPECT_FALSE(applied);
  EXPECT_EQ(h, g);
}

TEST(Rule, ShapeViolationNamesTheRule) {
  GraphBuilder b;
  Expr x = b.input("x", {3});
  TermGraph g = b.finish(sum(log(x)));
  Rule bad{"bad_shape", op_pat(Op::kLog, {val("v")}),
           [](const Captures& c) { return sum(c.node("v")); }};
  try {
    apply_rule(bad, g);
    FAIL() << "expected a rule error";
  } catch (const RuleError& e) {
    EXPECT_NE(std::string(e.what()).find("bad_shape"), std::string::npos);
  }
}

TEST(Rule, ConditionFiltersMatches) {
  GraphBuilder b;
  Expr x = b.input("x", {}), y = b.input("y", {});
  TermGraph g = b.finish(log(x) + log(y));
  Rule r{"log_of_y_only", op_pat(Op::kLog, {val("v")}), [](const Captures& c) { return c.node("v"); },
         [](const Bindings& bs, const TermGraph& gr) { return gr.node(bound_node(bs, "v")).name == "y"; }};
  auto [h, applied] = apply_rule(r, g);
  ASSERT_TRUE(applied);
  EXPECT_NEAR(evaluate(h, {{"x", Tensor(2.0)}, {"y", Tensor(5.0)}}).item(), std::log(2.0) + 5.0, 1e-15);
}
