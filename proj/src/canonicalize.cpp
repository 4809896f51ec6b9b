// Apache License, Version 2.0, refer to LICENSE.txt
#include "symconj/canonicalize.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

namespace symconj {
namespace {

const std::vector<Op> kElementwise{Op::kLog,        Op::kLog1p,    Op::kExp,      Op::kSqrt,
                                   Op::kReciprocal, Op::kLogistic, Op::kLogGamma, Op::kDigamma};

bool is_nonlinear(const Node& n) {
  if (n.kind != NodeKind::kPrim) return false;
  switch (n.op) {
    case Op::kEinsum:
    case Op::kAdd:
    case Op::kSubtract:
    case Op::kMultiply:
    case Op::kDivide:
    case Op::kNegate:
    case Op::kSquare:
    case Op::kSumAxis:
    case Op::kBroadcastTo:
      return false;
    default:
      return true;
  }
}

EinsumSpec spec_of(const TermGraph& g, NodeId id) { return EinsumSpec::parse(g.node(id).attrs.formula); }

std::string join_formula(const std::vector<std::string>& subs, const std::string& out) {
  std::string f;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (i) f += ',';
    f += subs[i];
  }
  return f + "->" + out;
}

Expr apply_named(const std::string& op, Expr x) {
  return x.builder().prim(*op_from_name(op), {x});
}

NodePredicate is_op(Op op) {
  return [op](const TermGraph& g, NodeId id) { return g.node(id).is_prim(op); };
}

bool positive_constant(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v > 0; });
}

// Conservative check that a node takes only nonnegative values.
bool nonnegative(const TermGraph& g, NodeId id, int depth = 0) {
  const Node& n = g.node(id);
  if (depth > 16) return false;
  switch (n.kind) {
    case NodeKind::kConstant:
      return positive_constant(*n.value);
    case NodeKind::kInput:
      return n.support && n.support->kind != SupportKind::kReal && n.support->kind != SupportKind::kInteger;
    case NodeKind::kPrim:
      break;
  }
  switch (n.op) {
    case Op::kExp:
    case Op::kSqrt:
    case Op::kLogistic:
    case Op::kOneHot:
      return true;
    case Op::kReciprocal:
      return nonnegative(g, n.args[0], depth + 1);
    case Op::kEinsum:
    case Op::kAdd:
      return std::all_of(n.args.begin(), n.args.end(),
                         [&](NodeId a) { return nonnegative(g, a, depth + 1); });
    default:
      return false;
  }
}

// --- individual rules --------------------------------------------------------

Rule inverse_pair(std::string name, Op outer, Op inner) {
  return Rule{std::move(name), op_pat(outer, {op_pat(inner, {val("x")})}),
              [](const Captures& c) { return c.node("x"); }};
}

// f(einsum(one_hot(z), v)) with the category index summed and nothing else
// summed: exactly one category is selected, so f moves onto v.
Rule gather_push() {
  Pattern p = op_pat(kElementwise, "f",
                     {op_pat(Op::kEinsum, {str("formula"), val("a"), val("b")})});
  Condition cond = [](const Bindings& b, const TermGraph& g) {
    const std::string& formula = bound_string(b, "formula");
    const auto spec = EinsumSpec::parse(formula);
    const bool a_hot = g.node(bound_node(b, "a")).is_prim(Op::kOneHot);
    const bool b_hot = g.node(bound_node(b, "b")).is_prim(Op::kOneHot);
    if (a_hot == b_hot) return false;
    const std::string& hot = spec.inputs[a_hot ? 0 : 1];
    const std::string& other = spec.inputs[a_hot ? 1 : 0];
    if (hot.empty()) return false;
    const char cat = hot.back();
    if (spec.output.find(cat) != std::string::npos) return false;
    if (std::count(hot.begin(), hot.end(), cat) != 1 || std::count(other.begin(), other.end(), cat) != 1) {
      return false;
    }
    for (const auto& s : spec.inputs) {
      for (char ch : s) {
        if (ch != cat && spec.output.find(ch) == std::string::npos) return false;
      }
    }
    return true;
  };
  Rewriter rw = [](const Captures& c) {
    Expr a = c.node("a"), b = c.node("b");
    // The one_hot operand keeps its place; f applies to the other.
    const bool a_hot = c.builder().node(a.id()).is_prim(Op::kOneHot);
    const std::string& f = c.str("f");
    return a_hot ? einsum(c.str("formula"), {a, apply_named(f, b)})
                 : einsum(c.str("formula"), {apply_named(f, a), b});
  };
  return Rule{"gather_push", std::move(p), std::move(rw), std::move(cond)};
}

Rule log_of_reciprocal() {
  return Rule{"log_reciprocal", op_pat(Op::kLog, {op_pat(Op::kReciprocal, {val("x")})}),
              [](const Captures& c) { return -log(c.node("x")); }};
}

Rule log_of_sqrt() {
  return Rule{"log_sqrt", op_pat(Op::kLog, {op_pat(Op::kSqrt, {val("x")})}),
              [](const Captures& c) { return 0.5 * log(c.node("x")); }};
}

Rule log_of_power() {
  auto fractional = [](const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v != std::round(v); });
  };
  return Rule{"log_power", op_pat(Op::kLog, {op_pat(Op::kPower, {val("x"), const_pat(fractional, "p")})}),
              [](const Captures& c) { return c.node("p") * log(c.node("x")); }};
}

Rule log_one_plus() {
  auto ones = [](const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 1.0; });
  };
  Pattern p = op_pat(Op::kLog, {op_pat(Op::kAdd, {choice({const_pat(ones, "one"), val("x")}),
                                                  choice({const_pat(ones, "one"), val("x")})})});
  Condition cond = [](const Bindings& b, const TermGraph& g) {
    return b.contains("one") && b.contains("x") && g.shape(bound_node(b, "one")) == g.shape(bound_node(b, "x"));
  };
  return Rule{"log1p", std::move(p), [](const Captures& c) { return log1p(c.node("x")); }, std::move(cond)};
}

// f(einsum) of an elementwise product (no summed indices) for f in
// {log, reciprocal, sqrt}.
Rule product_rule(std::string name, Op f, bool needs_nonnegative) {
  Pattern p = op_pat(f, {op_pat(Op::kEinsum, {str("formula"), segment("ops")})});
  Condition cond = [needs_nonnegative](const Bindings& b, const TermGraph& g) {
    const auto spec = EinsumSpec::parse(bound_string(b, "formula"));
    const auto& ops = bound_segment(b, "ops");
    if (ops.size() < 2) return false;
    for (const auto& s : spec.inputs) {
      for (char ch : s) {
        if (spec.output.find(ch) == std::string::npos) return false;
      }
    }
    if (needs_nonnegative) {
      for (NodeId id : ops) {
        if (!nonnegative(g, id)) return false;
      }
    }
    return true;
  };
  Rewriter rw = [f](const Captures& c) {
    const auto spec = EinsumSpec::parse(c.str("formula"));
    const auto& ops = c.segment("ops");
    GraphBuilder& b = c.builder();
    if (f != Op::kLog) {
      std::vector<Expr> mapped;
      for (const Expr& e : ops) mapped.push_back(b.prim(f, {e}));
      return einsum(c.str("formula"), mapped);
    }
    std::map<char, std::int64_t> extent;
    for (std::size_t i = 0; i < ops.size(); ++i) {
      const Shape s = ops[i].shape();
      for (std::size_t k = 0; k < s.size(); ++k) extent[spec.inputs[i][k]] = s[k];
    }
    std::optional<Expr> total;
    for (std::size_t i = 0; i < ops.size(); ++i) {
      std::vector<std::string> subs{spec.inputs[i]};
      std::vector<Expr> operands{log(ops[i])};
      for (char ch : spec.output) {
        if (spec.inputs[i].find(ch) != std::string::npos) continue;
        subs.emplace_back(1, ch);
        operands.push_back(b.constant(Tensor::ones({extent.at(ch)})));
      }
      Expr term = einsum(join_formula(subs, spec.output), operands);
      total = total ? *total + term : term;
    }
    return *total;
  };
  return Rule{std::move(name), std::move(p), std::move(rw), std::move(cond)};
}

// Two operands of the same einsum, at positions pre.size() and
// pre.size() + 1 + mid.size().
Pattern pair_pattern(const std::string& first, const std::string& second, NodePredicate pred = {}) {
  return op_pat(Op::kEinsum, {str("formula"), segment("pre"), val(first, pred), segment("mid"),
                              val(second, pred), segment("post")});
}

std::pair<std::size_t, std::size_t> pair_positions(const Bindings& b) {
  const std::size_t i = bound_segment(b, "pre").size();
  return {i, i + 1 + bound_segment(b, "mid").size()};
}

// Rebuilds the einsum from captures with operand j removed and operand i
// replaced (when `replacement` is given).
Expr rebuild_pair(const Captures& c, std::vector<std::string> subs, std::string out, std::size_t i,
                  std::size_t j, std::optional<Expr> replacement) {
  (void)i;
  std::vector<Expr> ops;
  for (const Expr& e : c.segment("pre")) ops.push_back(e);
  ops.push_back(replacement ? *replacement : c.node("p"));
  for (const Expr& e : c.segment("mid")) ops.push_back(e);
  ops.push_back(c.node("q"));
  for (const Expr& e : c.segment("post")) ops.push_back(e);
  ops.erase(ops.begin() + static_cast<std::ptrdiff_t>(j));
  subs.erase(subs.begin() + static_cast<std::ptrdiff_t>(j));
  return einsum(join_formula(subs, out), ops);
}

// one_hot(z) twice: entries are 0/1 with one hot category, so
// O[..,k] O[..,j] = O[..,k] delta(k, j).
Rule one_hot_merge() {
  Condition cond = [](const Bindings& b, const TermGraph& g) {
    if (bound_node(b, "p") != bound_node(b, "q")) return false;
    const auto spec = EinsumSpec::parse(bound_string(b, "formula"));
    auto [i, j] = pair_positions(b);
    const std::string& s1 = spec.inputs[i];
    const std::string& s2 = spec.inputs[j];
    (void)g;
    if (s1.empty() || s1.size() != s2.size()) return false;
    if (s1.substr(0, s1.size() - 1) != s2.substr(0, s2.size() - 1)) return false;
    const char k = s1.back(), l = s2.back();
    if (k == l) return true;
    const bool k_out = spec.output.find(k) != std::string::npos;
    const bool l_out = spec.output.find(l) != std::string::npos;
    return !(k_out && l_out);
  };
  Rewriter rw = [](const Captures& c) {
    const auto spec = EinsumSpec::parse(c.str("formula"));
    const std::size_t i = c.segment("pre").size();
    const std::size_t j = i + 1 + c.segment("mid").size();
    char keep = spec.inputs[i].back(), drop = spec.inputs[j].back();
    if (spec.output.find(drop) != std::string::npos) std::swap(keep, drop);
    std::vector<std::string> subs = spec.inputs;
    std::string out = spec.output;
    for (auto& s : subs) std::replace(s.begin(), s.end(), drop, keep);
    std::replace(out.begin(), out.end(), drop, keep);
    return rebuild_pair(c, subs, out, i, j, std::nullopt);
  };
  return Rule{"one_hot_merge", pair_pattern("p", "q", is_op(Op::kOneHot)), std::move(rw), std::move(cond)};
}

bool same_pair_subscripts(const Bindings& b) {
  const auto spec = EinsumSpec::parse(bound_string(b, "formula"));
  auto [i, j] = pair_positions(b);
  return spec.inputs[i] == spec.inputs[j];
}

Rule sqrt_pair() {
  Pattern p = op_pat(Op::kEinsum, {str("formula"), segment("pre"), bind("p", op_pat(Op::kSqrt, {val("u")})),
                                   segment("mid"), bind("q", op_pat(Op::kSqrt, {val("u")})), segment("post")});
  Condition cond = [](const Bindings& b, const TermGraph&) { return same_pair_subscripts(b); };
  Rewriter rw = [](const Captures& c) {
    const auto spec = EinsumSpec::parse(c.str("formula"));
    const std::size_t i = c.segment("pre").size();
    const std::size_t j = i + 1 + c.segment("mid").size();
    return rebuild_pair(c, spec.inputs, spec.output, i, j, c.node("u"));
  };
  return Rule{"sqrt_pair", std::move(p), std::move(rw), std::move(cond)};
}

Rule reciprocal_cancel() {
  Condition cond = [](const Bindings& b, const TermGraph& g) {
    if (!same_pair_subscripts(b)) return false;
    const NodeId p = bound_node(b, "p"), q = bound_node(b, "q");
    const Node& pn = g.node(p);
    const Node& qn = g.node(q);
    return (pn.is_prim(Op::kReciprocal) && pn.args[0] == q) || (qn.is_prim(Op::kReciprocal) && qn.args[0] == p);
  };
  Rewriter rw = [](const Captures& c) {
    const auto spec = EinsumSpec::parse(c.str("formula"));
    const std::size_t i = c.segment("pre").size();
    const std::size_t j = i + 1 + c.segment("mid").size();
    Expr ones = c.builder().constant(Tensor::ones(c.node("p").shape()));
    return rebuild_pair(c, spec.inputs, spec.output, i, j, ones);
  };
  return Rule{"reciprocal_cancel", pair_pattern("p", "q"), std::move(rw), std::move(cond)};
}

Rule make_distribute() {
  Pattern p = op_pat(Op::kEinsum,
                     {str("formula"), segment("args1"),
                      choice({op_pat({Op::kSubtract}, "op", {val("x"), val("y")}),
                              op_pat({Op::kAdd}, "op", {val("x"), val("y")})}),
                      segment("args2")});
  Rewriter rw = [](const Captures& c) {
    std::vector<Expr> lhs = c.segment("args1");
    std::vector<Expr> rhs = lhs;
    lhs.push_back(c.node("x"));
    rhs.push_back(c.node("y"));
    for (const Expr& e : c.segment("args2")) {
      lhs.push_back(e);
      rhs.push_back(e);
    }
    const std::string& formula = c.str("formula");
    const auto spec = EinsumSpec::parse(formula);
    // An add may broadcast; align each summand to the operand's shape first.
    const std::size_t pos = c.segment("args1").size();
    const Shape full = broadcast_shapes(c.node("x").shape(), c.node("y").shape());
    auto widen = [&](Expr e) { return e.shape() == full ? e : broadcast_to(e, full); };
    lhs[pos] = widen(lhs[pos]);
    rhs[pos] = widen(rhs[pos]);
    (void)spec;
    Expr l = einsum(formula, lhs);
    Expr r = einsum(formula, rhs);
    return c.str("op") == "add" ? l + r : l - r;
  };
  return Rule{"distribute_einsum", std::move(p), std::move(rw)};
}

std::vector<Rule> make_rules() {
  std::vector<Rule> rules;
  rules.push_back(inverse_pair("log_exp", Op::kLog, Op::kExp));
  rules.push_back(inverse_pair("exp_log", Op::kExp, Op::kLog));
  rules.push_back(inverse_pair("reciprocal_reciprocal", Op::kReciprocal, Op::kReciprocal));
  rules.push_back(gather_push());
  rules.push_back(log_of_reciprocal());
  rules.push_back(log_of_sqrt());
  rules.push_back(log_of_power());
  rules.push_back(log_one_plus());
  rules.push_back(product_rule("log_product", Op::kLog, true));
  rules.push_back(product_rule("reciprocal_product", Op::kReciprocal, false));
  rules.push_back(product_rule("sqrt_product", Op::kSqrt, true));
  rules.push_back(one_hot_merge());
  rules.push_back(sqrt_pair());
  rules.push_back(reciprocal_cancel());
  rules.push_back(make_distribute());
  return rules;
}

void add_leaves(const TermGraph& g, NodeId id, std::vector<NodeId>& out) {
  std::vector<NodeId> stack{id};
  while (!stack.empty()) {
    NodeId t = stack.back();
    stack.pop_back();
    const Node& n = g.node(t);
    if (n.is_prim(Op::kAdd)) {
      stack.push_back(n.args[1]);
      stack.push_back(n.args[0]);
    } else {
      out.push_back(t);
    }
  }
}

// Polynomial skeleton: add and einsum nodes reachable from the output through
// add and einsum nodes only, plus the leaves hanging off them. Rules are only
// tried at these roots; the inside of an atom is left alone.
std::vector<NodeId> skeleton(const TermGraph& g) {
  std::vector<NodeId> order;
  std::vector<bool> seen(g.size(), false);
  std::vector<NodeId> stack{g.output()};
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    if (seen[id.value]) continue;
    seen[id.value] = true;
    order.push_back(id);
    const Node& n = g.node(id);
    if (n.kind != NodeKind::kPrim || is_nonlinear(n)) continue;
    for (auto it = n.args.rbegin(); it != n.args.rend(); ++it) stack.push_back(*it);
  }
  return order;
}

// Every root where the rule matches, at most one match per root.
std::vector<RuleMatch> find_in(const Rule& rule, const TermGraph& g, const std::vector<NodeId>& roots) {
  std::vector<RuleMatch> out;
  for (NodeId id : roots) {
    if (rule.condition) {
      for (auto& b : match_all(rule.pattern, g, id)) {
        if (rule.condition(b, g)) {
          out.push_back(RuleMatch{id, std::move(b)});
          break;
        }
      }
    } else if (auto b = match_first(rule.pattern, g, id)) {
      out.push_back(RuleMatch{id, std::move(*b)});
    }
  }
  return out;
}

bool close(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
  if (std::isinf(a) || std::isinf(b)) return a == b;
  return std::abs(a - b) <= 1e-10 * std::max(1.0, std::abs(b));
}

}  // namespace

const std::vector<Rule>& canonical_rules() {
  static const std::vector<Rule> rules = make_rules();
  return rules;
}

const Rule& distribute_einsum_rule() { return canonical_rules().back(); }

std::vector<std::string> input_dependencies(const TermGraph& g, NodeId id) {
  std::set<std::string> names;
  std::vector<bool> seen(g.size(), false);
  std::vector<NodeId> stack{id};
  while (!stack.empty()) {
    NodeId t = stack.back();
    stack.pop_back();
    if (seen[t.value]) continue;
    seen[t.value] = true;
    const Node& n = g.node(t);
    if (n.is_input()) names.insert(n.name);
    for (NodeId a : n.args) stack.push_back(a);
  }
  return {names.begin(), names.end()};
}

std::vector<Monomial> monomials(const TermGraph& g) {
  std::vector<NodeId> leaves;
  add_leaves(g, g.output(), leaves);
  std::vector<Monomial> out;
  for (NodeId leaf : leaves) {
    const Node& n = g.node(leaf);
    Monomial m{leaf, {}, {}};
    if (n.is_prim(Op::kEinsum)) {
      for (NodeId a : n.args) (g.node(a).is_constant() ? m.coefficients : m.factors).push_back(a);
    } else if (n.is_constant()) {
      m.coefficients.push_back(leaf);
    } else {
      m.factors.push_back(leaf);
    }
    out.push_back(std::move(m));
  }
  return out;
}

bool is_canonical(const TermGraph& g, bool relaxed) {
  auto atom_ok = [&](NodeId id) {
    const Node& n = g.node(id);
    if (n.is_input() || n.is_constant()) return true;
    if (!is_nonlinear(n)) return false;
    const auto deps = input_dependencies(g, id);
    return relaxed ? !deps.empty() : deps.size() == 1;
  };
  std::vector<NodeId> leaves;
  add_leaves(g, g.output(), leaves);
  for (NodeId leaf : leaves) {
    const Node& n = g.node(leaf);
    if (n.is_prim(Op::kEinsum)) {
      for (NodeId a : n.args) {
        if (!atom_ok(a)) return false;
      }
    } else if (!atom_ok(leaf)) {
      return false;
    }
  }
  return true;
}

int termination_measure(const TermGraph& g) {
  const auto roots = skeleton(g);
  std::vector<bool> in_skeleton(g.size(), false);
  for (NodeId id : roots) in_skeleton[id.value] = true;
  int measure = 0;
  for (NodeId id : roots) {
    const Node& n = g.node(id);
    if (n.kind != NodeKind::kPrim || is_nonlinear(n)) continue;
    if (!n.is_prim(Op::kEinsum) && !n.is_prim(Op::kAdd)) ++measure;
    if (n.is_prim(Op::kEinsum)) {
      for (NodeId a : n.args) {
        const Node& an = g.node(a);
        if (an.is_prim(Op::kAdd) || an.is_prim(Op::kSubtract)) ++measure;
      }
    }
  }
  return measure;
}

CanonicalForm canonicalize(const TermGraph& g, const CanonicalizeOptions& options) {
  if (!g.shape(g.output()).empty()) {
    throw GraphError("canonicalize needs a scalar output, got shape " + shape_to_string(g.shape(g.output())));
  }
  std::optional<double> reference;
  if (options.check_env) reference = evaluate(g, *options.check_env).item();
  auto check = [&](const TermGraph& h, const std::string& rule) {
    if (!reference) return;
    const double v = evaluate(h, *options.check_env).item();
    if (!close(v, *reference)) {
      throw RuleError("rule '" + rule + "' changed the value from " + std::to_string(*reference) + " to " +
                      std::to_string(v));
    }
  };

  CanonicalForm result;
  TermGraph cur = local_simplify(g);
  check(cur, "local_simplify");
  std::deque<std::string> recent;
  const auto& rules = canonical_rules();
  // Each pass applies the first rule that matches anywhere, at every root
  // where it matches. Bound nodes that are themselves rewritten in the same
  // pass are rebuilt by splice_many, which is sound because every
  // replacement equals its target in value.
  while (true) {
    bool fired = false;
    const auto roots = skeleton(cur);
    for (const Rule& rule : rules) {
      auto matches = find_in(rule, cur, roots);
      if (matches.empty()) continue;
      const int room = options.max_rule_applications - result.rule_applications;
      if (room <= 0) {
        std::string last;
        for (const auto& r : recent) last += (last.empty() ? "" : ", ") + r;
        throw NonTerminationError("rewrite budget of " + std::to_string(options.max_rule_applications) +
                                  " rule applications exhausted; last rules fired: " + last);
      }
      if (static_cast<int>(matches.size()) > room) matches.resize(static_cast<std::size_t>(room));
      std::vector<std::pair<NodeId, Replacement>> edits;
      for (const auto& m : matches) edits.emplace_back(m.root, instantiate(rule, cur, m.root, m.bindings));
      cur = local_simplify(splice_many(cur, edits));
      for (std::size_t i = 0; i < matches.size(); ++i) {
        ++result.rule_applications;
        result.fired.push_back(rule.name);
        recent.push_back(rule.name);
        if (recent.size() > 10) recent.pop_front();
      }
      check(cur, rule.name);
      if (options.on_step) options.on_step(rule.name, cur);
      fired = true;
      break;
    }
    if (!fired) break;
  }
  result.graph = std::move(cur);
  result.monomials = monomials(result.graph);
  std::set<NodeId> atoms;
  for (const auto& m : result.monomials) atoms.insert(m.factors.begin(), m.factors.end());
  result.atoms.assign(atoms.begin(), atoms.end());
  return result;
}

}  // namespace symconj
