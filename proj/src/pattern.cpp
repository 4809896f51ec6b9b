// Apache License, Version 2.0, refer to LICENSE.txt
#include "symconj/pattern.hpp"

#include <algorithm>

namespace symconj {
namespace {

using detail::PatternKind;
using detail::PatternNode;

Pattern make(PatternNode n) { return Pattern(std::make_shared<const PatternNode>(std::move(n))); }

/// One element of a node's match list: its attribute or an argument.
struct Elem {
  bool is_attr;
  NodeId id;
  std::string attr;
};

std::vector<Elem> elements(const Node& n) {
  std::vector<Elem> out;
  if (has_attr(n.op)) out.push_back({true, {}, attr_string(n)});
  for (NodeId a : n.args) out.push_back({false, a, {}});
  return out;
}

// Continuation returns true to stop the search.
using Cont = std::function<bool(const Bindings&)>;

class Matcher {
 public:
  explicit Matcher(const TermGraph& g) : g_(g) {}

  bool match(const PatternNode& p, const Elem& e, const Bindings& b, const Cont& k) {
    switch (p.kind) {
      case PatternKind::kSegment:
        throw PatternError("Segment('" + p.name + "') may appear only inside an argument list");
      case PatternKind::kStr: {
        if (!e.is_attr) return false;
        if (p.literal && *p.literal != e.attr) return false;
        return bind_value(p.name, Binding{e.attr}, b, k);
      }
      case PatternKind::kVal: {
        if (e.is_attr) return false;
        if (p.node_pred && !p.node_pred(g_, e.id)) return false;
        return bind_value(p.name, Binding{e.id}, b, k);
      }
      case PatternKind::kConst: {
        if (e.is_attr) return false;
        const Node& n = g_.node(e.id);
        if (!n.is_constant()) return false;
        if (p.tensor_pred && !p.tensor_pred(*n.value)) return false;
        return bind_value(p.name, Binding{e.id}, b, k);
      }
      case PatternKind::kBind: {
        if (e.is_attr) return false;
        return match(p.items[0].node(), e, b, [&](const Bindings& b2) {
          return bind_value(p.name, Binding{e.id}, b2, k);
        });
      }
      case PatternKind::kChoice: {
        for (const auto& alt : p.items) {
          if (match(alt.node(), e, b, k)) return true;
        }
        return false;
      }
      case PatternKind::kOp: {
        if (e.is_attr) return false;
        const Node& n = g_.node(e.id);
        if (n.kind != NodeKind::kPrim) return false;
        if (std::find(p.ops.begin(), p.ops.end(), n.op) == p.ops.end()) return false;
        const auto elems = elements(n);
        return bind_value(p.name, Binding{std::string(op_name(n.op))}, b,
                          [&](const Bindings& b2) { return match_list(p.items, 0, elems, 0, b2, k); });
      }
    }
    return false;
  }

 private:
  bool bind_value(const std::string& name, Binding v, const Bindings& b, const Cont& k) {
    if (name.empty()) return k(b);
    auto it = b.find(name);
    if (it != b.end()) return it->second == v ? k(b) : false;
    Bindings b2 = b;
    b2.emplace(name, std::move(v));
    return k(b2);
  }

  bool match_list(const std::vector<Pattern>& items, std::size_t i, const std::vector<Elem>& elems,
                  std::size_t j, const Bindings& b, const Cont& k) {
    if (i == items.size()) return j == elems.size() ? k(b) : false;
    const PatternNode& p = items[i].node();
    if (p.kind == PatternKind::kSegment) {
      std::vector<NodeId> run;
      for (std::size_t len = 0; j + len <= elems.size(); ++len) {
        if (len > 0) {
          if (elems[j + len - 1].is_attr) break;
          run.push_back(elems[j + len - 1].id);
        }
        const bool stop = bind_value(p.name, Binding{run}, b, [&](const Bindings& b2) {
          return match_list(items, i + 1, elems, j + len, b2, k);
        });
        if (stop) return true;
      }
      return false;
    }
    if (j >= elems.size()) return false;
    return match(p, elems[j], b, [&](const Bindings& b2) {
      return match_list(items, i + 1, elems, j + 1, b2, k);
    });
  }

  const TermGraph& g_;
};

}  // namespace

Pattern op_pat(std::vector<Op> ops, std::string op_binding, std::vector<Pattern> items) {
  PatternNode n{PatternKind::kOp, std::move(op_binding), std::move(ops), std::move(items), {}, {}, {}};
  return make(std::move(n));
}

Pattern op_pat(Op op, std::vector<Pattern> items) { return op_pat({op}, {}, std::move(items)); }

Pattern val(std::string name, NodePredicate pred) {
  return make({PatternKind::kVal, std::move(name), {}, {}, std::move(pred), {}, {}});
}

Pattern str(std::string name) { return make({PatternKind::kStr, std::move(name), {}, {}, {}, {}, {}}); }

Pattern str_eq(std::string literal) {
  return make({PatternKind::kStr, {}, {}, {}, {}, {}, std::move(literal)});
}

Pattern const_pat(TensorPredicate pred, std::string name) {
  return make({PatternKind::kConst, std::move(name), {}, {}, {}, std::move(pred), {}});
}

Pattern choice(std::vector<Pattern> alternatives) {
  if (alternatives.empty()) throw PatternError("Choice needs at least one alternative");
  return make({PatternKind::kChoice, {}, {}, std::move(alternatives), {}, {}, {}});
}

Pattern segment(std::string name) {
  return make({PatternKind::kSegment, std::move(name), {}, {}, {}, {}, {}});
}

Pattern bind(std::string name, Pattern inner) {
  return make({PatternKind::kBind, std::move(name), {}, {std::move(inner)}, {}, {}, {}});
}

std::optional<Bindings> match_first(const Pattern& p, const TermGraph& g, NodeId root) {
  if (root.value >= g.size()) throw GraphError("match root is not a node of the graph");
  std::optional<Bindings> out;
  Matcher m(g);
  m.match(p.node(), Elem{false, root, {}}, {}, [&](const Bindings& b) {
    out = b;
    return true;
  });
  return out;
}

std::vector<Bindings> match_all(const Pattern& p, const TermGraph& g, NodeId root) {
  if (root.value >= g.size()) throw GraphError("match root is not a node of the graph");
  std::vector<Bindings> out;
  Matcher m(g);
  m.match(p.node(), Elem{false, root, {}}, {}, [&](const Bindings& b) {
    if (std::find(out.begin(), out.end(), b) == out.end()) out.push_back(b);
    return false;
  });
  return out;
}

const NodeId& bound_node(const Bindings& b, const std::string& name) {
  auto it = b.find(name);
  if (it == b.end() || !std::holds_alternative<NodeId>(it->second)) {
    throw PatternError("no node bound to '" + name + "'");
  }
  return std::get<NodeId>(it->second);
}

const std::string& bound_string(const Bindings& b, const std::string& name) {
  auto it = b.find(name);
  if (it == b.end() || !std::holds_alternative<std::string>(it->second)) {
    throw PatternError("no string bound to '" + name + "'");
  }
  return std::get<std::string>(it->second);
}

const std::vector<NodeId>& bound_segment(const Bindings& b, const std::string& name) {
  auto it = b.find(name);
  if (it == b.end() || !std::holds_alternative<std::vector<NodeId>>(it->second)) {
    throw PatternError("no segment bound to '" + name + "'");
  }
  return std::get<std::vector<NodeId>>(it->second);
}

Expr Captures::node(const std::string& name) const {
  auto it = nodes_.find(name);
  if (it == nodes_.end()) throw PatternError("rewriter asked for unbound node '" + name + "'");
  return it->second;
}

const std::vector<Expr>& Captures::segment(const std::string& name) const {
  auto it = segments_.find(name);
  if (it == segments_.end()) throw PatternError("rewriter asked for unbound segment '" + name + "'");
  return it->second;
}

const std::string& Captures::str(const std::string& name) const {
  auto it = strings_.find(name);
  if (it == strings_.end()) throw PatternError("rewriter asked for unbound string '" + name + "'");
  return it->second;
}

bool Captures::has(const std::string& name) const {
  return nodes_.contains(name) || segments_.contains(name) || strings_.contains(name);
}

Replacement instantiate(const Rule& rule, const TermGraph& g, NodeId root,
                        const Bindings& bindings) {
  GraphBuilder b;
  std::vector<NodeId> bound;
  std::map<NodeId, Expr> handle_of;
  auto handle = [&](NodeId id) {
    auto it = handle_of.find(id);
    if (it != handle_of.end()) return it->second;
    Expr e = b.input("$" + std::to_string(bound.size()), g.shape(id));
    bound.push_back(id);
    handle_of.emplace(id, e);
    return e;
  };
  std::map<std::string, Expr> nodes;
  std::map<std::string, std::vector<Expr>> segments;
  std::map<std::string, std::string> strings;
  for (const auto& [name, v] : bindings) {
    if (const auto* id = std::get_if<NodeId>(&v)) {
      nodes.emplace(name, handle(*id));
    } else if (const auto* s = std::get_if<std::string>(&v)) {
      strings.emplace(name, *s);
    } else {
      std::vector<Expr> list;
      for (NodeId id : std::get<std::vector<NodeId>>(v)) list.push_back(handle(id));
      segments.emplace(name, std::move(list));
    }
  }
  Captures captures(b, std::move(nodes), std::move(segments), std::move(strings));
  Expr out;
  try {
    out = rule.rewriter(captures);
  } catch (const RuleError&) {
    throw;
  } catch (const Error& e) {
    throw RuleError("rule '" + rule.name + "': " + e.what());
  }
  if (!out.valid() || &out.builder() != &b) {
    throw RuleError("rule '" + rule.name + "' returned a handle from another builder");
  }
  if (out.shape() != g.shape(root)) {
    throw RuleError("rule '" + rule.name + "' produced shape " + shape_to_string(out.shape()) +
                    " for a match of shape " + shape_to_string(g.shape(root)));
  }
  std::vector<std::string> order;
  for (std::size_t i = 0; i < bound.size(); ++i) order.push_back("$" + std::to_string(i));
  return Replacement{b.finish(out, order), std::move(bound)};
}

std::optional<RuleMatch> find_match(const Rule& rule, const TermGraph& g) {
  std::vector<bool> seen(g.size(), false);
  std::vector<NodeId> stack{g.output()};
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    if (seen[id.value]) continue;
    seen[id.value] = true;
    if (rule.condition) {
      for (auto& b : match_all(rule.pattern, g, id)) {
        if (rule.condition(b, g)) return RuleMatch{id, std::move(b)};
      }
    } else if (auto b = match_first(rule.pattern, g, id)) {
      return RuleMatch{id, std::move(*b)};
    }
    const auto& args = g.node(id).args;
    for (auto it = args.rbegin(); it != args.rend(); ++it) stack.push_back(*it);
  }
  return std::nullopt;
}

std::pair<TermGraph, bool> apply_rule(const Rule& rule, const TermGraph& g) {
  auto m = find_match(rule, g);
  if (!m) return {g, false};
  Replacement r = instantiate(rule, g, m->root, m->bindings);
  return {cse(splice(g, m->root, r)), true};
}

}  // namespace symconj
