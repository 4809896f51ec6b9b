// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "symconj/graph.hpp"

namespace symconj {

/// A bound value: a node, an attribute or op name, or a Segment's node list.
using Binding = std::variant<NodeId, std::string, std::vector<NodeId>>;
using Bindings = std::map<std::string, Binding>;

using NodePredicate = std::function<bool(const TermGraph&, NodeId)>;
using TensorPredicate = std::function<bool(const Tensor&)>;

namespace detail {
struct PatternNode;
}

/// Immutable pattern tree. Build with the free functions below.
class Pattern {
 public:
  explicit Pattern(std::shared_ptr<const detail::PatternNode> node) : node_(std::move(node)) {}
  const detail::PatternNode& node() const { return *node_; }

 private:
  std::shared_ptr<const detail::PatternNode> node_;
};

namespace detail {

enum class PatternKind { kOp, kVal, kStr, kConst, kChoice, kSegment, kBind };

struct PatternNode {
  PatternKind kind;
  std::string name;              // binding name; empty binds nothing
  std::vector<Op> ops;           // kOp
  std::vector<Pattern> items;    // kOp: attribute (if any) then arguments; kChoice, kBind
  NodePredicate node_pred;       // kVal
  TensorPredicate tensor_pred;   // kConst
  std::optional<std::string> literal;  // kStr
};

}  // namespace detail

/// Matches a primitive whose op is in `ops`. `items` is matched against the
/// element list [attribute if the op has one, arg0, arg1, ...]. When
/// `op_binding` is non-empty the op name is bound to it.
Pattern op_pat(std::vector<Op> ops, std::string op_binding, std::vector<Pattern> items);
Pattern op_pat(Op op, std::vector<Pattern> items);
/// Any node; binds it to `name` unless empty.
Pattern val(std::string name = {}, NodePredicate pred = {});
/// An attribute element; binds its string form to `name`.
Pattern str(std::string name);
/// An attribute element equal to `literal`.
Pattern str_eq(std::string literal);
/// A constant node whose value satisfies `pred`; bound to `name` unless empty.
Pattern const_pat(TensorPredicate pred = {}, std::string name = {});
Pattern choice(std::vector<Pattern> alternatives);
/// Any contiguous run of arguments (possibly empty).
Pattern segment(std::string name);
Pattern bind(std::string name, Pattern inner);

/// First binding in the deterministic search order, if any.
std::optional<Bindings> match_first(const Pattern& p, const TermGraph& g, NodeId root);
/// All distinct bindings, in search order.
std::vector<Bindings> match_all(const Pattern& p, const TermGraph& g, NodeId root);

const NodeId& bound_node(const Bindings& b, const std::string& name);
const std::string& bound_string(const Bindings& b, const std::string& name);
const std::vector<NodeId>& bound_segment(const Bindings& b, const std::string& name);

/// What a rewriter sees: opaque handles for bound nodes in a fresh builder.
class Captures {
 public:
  Captures(GraphBuilder& builder, std::map<std::string, Expr> nodes,
           std::map<std::string, std::vector<Expr>> segments,
           std::map<std::string, std::string> strings)
      : builder_(builder),
        nodes_(std::move(nodes)),
        segments_(std::move(segments)),
        strings_(std::move(strings)) {}

  GraphBuilder& builder() const { return builder_; }
  Expr node(const std::string& name) const;
  const std::vector<Expr>& segment(const std::string& name) const;
  const std::string& str(const std::string& name) const;
  bool has(const std::string& name) const;

 private:
  GraphBuilder& builder_;
  std::map<std::string, Expr> nodes_;
  std::map<std::string, std::vector<Expr>> segments_;
  std::map<std::string, std::string> strings_;
};

using Condition = std::function<bool(const Bindings&, const TermGraph&)>;
using Rewriter = std::function<Expr(const Captures&)>;

struct Rule {
  std::string name;
  Pattern pattern;
  Rewriter rewriter;
  Condition condition;  // optional extra guard
};

/// Builds the replacement for one match of `rule` at `root`. Throws
/// RuleError when the rewriter's result has the wrong shape.
Replacement instantiate(const Rule& rule, const TermGraph& g, NodeId root,
                        const Bindings& bindings);

/// Location of the first applicable match, searching depth-first from the
/// output (a node before its arguments, arguments left to right).
struct RuleMatch {
  NodeId root;
  Bindings bindings;
};
std::optional<RuleMatch> find_match(const Rule& rule, const TermGraph& g);

/// Rewrites the first match and runs cse; returns (g, false) unchanged when
/// nothing matches.
std::pair<TermGraph, bool> apply_rule(const Rule& rule, const TermGraph& g);

}  // namespace symconj
