// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "symconj/support.hpp"
#include "symconj/tensor.hpp"

namespace symconj {

/// Closed primitive set of the IR.
enum class Op : std::uint8_t {
  kEinsum,
  kAdd,
  kSubtract,
  kMultiply,
  kDivide,
  kPower,
  kOneHot,
  kLog,
  kLog1p,
  kExp,
  kSqrt,
  kSquare,
  kReciprocal,
  kLogistic,
  kLogGamma,
  kDigamma,
  kNegate,
  kSumAxis,
  kLogsumexp,
  kBroadcastTo,
  kInverse,  // SPD inverse over the trailing two axes
  kLogDet,   // SPD log-determinant over the trailing two axes
};

std::string_view op_name(Op op);
std::optional<Op> op_from_name(std::string_view name);
/// Elementwise one-argument primitives other than negate and square.
bool is_elementwise_nonlinear(Op op);
/// Primitives that are polynomial maps of their arguments.
bool is_polynomial(Op op);

struct NodeId {
  std::uint32_t value = 0;
  auto operator<=>(const NodeId&) const = default;
};

struct NodeIdHash {
  std::size_t operator()(NodeId id) const { return std::hash<std::uint32_t>{}(id.value); }
};

enum class NodeKind : std::uint8_t { kInput, kConstant, kPrim };

/// Static attributes; only the field relevant to the op is meaningful.
struct Attrs {
  std::string formula;     // einsum
  std::int64_t axis = 0;   // sum_axis, logsumexp
  std::int64_t depth = 0;  // one_hot
  Shape shape;             // broadcast_to

  bool operator==(const Attrs&) const = default;
};

struct Node {
  NodeKind kind = NodeKind::kPrim;
  Op op = Op::kAdd;
  std::string name;                    // inputs
  std::optional<SupportType> support;  // inputs, advisory
  std::shared_ptr<const Tensor> value; // constants
  Attrs attrs;
  std::vector<NodeId> args;
  Shape shape;
  std::uint64_t hash = 0;  // structural hash of the subterm rooted here

  bool is_input() const { return kind == NodeKind::kInput; }
  bool is_constant() const { return kind == NodeKind::kConstant; }
  bool is_prim(Op o) const { return kind == NodeKind::kPrim && op == o; }
};

/// Renames einsum indices by order of first appearance, scanning operands
/// left to right and then the output.
std::string canonical_einsum(std::string_view formula);

/// Attribute rendered as the string a pattern's Str() binds, empty when the
/// op has no attribute.
std::string attr_string(const Node& node);
bool has_attr(Op op);

/// Immutable acyclic term graph. Every node's arguments precede it.
class TermGraph {
 public:
  TermGraph() = default;

  const Node& node(NodeId id) const { return (*nodes_)[id.value]; }
  std::size_t size() const { return nodes_ ? nodes_->size() : 0; }
  std::span<const Node> nodes() const { return *nodes_; }
  const std::vector<NodeId>& inputs() const { return inputs_; }
  NodeId output() const { return output_; }
  const Shape& shape(NodeId id) const { return node(id).shape; }

  std::optional<NodeId> find_input(std::string_view name) const;
  std::vector<std::string> input_names() const;
  /// Nodes reachable from the output, in table order.
  std::vector<NodeId> reachable() const;
  /// Whether `node` transitively depends on `on` (or is it).
  std::vector<bool> depends_on(NodeId on) const;

  /// Exact structural equality of tables, inputs and output.
  bool operator==(const TermGraph& other) const;

 private:
  friend class GraphBuilder;
  std::shared_ptr<const std::vector<Node>> nodes_;
  std::vector<NodeId> inputs_;
  NodeId output_;
};

class GraphBuilder;

/// Handle to a node under construction. Handles from different builders
/// cannot be combined.
class Expr {
 public:
  Expr() = default;
  Expr(GraphBuilder* b, NodeId id) : builder_(b), id_(id) {}

  GraphBuilder& builder() const;
  NodeId id() const { return id_; }
  Shape shape() const;
  bool valid() const { return builder_ != nullptr; }

 private:
  GraphBuilder* builder_ = nullptr;
  NodeId id_;
};

class GraphBuilder {
 public:
  /// With hash-consing, structurally equal nodes are created once.
  explicit GraphBuilder(bool hash_cons = true) : hash_cons_(hash_cons) {}
  GraphBuilder(const GraphBuilder&) = delete;
  GraphBuilder& operator=(const GraphBuilder&) = delete;

  Expr input(std::string name, Shape shape, std::optional<SupportType> support = {});
  Expr constant(Tensor value);
  Expr constant(double value) { return constant(Tensor::scalar(value)); }
  Expr prim(Op op, std::vector<Expr> args, Attrs attrs = {});
  NodeId prim_id(Op op, std::vector<NodeId> args, Attrs attrs = {});
  Expr wrap(NodeId id) { return Expr(this, id); }

  /// Copies the part of `g` reachable from `root` (default: its output),
  /// binding g's inputs by name. Unbound inputs become inputs of this builder.
  Expr import(const TermGraph& g, const std::map<std::string, Expr>& bindings,
              std::optional<NodeId> root = {});
  /// As import, mapping every reachable node of g; returns old->new ids.
  std::vector<std::optional<NodeId>> import_all(const TermGraph& g,
                                                const std::map<std::string, Expr>& bindings,
                                                std::optional<NodeId> root = {});

  const Node& node(NodeId id) const { return nodes_[id.value]; }
  std::size_t size() const { return nodes_.size(); }
  std::optional<Expr> find_input(std::string_view name);

  /// Freezes the table into a graph. `input_order` (names) fixes the
  /// declared order; the default is creation order.
  TermGraph finish(Expr output, const std::vector<std::string>& input_order = {}) const;

 private:
  NodeId add(Node node);

  bool hash_cons_;
  std::vector<Node> nodes_;
  std::vector<NodeId> inputs_;
  std::unordered_multimap<std::uint64_t, NodeId> table_;
};

// --- expression combinators --------------------------------------------------

Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator*(Expr a, Expr b);
Expr operator/(Expr a, Expr b);
Expr operator-(Expr a);
Expr operator+(Expr a, double b);
Expr operator+(double a, Expr b);
Expr operator-(Expr a, double b);
Expr operator-(double a, Expr b);
Expr operator*(Expr a, double b);
Expr operator*(double a, Expr b);
Expr operator/(Expr a, double b);
Expr operator/(double a, Expr b);

Expr log(Expr x);
Expr log1p(Expr x);
Expr exp(Expr x);
Expr sqrt(Expr x);
Expr square(Expr x);
Expr reciprocal(Expr x);
Expr logistic(Expr x);
Expr log_gamma(Expr x);
Expr digamma(Expr x);
Expr pow(Expr x, double exponent);
Expr pow(Expr x, Expr exponent);
Expr einsum(std::string_view formula, std::vector<Expr> operands);
Expr one_hot(Expr indices, std::int64_t depth);
Expr sum(Expr x, std::int64_t axis);
/// Sum over every axis.
Expr sum(Expr x);
Expr logsumexp(Expr x, std::int64_t axis);
Expr broadcast_to(Expr x, Shape shape);
/// numpy.dot for ranks up to two, lowered to einsum.
Expr dot(Expr a, Expr b);
/// Reverses the two trailing axes.
Expr transpose(Expr x);
Expr inverse(Expr x);
Expr log_det(Expr x);

// --- graph operations --------------------------------------------------------

struct InputDecl {
  std::string name;
  Shape shape;
  std::optional<SupportType> support;
};

using ModelFn = std::function<Expr(std::span<const Expr>)>;

/// Runs `fn` on fresh input handles and freezes the result. When
/// `log_density` is set the output must be a scalar.
TermGraph build(const std::vector<InputDecl>& inputs, const ModelFn& fn, bool log_density = true);

using Env = std::map<std::string, Tensor>;

/// Applies one primitive to concrete argument values.
Tensor apply_prim(const Node& node, std::span<const Tensor> args);

Tensor evaluate(const TermGraph& g, const Env& env);
/// Values of every node reachable from the output (others are empty).
std::vector<std::optional<Tensor>> evaluate_all(const TermGraph& g, const Env& env);

/// Hash-consing rebuild in depth-first order from the output; unused
/// non-input nodes are dropped and declared inputs are kept.
TermGraph cse(const TermGraph& g);

/// Sub-graph whose declared inputs stand for nodes of a host graph.
struct Replacement {
  TermGraph graph;
  std::vector<NodeId> bound;  // bound[i] is the host node for graph.inputs()[i]
};

TermGraph splice(const TermGraph& g, NodeId target, const Replacement& replacement);
/// Replaces several nodes at once; replacements may not refer to targets.
TermGraph splice_many(const TermGraph& g, const std::vector<std::pair<NodeId, Replacement>>& edits);
/// Convenience: replace `target` with a constant tensor.
TermGraph replace_with_constant(const TermGraph& g, NodeId target, const Tensor& value);
/// Replaces `target` by a fresh input named `name` (kept last in the input list).
TermGraph replace_with_input(const TermGraph& g, NodeId target, const std::string& name);

/// Symbolic reverse-mode gradient of a scalar-output graph with respect to
/// the value at `wrt`. The result has g's inputs (plus "@wrt" when wrt is not
/// an input) and an output shaped like `wrt`.
TermGraph grad(const TermGraph& g, NodeId wrt);
TermGraph grad(const TermGraph& g, const std::string& input_name);

/// Returns a copy of g with its declared input list replaced by `names`
/// (nodes named there that do not exist are added as inputs of the given
/// shapes; reachable inputs missing from `names` are an error).
TermGraph with_inputs(const TermGraph& g, const std::vector<InputDecl>& decls);

enum class DumpFormat { kText, kDot };
std::string dump(const TermGraph& g, DumpFormat format = DumpFormat::kText);
/// Parses the text form produced by dump(). Throws ParseError.
TermGraph parse_graph(std::string_view text);

}  // namespace symconj
