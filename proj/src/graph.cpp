// Apache License, Version 2.0, refer to LICENSE.txt
#include "symconj/graph.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <unordered_set>

namespace symconj {
namespace {

struct OpInfo {
  Op op;
  std::string_view name;
  int arity;  // -1 for variadic
};

constexpr std::array<OpInfo, 22> kOps{{
    {Op::kEinsum, "einsum", -1},
    {Op::kAdd, "add", 2},
    {Op::kSubtract, "subtract", 2},
    {Op::kMultiply, "multiply", 2},
    {Op::kDivide, "divide", 2},
    {Op::kPower, "power", 2},
    {Op::kOneHot, "one_hot", 1},
    {Op::kLog, "log", 1},
    {Op::kLog1p, "log1p", 1},
    {Op::kExp, "exp", 1},
    {Op::kSqrt, "sqrt", 1},
    {Op::kSquare, "square", 1},
    {Op::kReciprocal, "reciprocal", 1},
    {Op::kLogistic, "logistic", 1},
    {Op::kLogGamma, "log_gamma", 1},
    {Op::kDigamma, "digamma", 1},
    {Op::kNegate, "negate", 1},
    {Op::kSumAxis, "sum_axis", 1},
    {Op::kLogsumexp, "logsumexp", 1},
    {Op::kBroadcastTo, "broadcast_to", 1},
    {Op::kInverse, "inverse", 1},
    {Op::kLogDet, "log_det", 1},
}};

const OpInfo& info(Op op) { return kOps[static_cast<std::size_t>(op)]; }

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t mix_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

template <typename T>
std::uint64_t mix(std::uint64_t h, const T& v) {
  return mix_bytes(h, &v, sizeof(T));
}

std::uint64_t mix_string(std::uint64_t h, std::string_view s) {
  h = mix(h, s.size());
  return mix_bytes(h, s.data(), s.size());
}

std::uint64_t mix_shape(std::uint64_t h, const Shape& s) {
  h = mix(h, s.size());
  for (auto d : s) h = mix(h, d);
  return h;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

std::optional<UnaryFn> unary_of(Op op) {
  switch (op) {
    case Op::kLog: return UnaryFn::kLog;
    case Op::kLog1p: return UnaryFn::kLog1p;
    case Op::kExp: return UnaryFn::kExp;
    case Op::kSqrt: return UnaryFn::kSqrt;
    case Op::kSquare: return UnaryFn::kSquare;
    case Op::kReciprocal: return UnaryFn::kReciprocal;
    case Op::kLogistic: return UnaryFn::kLogistic;
    case Op::kLogGamma: return UnaryFn::kLogGamma;
    case Op::kDigamma: return UnaryFn::kDigamma;
    case Op::kNegate: return UnaryFn::kNegate;
    default: return std::nullopt;
  }
}

std::optional<BinaryFn> binary_of(Op op) {
  switch (op) {
    case Op::kAdd: return BinaryFn::kAdd;
    case Op::kSubtract: return BinaryFn::kSubtract;
    case Op::kMultiply: return BinaryFn::kMultiply;
    case Op::kDivide: return BinaryFn::kDivide;
    case Op::kPower: return BinaryFn::kPower;
    default: return std::nullopt;
  }
}

void check_square_trailing(const Shape& s, Op op) {
  if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2]) {
    throw GraphError(std::string(op_name(op)) + " needs square trailing axes, got " +
                     shape_to_string(s));
  }
}

Shape infer_shape(Op op, const std::vector<Shape>& in, Attrs& attrs) {
  const int arity = info(op).arity;
  if (arity >= 0 && static_cast<int>(in.size()) != arity) {
    throw GraphError(std::string(op_name(op)) + " expects " + std::to_string(arity) +
                     " argument(s), got " + std::to_string(in.size()));
  }
  switch (op) {
    case Op::kEinsum: {
      auto spec = EinsumSpec::parse(attrs.formula);
      if (spec.inputs.size() != in.size()) {
        throw GraphError("einsum '" + attrs.formula + "' expects " +
                         std::to_string(spec.inputs.size()) + " operands, got " +
                         std::to_string(in.size()));
      }
      return einsum_shape(spec, in);
    }
    case Op::kAdd:
    case Op::kSubtract:
    case Op::kMultiply:
    case Op::kDivide:
    case Op::kPower:
      try {
        return broadcast_shapes(in[0], in[1]);
      } catch (const Error& e) {
        throw GraphError(std::string(op_name(op)) + ": " + e.what());
      }
    case Op::kOneHot: {
      if (attrs.depth < 1) throw GraphError("one_hot depth must be positive");
      Shape s = in[0];
      s.push_back(attrs.depth);
      return s;
    }
    case Op::kSumAxis:
    case Op::kLogsumexp: {
      const auto rank = static_cast<std::int64_t>(in[0].size());
      if (attrs.axis < 0) attrs.axis += rank;
      if (attrs.axis < 0 || attrs.axis >= rank) {
        throw GraphError(std::string(op_name(op)) + " axis out of range for shape " +
                         shape_to_string(in[0]));
      }
      Shape s = in[0];
      s.erase(s.begin() + attrs.axis);
      return s;
    }
    case Op::kBroadcastTo: {
      Shape out;
      try {
        out = broadcast_shapes(in[0], attrs.shape);
      } catch (const Error&) {
        out.clear();
      }
      if (out != attrs.shape) {
        throw GraphError("cannot broadcast " + shape_to_string(in[0]) + " to " +
                         shape_to_string(attrs.shape));
      }
      return out;
    }
    case Op::kInverse:
      check_square_trailing(in[0], op);
      return in[0];
    case Op::kLogDet: {
      check_square_trailing(in[0], op);
      return Shape(in[0].begin(), in[0].end() - 2);
    }
    default:
      return in[0];
  }
}

std::uint64_t node_hash(const Node& n, const std::vector<Node>& table) {
  std::uint64_t h = kFnvOffset;
  h = mix(h, n.kind);
  switch (n.kind) {
    case NodeKind::kInput:
      h = mix_string(h, n.name);
      h = mix_shape(h, n.shape);
      break;
    case NodeKind::kConstant:
      h = mix_shape(h, n.value->shape());
      h = mix_bytes(h, n.value->data().data(), n.value->size() * sizeof(double));
      break;
    case NodeKind::kPrim:
      h = mix(h, n.op);
      if (n.op == Op::kEinsum) h = mix_string(h, canonical_einsum(n.attrs.formula));
      h = mix(h, n.attrs.axis);
      h = mix(h, n.attrs.depth);
      h = mix_shape(h, n.attrs.shape);
      for (NodeId a : n.args) h = mix(h, table[a.value].hash);
      break;
  }
  return h;
}

bool cons_equal(const Node& a, const Node& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case NodeKind::kInput:
      return a.name == b.name;
    case NodeKind::kConstant:
      return same_bits(*a.value, *b.value);
    case NodeKind::kPrim:
      if (a.op != b.op || a.args != b.args) return false;
      if (a.op == Op::kEinsum) {
        return canonical_einsum(a.attrs.formula) == canonical_einsum(b.attrs.formula);
      }
      return a.attrs.axis == b.attrs.axis && a.attrs.depth == b.attrs.depth &&
             a.attrs.shape == b.attrs.shape;
  }
  return false;
}

bool node_equal(const Node& a, const Node& b) {
  if (a.kind != b.kind || a.shape != b.shape) return false;
  switch (a.kind) {
    case NodeKind::kInput:
      return a.name == b.name && a.support == b.support;
    case NodeKind::kConstant:
      return same_bits(*a.value, *b.value);
    case NodeKind::kPrim:
      return a.op == b.op && a.attrs == b.attrs && a.args == b.args;
  }
  return false;
}

GraphBuilder& common_builder(const Expr& a, const Expr& b) {
  if (!a.valid() || !b.valid()) throw GraphError("use of an empty expression handle");
  if (&a.builder() != &b.builder()) {
    throw GraphError("expression handles from different builders cannot be combined");
  }
  return a.builder();
}

}  // namespace

std::string_view op_name(Op op) { return info(op).name; }

std::optional<Op> op_from_name(std::string_view name) {
  for (const auto& i : kOps) {
    if (i.name == name) return i.op;
  }
  return std::nullopt;
}

bool is_elementwise_nonlinear(Op op) {
  switch (op) {
    case Op::kLog:
    case Op::kLog1p:
    case Op::kExp:
    case Op::kSqrt:
    case Op::kReciprocal:
    case Op::kLogistic:
    case Op::kLogGamma:
    case Op::kDigamma:
      return true;
    default:
      return false;
  }
}

bool is_polynomial(Op op) {
  switch (op) {
    case Op::kEinsum:
    case Op::kAdd:
    case Op::kSubtract:
    case Op::kMultiply:
    case Op::kNegate:
    case Op::kSquare:
    case Op::kSumAxis:
    case Op::kBroadcastTo:
      return true;
    default:
      return false;
  }
}

std::string canonical_einsum(std::string_view formula) {
  std::array<char, 128> rename{};
  char next = 'a';
  std::string out(formula);
  for (char& c : out) {
    if (c < 'a' || c > 'z') continue;
    auto& r = rename[static_cast<unsigned char>(c)];
    if (r == 0) r = next++;
    c = r;
  }
  return out;
}

bool has_attr(Op op) {
  switch (op) {
    case Op::kEinsum:
    case Op::kOneHot:
    case Op::kSumAxis:
    case Op::kLogsumexp:
    case Op::kBroadcastTo:
      return true;
    default:
      return false;
  }
}

std::string attr_string(const Node& node) {
  if (node.kind != NodeKind::kPrim) return {};
  switch (node.op) {
    case Op::kEinsum: return node.attrs.formula;
    case Op::kOneHot: return std::to_string(node.attrs.depth);
    case Op::kSumAxis:
    case Op::kLogsumexp: return std::to_string(node.attrs.axis);
    case Op::kBroadcastTo: {
      std::string s;
      for (std::size_t i = 0; i < node.attrs.shape.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(node.attrs.shape[i]);
      }
      return s;
    }
    default: return {};
  }
}

// --- TermGraph ---------------------------------------------------------------

std::optional<NodeId> TermGraph::find_input(std::string_view name) const {
  for (NodeId id : inputs_) {
    if (node(id).name == name) return id;
  }
  return std::nullopt;
}

std::vector<std::string> TermGraph::input_names() const {
  std::vector<std::string> names;
  for (NodeId id : inputs_) names.push_back(node(id).name);
  return names;
}

std::vector<NodeId> TermGraph::reachable() const {
  std::vector<bool> live(size(), false);
  live[output_.value] = true;
  for (std::size_t i = size(); i-- > 0;) {
    if (!live[i]) continue;
    for (NodeId a : (*nodes_)[i].args) live[a.value] = true;
  }
  std::vector<NodeId> out;
  for (std::uint32_t i = 0; i < size(); ++i) {
    if (live[i]) out.push_back(NodeId{i});
  }
  return out;
}

std::vector<bool> TermGraph::depends_on(NodeId on) const {
  std::vector<bool> dep(size(), false);
  dep[on.value] = true;
  for (std::size_t i = on.value + 1; i < size(); ++i) {
    for (NodeId a : (*nodes_)[i].args) {
      if (dep[a.value]) {
        dep[i] = true;
        break;
      }
    }
  }
  return dep;
}

bool TermGraph::operator==(const TermGraph& other) const {
  if (size() != other.size() || inputs_ != other.inputs_ || output_ != other.output_) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (!node_equal((*nodes_)[i], (*other.nodes_)[i])) return false;
  }
  return true;
}

// --- builder -------------------------------------------------------------------

GraphBuilder& Expr::builder() const {
  if (builder_ == nullptr) throw GraphError("use of an empty expression handle");
  return *builder_;
}

Shape Expr::shape() const { return builder().node(id_).shape; }

NodeId GraphBuilder::add(Node n) {
  n.hash = node_hash(n, nodes_);
  if (hash_cons_) {
    auto [lo, hi] = table_.equal_range(n.hash);
    for (auto it = lo; it != hi; ++it) {
      if (cons_equal(nodes_[it->second.value], n)) return it->second;
    }
  }
  NodeId id{static_cast<std::uint32_t>(nodes_.size())};
  table_.emplace(n.hash, id);
  nodes_.push_back(std::move(n));
  return id;
}

Expr GraphBuilder::input(std::string name, Shape shape, std::optional<SupportType> support) {
  for (NodeId id : inputs_) {
    const Node& n = nodes_[id.value];
    if (n.name != name) continue;
    if (n.shape != shape) {
      throw GraphError("input '" + name + "' redeclared with shape " + shape_to_string(shape) +
                       " (was " + shape_to_string(n.shape) + ")");
    }
    return wrap(id);
  }
  for (auto d : shape) {
    if (d < 0) throw GraphError("negative extent in input '" + name + "'");
  }
  Node n;
  n.kind = NodeKind::kInput;
  n.name = std::move(name);
  n.support = support;
  n.shape = std::move(shape);
  // Inputs are never merged with anything else, so bypass the cons table.
  n.hash = node_hash(n, nodes_);
  NodeId id{static_cast<std::uint32_t>(nodes_.size())};
  nodes_.push_back(std::move(n));
  inputs_.push_back(id);
  return wrap(id);
}

Expr GraphBuilder::constant(Tensor value) {
  Node n;
  n.kind = NodeKind::kConstant;
  n.shape = value.shape();
  n.value = std::make_shared<const Tensor>(std::move(value));
  return wrap(add(std::move(n)));
}

NodeId GraphBuilder::prim_id(Op op, std::vector<NodeId> args, Attrs attrs) {
  std::vector<Shape> shapes;
  shapes.reserve(args.size());
  for (NodeId a : args) {
    if (a.value >= nodes_.size()) throw GraphError("argument refers to an unknown node");
    shapes.push_back(nodes_[a.value].shape);
  }
  Node n;
  n.kind = NodeKind::kPrim;
  n.op = op;
  n.shape = infer_shape(op, shapes, attrs);
  n.attrs = std::move(attrs);
  n.args = std::move(args);
  return add(std::move(n));
}

Expr GraphBuilder::prim(Op op, std::vector<Expr> args, Attrs attrs) {
  std::vector<NodeId> ids;
  ids.reserve(args.size());
  for (const Expr& e : args) {
    if (!e.valid()) throw GraphError("use of an empty expression handle");
    if (&e.builder() != this) {
      throw GraphError("expression handles from different builders cannot be combined");
    }
    ids.push_back(e.id());
  }
  return wrap(prim_id(op, std::move(ids), std::move(attrs)));
}

std::optional<Expr> GraphBuilder::find_input(std::string_view name) {
  for (NodeId id : inputs_) {
    if (nodes_[id.value].name == name) return wrap(id);
  }
  return std::nullopt;
}

std::vector<std::optional<NodeId>> GraphBuilder::import_all(
    const TermGraph& g, const std::map<std::string, Expr>& bindings, std::optional<NodeId> root) {
  std::vector<std::optional<NodeId>> map(g.size());
  const NodeId start = root.value_or(g.output());
  // Iterative post-order: arguments left to right before their consumer.
  std::vector<std::pair<NodeId, std::size_t>> stack{{start, 0}};
  while (!stack.empty()) {
    auto& [id, next] = stack.back();
    const Node& n = g.node(id);
    if (map[id.value]) {
      stack.pop_back();
      continue;
    }
    if (next < n.args.size()) {
      NodeId a = n.args[next++];
      if (!map[a.value]) stack.emplace_back(a, 0);
      continue;
    }
    NodeId mapped;
    switch (n.kind) {
      case NodeKind::kInput: {
        auto it = bindings.find(n.name);
        if (it != bindings.end()) {
          if (&it->second.builder() != this) {
            throw GraphError("binding for '" + n.name + "' belongs to another builder");
          }
          if (it->second.shape() != n.shape) {
            throw GraphError("binding for '" + n.name + "' has shape " +
                             shape_to_string(it->second.shape()) + ", expected " +
                             shape_to_string(n.shape));
          }
          mapped = it->second.id();
        } else {
          mapped = input(n.name, n.shape, n.support).id();
        }
        break;
      }
      case NodeKind::kConstant: {
        Node c;
        c.kind = NodeKind::kConstant;
        c.shape = n.shape;
        c.value = n.value;
        mapped = add(std::move(c));
        break;
      }
      case NodeKind::kPrim: {
        std::vector<NodeId> args;
        for (NodeId a : n.args) args.push_back(*map[a.value]);
        mapped = prim_id(n.op, std::move(args), n.attrs);
        break;
      }
    }
    map[id.value] = mapped;
    stack.pop_back();
  }
  return map;
}

Expr GraphBuilder::import(const TermGraph& g, const std::map<std::string, Expr>& bindings,
                          std::optional<NodeId> root) {
  auto map = import_all(g, bindings, root);
  return wrap(*map[root.value_or(g.output()).value]);
}

TermGraph GraphBuilder::finish(Expr output, const std::vector<std::string>& input_order) const {
  if (!output.valid() || &output.builder() != this) {
    throw GraphError("output handle does not belong to this builder");
  }
  TermGraph g;
  g.nodes_ = std::make_shared<const std::vector<Node>>(nodes_);
  std::vector<bool> used(inputs_.size(), false);
  for (const auto& name : input_order) {
    bool found = false;
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
      if (!used[i] && nodes_[inputs_[i].value].name == name) {
        used[i] = true;
        g.inputs_.push_back(inputs_[i]);
        found = true;
        break;
      }
    }
    if (!found) throw GraphError("input order names unknown input '" + name + "'");
  }
  for (std::size_t i = 0; i < inputs_.size(); ++i) {
    if (!used[i]) g.inputs_.push_back(inputs_[i]);
  }
  g.output_ = output.id();
  return g;
}

// --- combinators ---------------------------------------------------------------

namespace {

Expr binary(Op op, Expr a, Expr b) {
  GraphBuilder& bld = common_builder(a, b);
  return bld.prim(op, {a, b});
}

Expr unary(Op op, Expr x, Attrs attrs = {}) { return x.builder().prim(op, {x}, std::move(attrs)); }

Expr lift(Expr like, double v) { return like.builder().constant(v); }

std::string letters(std::size_t n, char start = 'a') {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<char>(start + i);
  return s;
}

}  // namespace

Expr operator+(Expr a, Expr b) { return binary(Op::kAdd, a, b); }
Expr operator-(Expr a, Expr b) { return binary(Op::kSubtract, a, b); }
Expr operator*(Expr a, Expr b) { return binary(Op::kMultiply, a, b); }
Expr operator/(Expr a, Expr b) { return binary(Op::kDivide, a, b); }
Expr operator-(Expr a) { return unary(Op::kNegate, a); }
Expr operator+(Expr a, double b) { return a + lift(a, b); }
Expr operator+(double a, Expr b) { return lift(b, a) + b; }
Expr operator-(Expr a, double b) { return a - lift(a, b); }
Expr operator-(double a, Expr b) { return lift(b, a) - b; }
Expr operator*(Expr a, double b) { return a * lift(a, b); }
Expr operator*(double a, Expr b) { return lift(b, a) * b; }
Expr operator/(Expr a, double b) { return a / lift(a, b); }
Expr operator/(double a, Expr b) { return lift(b, a) / b; }

Expr log(Expr x) { return unary(Op::kLog, x); }
Expr log1p(Expr x) { return unary(Op::kLog1p, x); }
Expr exp(Expr x) { return unary(Op::kExp, x); }
Expr sqrt(Expr x) { return unary(Op::kSqrt, x); }
Expr square(Expr x) { return unary(Op::kSquare, x); }
Expr reciprocal(Expr x) { return unary(Op::kReciprocal, x); }
Expr logistic(Expr x) { return unary(Op::kLogistic, x); }
Expr log_gamma(Expr x) { return unary(Op::kLogGamma, x); }
Expr digamma(Expr x) { return unary(Op::kDigamma, x); }
Expr pow(Expr x, double exponent) { return binary(Op::kPower, x, lift(x, exponent)); }
Expr pow(Expr x, Expr exponent) { return binary(Op::kPower, x, exponent); }

Expr einsum(std::string_view formula, std::vector<Expr> operands) {
  if (operands.empty()) throw GraphError("einsum needs at least one operand");
  for (const auto& o : operands) common_builder(operands.front(), o);
  Attrs attrs;
  attrs.formula = std::string(formula);
  return operands.front().builder().prim(Op::kEinsum, std::move(operands), std::move(attrs));
}

Expr one_hot(Expr indices, std::int64_t depth) {
  Attrs attrs;
  attrs.depth = depth;
  return unary(Op::kOneHot, indices, std::move(attrs));
}

Expr sum(Expr x, std::int64_t axis) {
  Attrs attrs;
  attrs.axis = axis;
  return unary(Op::kSumAxis, x, std::move(attrs));
}

Expr sum(Expr x) {
  const std::size_t rank = x.shape().size();
  if (rank == 0) return x;
  return einsum(letters(rank) + "->", {x});
}

Expr logsumexp(Expr x, std::int64_t axis) {
  Attrs attrs;
  attrs.axis = axis;
  return unary(Op::kLogsumexp, x, std::move(attrs));
}

Expr broadcast_to(Expr x, Shape shape) {
  Attrs attrs;
  attrs.shape = std::move(shape);
  return unary(Op::kBroadcastTo, x, std::move(attrs));
}

Expr dot(Expr a, Expr b) {
  const auto ra = a.shape().size();
  const auto rb = b.shape().size();
  if (ra == 0 || rb == 0) return a * b;
  if (ra == 1 && rb == 1) return einsum("a,a->", {a, b});
  if (ra == 2 && rb == 1) return einsum("ab,b->a", {a, b});
  if (ra == 1 && rb == 2) return einsum("a,ab->b", {a, b});
  if (ra == 2 && rb == 2) return einsum("ab,bc->ac", {a, b});
  throw GraphError("dot supports operands of rank at most 2");
}

Expr transpose(Expr x) {
  const auto rank = x.shape().size();
  if (rank < 2) throw GraphError("transpose needs rank >= 2");
  std::string in = letters(rank);
  std::string out = in;
  std::swap(out[rank - 1], out[rank - 2]);
  return einsum(in + "->" + out, {x});
}

Expr inverse(Expr x) { return unary(Op::kInverse, x); }
Expr log_det(Expr x) { return unary(Op::kLogDet, x); }

// --- build / evaluate ----------------------------------------------------------

TermGraph build(const std::vector<InputDecl>& inputs, const ModelFn& fn, bool log_density) {
  GraphBuilder b;
  std::vector<Expr> handles;
  std::vector<std::string> order;
  for (const auto& d : inputs) {
    for (const auto& n : order) {
      if (n == d.name) throw GraphError("duplicate input name '" + d.name + "'");
    }
    handles.push_back(b.input(d.name, d.shape, d.support));
    order.push_back(d.name);
  }
  Expr out = fn(handles);
  if (!out.valid() || &out.builder() != &b) {
    throw GraphError("model returned a handle from a different builder");
  }
  if (log_density && !out.shape().empty()) {
    throw GraphError("log-density output must be a scalar, got shape " +
                     shape_to_string(out.shape()));
  }
  return b.finish(out, order);
}

Tensor apply_prim(const Node& node, std::span<const Tensor> args) {
  if (auto u = unary_of(node.op)) return map_unary(*u, args[0]);
  if (auto bf = binary_of(node.op)) return map_binary(*bf, args[0], args[1]);
  switch (node.op) {
    case Op::kEinsum: return einsum(node.attrs.formula, args);
    case Op::kOneHot: return one_hot(args[0], node.attrs.depth);
    case Op::kSumAxis: return sum_axis(args[0], static_cast<std::size_t>(node.attrs.axis));
    case Op::kLogsumexp: return logsumexp(args[0], static_cast<std::size_t>(node.attrs.axis));
    case Op::kBroadcastTo: return broadcast_to(args[0], node.attrs.shape);
    case Op::kInverse: return spd_inverse(args[0]);
    case Op::kLogDet: return spd_log_det(args[0]);
    default: break;
  }
  throw GraphError("no kernel for " + std::string(op_name(node.op)));
}

std::vector<std::optional<Tensor>> evaluate_all(const TermGraph& g, const Env& env) {
  std::vector<std::optional<Tensor>> values(g.size());
  for (NodeId id : g.reachable()) {
    const Node& n = g.node(id);
    switch (n.kind) {
      case NodeKind::kInput: {
        auto it = env.find(n.name);
        if (it == env.end()) throw GraphError("missing binding for input '" + n.name + "'");
        if (it->second.shape() != n.shape) {
          throw GraphError("input '" + n.name + "' bound to shape " +
                           shape_to_string(it->second.shape()) + ", expected " +
                           shape_to_string(n.shape));
        }
        values[id.value] = it->second;
        break;
      }
      case NodeKind::kConstant:
        values[id.value] = *n.value;
        break;
      case NodeKind::kPrim: {
        std::vector<Tensor> args;
        args.reserve(n.args.size());
        for (NodeId a : n.args) args.push_back(*values[a.value]);
        values[id.value] = apply_prim(n, args);
        break;
      }
    }
  }
  return values;
}

Tensor evaluate(const TermGraph& g, const Env& env) {
  auto values = evaluate_all(g, env);
  return std::move(*values[g.output().value]);
}

// --- rebuilding ------------------------------------------------------------------

namespace {

/// Memoized depth-first copy of a graph into a builder, with per-node
/// overrides and cycle detection.
class Rebuild {
 public:
  using Override = std::function<NodeId()>;

  Rebuild(const TermGraph& g, GraphBuilder& b) : g_(g), b_(b), state_(g.size(), 0), map_(g.size()) {}

  std::unordered_map<NodeId, Override, NodeIdHash> overrides;

  NodeId visit(NodeId id) {
    if (state_[id.value] == 2) return map_[id.value];
    if (state_[id.value] == 1) throw GraphError("splice would introduce a cycle");
    state_[id.value] = 1;
    NodeId out;
    if (auto it = overrides.find(id); it != overrides.end()) {
      out = it->second();
    } else {
      const Node& n = g_.node(id);
      switch (n.kind) {
        case NodeKind::kInput:
          out = b_.input(n.name, n.shape, n.support).id();
          break;
        case NodeKind::kConstant:
          out = b_.constant(*n.value).id();
          break;
        case NodeKind::kPrim: {
          std::vector<NodeId> args;
          for (NodeId a : n.args) args.push_back(visit(a));
          out = b_.prim_id(n.op, std::move(args), n.attrs);
          break;
        }
      }
    }
    state_[id.value] = 2;
    map_[id.value] = out;
    return out;
  }

  void declare_inputs() {
    for (NodeId in : g_.inputs()) {
      const Node& n = g_.node(in);
      b_.input(n.name, n.shape, n.support);
    }
  }

 private:
  const TermGraph& g_;
  GraphBuilder& b_;
  std::vector<int> state_;
  std::vector<NodeId> map_;
};

NodeId splice_in(Rebuild& rb, GraphBuilder& b, const TermGraph& host, NodeId target,
                 const Replacement& r) {
  if (r.bound.size() != r.graph.inputs().size()) {
    throw GraphError("replacement binds " + std::to_string(r.bound.size()) + " of " +
                     std::to_string(r.graph.inputs().size()) + " inputs");
  }
  if (r.graph.shape(r.graph.output()) != host.shape(target)) {
    throw GraphError("replacement shape " + shape_to_string(r.graph.shape(r.graph.output())) +
                     " differs from target shape " + shape_to_string(host.shape(target)));
  }
  std::map<std::string, Expr> bind;
  for (std::size_t i = 0; i < r.bound.size(); ++i) {
    const Node& in = r.graph.node(r.graph.inputs()[i]);
    if (r.bound[i].value >= host.size()) throw GraphError("replacement input bound to unknown node");
    if (in.shape != host.shape(r.bound[i])) {
      throw GraphError("replacement input '" + in.name + "' has shape " +
                       shape_to_string(in.shape) + " but is bound to a node of shape " +
                       shape_to_string(host.shape(r.bound[i])));
    }
    bind.emplace(in.name, b.wrap(rb.visit(r.bound[i])));
  }
  return b.import(r.graph, bind).id();
}

}  // namespace

TermGraph cse(const TermGraph& g) {
  GraphBuilder b(true);
  std::map<std::string, Expr> bind;
  for (NodeId in : g.inputs()) {
    const Node& n = g.node(in);
    bind.emplace(n.name, b.input(n.name, n.shape, n.support));
  }
  Expr out = b.import(g, bind);
  return b.finish(out, g.input_names());
}

TermGraph splice_many(const TermGraph& g,
                      const std::vector<std::pair<NodeId, Replacement>>& edits) {
  GraphBuilder b(true);
  Rebuild rb(g, b);
  rb.declare_inputs();
  for (const auto& [target, r] : edits) {
    if (target.value >= g.size()) throw GraphError("splice target is not a node of the graph");
    const Replacement* rp = &r;
    NodeId t = target;
    rb.overrides[target] = [&rb, &b, &g, t, rp] { return splice_in(rb, b, g, t, *rp); };
  }
  NodeId out = rb.visit(g.output());
  return b.finish(b.wrap(out), g.input_names());
}

TermGraph splice(const TermGraph& g, NodeId target, const Replacement& replacement) {
  return splice_many(g, {{target, replacement}});
}

TermGraph replace_with_constant(const TermGraph& g, NodeId target, const Tensor& value) {
  GraphBuilder sub;
  Replacement r{sub.finish(sub.constant(value)), {}};
  return splice(g, target, r);
}

TermGraph replace_with_input(const TermGraph& g, NodeId target, const std::string& name) {
  if (g.find_input(name)) throw GraphError("input '" + name + "' already exists");
  GraphBuilder b(true);
  Rebuild rb(g, b);
  rb.declare_inputs();
  const Shape shape = g.shape(target);
  rb.overrides[target] = [&b, &name, &shape] { return b.input(name, shape).id(); };
  // Declare the new input even if the target is unreachable.
  b.input(name, shape);
  NodeId out = rb.visit(g.output());
  auto order = g.input_names();
  order.push_back(name);
  return b.finish(b.wrap(out), order);
}

TermGraph with_inputs(const TermGraph& g, const std::vector<InputDecl>& decls) {
  GraphBuilder b(true);
  std::map<std::string, Expr> bind;
  std::vector<std::string> order;
  for (const auto& d : decls) {
    Shape shape = d.shape;
    auto support = d.support;
    if (auto existing = g.find_input(d.name)) {
      shape = g.shape(*existing);
      if (!support) support = g.node(*existing).support;
    }
    bind.emplace(d.name, b.input(d.name, shape, support));
    order.push_back(d.name);
  }
  const std::unordered_set<std::string> declared(order.begin(), order.end());
  for (NodeId id : g.reachable()) {
    const Node& n = g.node(id);
    if (n.is_input() && !declared.contains(n.name)) {
      throw GraphError("input '" + n.name + "' is used but not declared");
    }
  }
  Expr out = b.import(g, bind);
  return b.finish(out, order);
}

}  // namespace symconj
