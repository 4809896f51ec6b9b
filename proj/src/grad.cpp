// Apache License, Version 2.0, refer to LICENSE.txt
#include <algorithm>
#include <set>

#include "symconj/graph.hpp"

namespace symconj {
namespace {

std::string axis_letters(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<char>('a' + i);
  return s;
}

/// Sums `g` down to `target` under numpy broadcasting rules. Size-1 target
/// axes are recreated by contracting against a ones operand of extent 1.
Expr unbroadcast(Expr g, const Shape& target) {
  const Shape gs = g.shape();
  if (gs == target) return g;
  GraphBuilder& b = g.builder();
  const std::size_t lead = gs.size() - target.size();
  const std::string in = axis_letters(gs.size());
  std::string out;
  std::string formula = in;
  std::vector<Expr> ops{g};
  char fresh = static_cast<char>('a' + gs.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const char c = in[lead + i];
    if (target[i] == gs[lead + i]) {
      out += c;
    } else {
      out += fresh;
      formula += std::string(",") + fresh;
      ops.push_back(b.constant(Tensor::ones({1})));
      ++fresh;
    }
  }
  return einsum(formula + "->" + out, ops);
}

/// Re-inserts `axis` (of extent `extent`) into `g`.
Expr expand_axis(Expr g, std::int64_t axis, std::int64_t extent) {
  const std::size_t rank = g.shape().size() + 1;
  const std::string full = axis_letters(rank);
  std::string reduced = full;
  reduced.erase(static_cast<std::size_t>(axis), 1);
  const std::string letter(1, full[static_cast<std::size_t>(axis)]);
  return einsum(reduced + "," + letter + "->" + full,
                {g, g.builder().constant(Tensor::ones({extent}))});
}

/// Vector-Jacobian product of an einsum with respect to operand `which`.
Expr einsum_vjp(const Node& n, const std::vector<Expr>& args, std::size_t which, Expr g) {
  GraphBuilder& b = g.builder();
  const EinsumSpec spec = EinsumSpec::parse(n.attrs.formula);
  const std::string& target = spec.inputs[which];
  std::set<char> used(spec.output.begin(), spec.output.end());
  for (const auto& s : spec.inputs) used.insert(s.begin(), s.end());
  auto fresh = [&used]() {
    for (char c = 'a'; c <= 'z'; ++c) {
      if (!used.contains(c)) {
        used.insert(c);
        return c;
      }
    }
    throw ContractionError("einsum gradient ran out of index letters");
  };

  std::vector<std::string> subs{spec.output};
  std::vector<Expr> ops{g};
  for (std::size_t j = 0; j < args.size(); ++j) {
    if (j == which) continue;
    subs.push_back(spec.inputs[j]);
    ops.push_back(args[j]);
  }
  std::set<char> present;
  for (const auto& s : subs) present.insert(s.begin(), s.end());

  const Shape shape = args[which].shape();
  std::string out;
  std::set<char> seen;
  for (std::size_t k = 0; k < target.size(); ++k) {
    const char c = target[k];
    if (seen.contains(c)) {
      // Repeated index: place the result on the diagonal with a delta operand.
      const char d = fresh();
      out += d;
      subs.push_back(std::string{c, d});
      ops.push_back(b.constant(Tensor::identity(shape[k])));
      continue;
    }
    seen.insert(c);
    out += c;
    if (!present.contains(c)) {
      subs.push_back(std::string(1, c));
      ops.push_back(b.constant(Tensor::ones({shape[k]})));
      present.insert(c);
    }
  }
  std::string formula;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (i) formula += ',';
    formula += subs[i];
  }
  return einsum(formula + "->" + out, ops);
}

Expr vjp(const Node& n, Expr self, const std::vector<Expr>& a, std::size_t i, Expr g) {
  GraphBuilder& b = g.builder();
  auto arg_shape = [&](std::size_t k) { return a[k].shape(); };
  switch (n.op) {
    case Op::kEinsum:
      return einsum_vjp(n, a, i, g);
    case Op::kAdd:
      return unbroadcast(g, arg_shape(i));
    case Op::kSubtract:
      return unbroadcast(i == 0 ? g : -g, arg_shape(i));
    case Op::kMultiply:
      return unbroadcast(g * a[1 - i], arg_shape(i));
    case Op::kDivide:
      if (i == 0) return unbroadcast(g * reciprocal(a[1]), arg_shape(0));
      return unbroadcast(-(g * self * reciprocal(a[1])), arg_shape(1));
    case Op::kPower: {
      if (i == 1) return unbroadcast(g * self * log(a[0]), arg_shape(1));
      const Node& p = b.node(a[1].id());
      Expr pm1;
      if (p.is_constant()) {
        Tensor v = *p.value;
        for (double& x : v.mutable_data()) x -= 1.0;
        pm1 = b.constant(std::move(v));
      } else {
        pm1 = a[1] - 1.0;
      }
      return unbroadcast(g * a[1] * pow(a[0], pm1), arg_shape(0));
    }
    case Op::kNegate:
      return -g;
    case Op::kSquare:
      return 2.0 * (g * a[0]);
    case Op::kLog:
      return g * reciprocal(a[0]);
    case Op::kLog1p:
      return g * reciprocal(1.0 + a[0]);
    case Op::kExp:
      return g * self;
    case Op::kSqrt:
      return 0.5 * (g * reciprocal(self));
    case Op::kReciprocal:
      return -(g * square(self));
    case Op::kLogistic:
      return g * (self * (1.0 - self));
    case Op::kLogGamma:
      return g * digamma(a[0]);
    case Op::kSumAxis:
      return expand_axis(g, n.attrs.axis, arg_shape(0)[static_cast<std::size_t>(n.attrs.axis)]);
    case Op::kLogsumexp: {
      const auto extent = arg_shape(0)[static_cast<std::size_t>(n.attrs.axis)];
      Expr softmax = exp(a[0] - expand_axis(self, n.attrs.axis, extent));
      return expand_axis(g, n.attrs.axis, extent) * softmax;
    }
    case Op::kBroadcastTo:
      return unbroadcast(g, arg_shape(0));
    case Op::kInverse: {
      const std::string batch = axis_letters(self.shape().size() - 2);
      auto sub = [&](std::string_view m) { return batch + std::string(m); };
      return -einsum(sub("zy") + "," + sub("zx") + "," + sub("wx") + "->" + sub("yw"),
                     {self, g, self});
    }
    case Op::kLogDet: {
      const std::string batch = axis_letters(self.shape().size());
      return einsum(batch + "," + batch + "zy->" + batch + "yz", {g, inverse(a[0])});
    }
    case Op::kDigamma:
      throw GraphError("digamma is not differentiable within the primitive set");
    case Op::kOneHot:
      throw GraphError("one_hot is not differentiable with respect to its indices");
  }
  throw GraphError("no gradient rule for " + std::string(op_name(n.op)));
}

}  // namespace

TermGraph grad(const TermGraph& g, NodeId wrt) {
  if (wrt.value >= g.size()) throw GraphError("grad target is not a node of the graph");
  if (!g.shape(g.output()).empty()) {
    throw GraphError("grad needs a scalar output, got shape " +
                     shape_to_string(g.shape(g.output())));
  }
  if (!g.node(wrt).is_input()) {
    return grad(replace_with_input(g, wrt, "@wrt"), "@wrt");
  }

  GraphBuilder b(true);
  std::map<std::string, Expr> bind;
  for (NodeId in : g.inputs()) {
    const Node& n = g.node(in);
    bind.emplace(n.name, b.input(n.name, n.shape, n.support));
  }
  auto map = b.import_all(g, bind);
  const auto dep = g.depends_on(wrt);
  const Shape wrt_shape = g.shape(wrt);

  std::vector<std::optional<Expr>> adj(g.size());
  if (dep[g.output().value]) adj[g.output().value] = b.constant(1.0);
  for (std::size_t k = g.output().value + 1; k-- > wrt.value + 1;) {
    if (!adj[k] || !dep[k]) continue;
    const Node& n = g.node(NodeId{static_cast<std::uint32_t>(k)});
    std::vector<Expr> args;
    for (NodeId a : n.args) args.push_back(b.wrap(*map[a.value]));
    Expr self = b.wrap(*map[k]);
    for (std::size_t i = 0; i < n.args.size(); ++i) {
      const NodeId a = n.args[i];
      if (!dep[a.value]) continue;
      Expr contrib = vjp(n, self, args, i, *adj[k]);
      adj[a.value] = adj[a.value] ? *adj[a.value] + contrib : contrib;
    }
  }
  Expr result = adj[wrt.value] ? *adj[wrt.value] : b.constant(Tensor::zeros(wrt_shape));
  return cse(b.finish(result, g.input_names()));
}

TermGraph grad(const TermGraph& g, const std::string& input_name) {
  auto id = g.find_input(input_name);
  if (!id) throw GraphError("grad: no input named '" + input_name + "'");
  return grad(g, *id);
}

}  // namespace symconj
