// Apache License, Version 2.0, refer to LICENSE.txt
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "symconj/canonicalize.hpp"

namespace symconj {
namespace {

// Folding constants larger than this is left to evaluation time.
constexpr std::int64_t kMaxFoldElements = 1 << 16;
constexpr int kMaxExpandedPower = 8;

std::string first_letters(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<char>('a' + i);
  return s;
}

bool all_equal(const Tensor& t, double v) {
  return std::all_of(t.data().begin(), t.data().end(), [v](double x) { return x == v; });
}

struct Term {
  std::string subs;
  NodeId id;
};

/// Smart constructors that emit already-normalized nodes.
class Simplifier {
 public:
  explicit Simplifier(GraphBuilder& b) : b_(b) {}

  NodeId constant(Tensor t) { return b_.constant(std::move(t)).id(); }

  NodeId apply(Op op, const std::vector<NodeId>& args, const Attrs& attrs) {
    switch (op) {
      case Op::kEinsum: {
        const auto spec = EinsumSpec::parse(attrs.formula);
        std::vector<Term> terms;
        for (std::size_t i = 0; i < args.size(); ++i) terms.push_back({spec.inputs[i], args[i]});
        return einsum(std::move(terms), spec.output);
      }
      case Op::kAdd: return add({args[0], args[1]}, out_shape(op, args, attrs));
      case Op::kSubtract: return add({args[0], negate(args[1])}, out_shape(op, args, attrs));
      case Op::kMultiply: return multiply(args[0], args[1]);
      case Op::kDivide: return multiply(args[0], unary(Op::kReciprocal, args[1]));
      case Op::kNegate: return negate(args[0]);
      case Op::kSquare: {
        const std::string s = first_letters(shape(args[0]).size());
        return einsum({{s, args[0]}, {s, args[0]}}, s);
      }
      case Op::kPower: return power(args[0], args[1]);
      case Op::kSumAxis: {
        const std::string s = first_letters(shape(args[0]).size());
        std::string out = s;
        out.erase(static_cast<std::size_t>(attrs.axis), 1);
        return einsum({{s, args[0]}}, out);
      }
      case Op::kBroadcastTo: return broadcast(args[0], attrs.shape);
      case Op::kInverse:
      case Op::kLogDet: return matrix_fn(op, args[0]);
      default: return generic(op, args, attrs);
    }
  }

  NodeId einsum(std::vector<Term> terms, std::string out) {
    std::map<char, std::int64_t> extent;
    for (const auto& t : terms) {
      const Shape s = shape(t.id);
      for (std::size_t p = 0; p < t.subs.size(); ++p) extent[t.subs[p]] = s[p];
    }
    Shape out_shape;
    for (char c : out) out_shape.push_back(extent.at(c));

    // Inline nested einsums until none remain (or letters run out).
    for (bool changed = true; changed;) {
      changed = false;
      for (std::size_t i = 0; i < terms.size(); ++i) {
        if (!b_.node(terms[i].id).is_prim(Op::kEinsum)) continue;
        if (auto inlined = inline_operand(terms, i, out)) {
          terms = std::move(*inlined);
          changed = true;
          break;
        }
      }
    }

    extent.clear();
    for (const auto& t : terms) {
      const Shape s = shape(t.id);
      for (std::size_t p = 0; p < t.subs.size(); ++p) extent[t.subs[p]] = s[p];
    }

    // Contract the constant operands into at most one.
    double coef = 1.0;
    std::vector<Term> vars, consts;
    for (auto& t : terms) (b_.node(t.id).is_constant() ? consts : vars).push_back(t);
    for (const auto& c : consts) {
      if (all_equal(*b_.node(c.id).value, 0.0)) return constant(Tensor::zeros(out_shape));
    }
    if (!consts.empty()) {
      std::set<char> external(out.begin(), out.end());
      for (const auto& v : vars) external.insert(v.subs.begin(), v.subs.end());
      std::string keep;
      for (const auto& c : consts) {
        for (char ch : c.subs) {
          if (external.contains(ch) && keep.find(ch) == std::string::npos) keep += ch;
        }
      }
      std::int64_t size = 1;
      for (char ch : keep) size *= extent.at(ch);
      if (size <= kMaxFoldElements) {
        EinsumSpec spec;
        std::vector<Tensor> values;
        for (const auto& c : consts) {
          spec.inputs.push_back(c.subs);
          values.push_back(*b_.node(c.id).value);
        }
        spec.output = keep;
        Tensor folded = symconj::einsum(spec, values);
        consts.clear();
        if (keep.empty()) {
          coef = folded.item();
        } else {
          bool droppable = all_equal(folded, 1.0);
          if (droppable) {
            std::set<char> in_vars;
            for (const auto& v : vars) in_vars.insert(v.subs.begin(), v.subs.end());
            droppable = std::all_of(keep.begin(), keep.end(), [&](char ch) { return in_vars.contains(ch); });
          }
          if (!droppable) consts.push_back({keep, constant(std::move(folded))});
        }
      }
    }
    if (coef == 0.0) return constant(Tensor::zeros(out_shape));
    if (vars.empty()) {
      if (consts.empty()) return constant(Tensor::filled(out_shape, coef));
      EinsumSpec spec;
      std::vector<Tensor> values;
      for (const auto& c : consts) {
        spec.inputs.push_back(c.subs);
        values.push_back(*b_.node(c.id).value);
      }
      spec.output = out;
      Tensor folded = symconj::einsum(spec, values);
      for (double& x : folded.mutable_data()) x *= coef;
      return constant(std::move(folded));
    }
    if (coef == 1.0 && consts.empty() && vars.size() == 1 && vars[0].subs == out) {
      return vars[0].id;  // identity contraction
    }
    std::vector<Term> all = std::move(vars);
    for (auto& c : consts) all.push_back(std::move(c));
    if (coef != 1.0) all.push_back({"", constant(Tensor(coef))});
    return emit(std::move(all), std::move(out));
  }

  NodeId add(std::vector<NodeId> terms, const Shape& out_shape) {
    std::vector<NodeId> leaves;
    std::vector<NodeId> stack(terms.rbegin(), terms.rend());
    while (!stack.empty()) {
      NodeId t = stack.back();
      stack.pop_back();
      const Node& n = b_.node(t);
      if (n.is_prim(Op::kAdd)) {
        stack.push_back(n.args[1]);
        stack.push_back(n.args[0]);
      } else {
        leaves.push_back(t);
      }
    }
    std::optional<Tensor> total;
    std::vector<NodeId> kept;
    for (NodeId leaf : leaves) {
      if (shape(leaf) != out_shape) leaf = broadcast(leaf, out_shape);
      const Node& n = b_.node(leaf);
      if (n.is_constant()) {
        total = total ? map_binary(BinaryFn::kAdd, *total, *n.value) : *n.value;
      } else {
        kept.push_back(leaf);
      }
    }
    kept = combine_like_terms(kept);
    if (total && (!all_equal(*total, 0.0) || kept.empty())) kept.push_back(constant(std::move(*total)));
    if (kept.empty()) return constant(Tensor::zeros(out_shape));
    std::sort(kept.begin(), kept.end(), [&](NodeId x, NodeId y) {
      return std::pair(b_.node(x).hash, x) < std::pair(b_.node(y).hash, y);
    });
    NodeId acc = kept.back();
    for (std::size_t i = kept.size() - 1; i-- > 0;) acc = b_.prim_id(Op::kAdd, {kept[i], acc});
    return acc;
  }

  // c1 T + c2 T -> (c1 + c2) T, where c is a scalar einsum coefficient.
  std::vector<NodeId> combine_like_terms(const std::vector<NodeId>& leaves) {
    std::vector<NodeId> order;
    std::map<NodeId, double> coef;
    for (NodeId leaf : leaves) {
      auto [base, c] = split_coefficient(leaf);
      auto [it, fresh] = coef.emplace(base, 0.0);
      if (fresh) order.push_back(base);
      it->second += c;
    }
    std::vector<NodeId> out;
    for (NodeId base : order) {
      const double c = coef.at(base);
      if (c == 0.0) continue;
      if (c == 1.0) {
        out.push_back(base);
        continue;
      }
      const std::string s = first_letters(shape(base).size());
      out.push_back(einsum({{"", constant(Tensor(c))}, {s, base}}, s));
    }
    return out;
  }

  std::pair<NodeId, double> split_coefficient(NodeId leaf) {
    const Node& n = b_.node(leaf);
    if (!n.is_prim(Op::kEinsum)) return {leaf, 1.0};
    const auto spec = EinsumSpec::parse(n.attrs.formula);
    std::vector<Term> rest;
    std::optional<double> c;
    for (std::size_t i = 0; i < n.args.size(); ++i) {
      const Node& a = b_.node(n.args[i]);
      if (!c && spec.inputs[i].empty() && a.is_constant()) {
        c = a.value->item();
      } else {
        rest.push_back({spec.inputs[i], n.args[i]});
      }
    }
    if (!c) return {leaf, 1.0};
    return {einsum(std::move(rest), spec.output), *c};
  }

  NodeId negate(NodeId x) {
    const std::string s = first_letters(shape(x).size());
    return einsum({{"", constant(Tensor(-1.0))}, {s, x}}, s);
  }

  NodeId unary(Op op, NodeId x) { return apply(op, {x}, {}); }

 private:
  Shape shape(NodeId id) const { return b_.node(id).shape; }

  Shape out_shape(Op op, const std::vector<NodeId>& args, const Attrs&) const {
    (void)op;
    return broadcast_shapes(shape(args[0]), shape(args[1]));
  }

  NodeId generic(Op op, const std::vector<NodeId>& args, const Attrs& attrs) {
    bool all_const = true;
    for (NodeId a : args) all_const = all_const && b_.node(a).is_constant();
    if (all_const) {
      std::vector<Tensor> values;
      for (NodeId a : args) values.push_back(*b_.node(a).value);
      Node probe;
      probe.kind = NodeKind::kPrim;
      probe.op = op;
      probe.attrs = attrs;
      try {
        Tensor v = apply_prim(probe, values);
        if (v.size() <= static_cast<std::size_t>(kMaxFoldElements)) return constant(std::move(v));
      } catch (const Error&) {
        // Leave out-of-domain constants symbolic.
      }
    }
    return b_.prim_id(op, args, attrs);
  }

  // Operand subscripts aligned to `target` under trailing broadcast; size-1
  // axes that broadcast get fresh summed letters from `fresh`.
  std::string aligned(const Shape& s, const Shape& target, char& fresh) const {
    const std::string out = first_letters(target.size());
    std::string subs;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::size_t j = target.size() - s.size() + i;
      subs += s[i] == target[j] ? out[j] : fresh++;
    }
    return subs;
  }

  NodeId multiply(NodeId a, NodeId b) {
    const Shape target = broadcast_shapes(shape(a), shape(b));
    const std::string out = first_letters(target.size());
    char fresh = static_cast<char>('a' + target.size());
    std::vector<Term> terms{{aligned(shape(a), target, fresh), a}, {aligned(shape(b), target, fresh), b}};
    add_ones_for_uncovered(terms, out, target);
    return einsum(std::move(terms), out);
  }

  NodeId broadcast(NodeId x, const Shape& target) {
    if (shape(x) == target) return x;
    const std::string out = first_letters(target.size());
    char fresh = static_cast<char>('a' + target.size());
    std::vector<Term> terms{{aligned(shape(x), target, fresh), x}};
    add_ones_for_uncovered(terms, out, target);
    return einsum(std::move(terms), out);
  }

  void add_ones_for_uncovered(std::vector<Term>& terms, const std::string& out, const Shape& target) {
    for (std::size_t j = 0; j < out.size(); ++j) {
      const bool covered = std::any_of(terms.begin(), terms.end(), [&](const Term& t) {
        return t.subs.find(out[j]) != std::string::npos;
      });
      if (!covered) terms.push_back({std::string(1, out[j]), constant(Tensor::ones({target[j]}))});
    }
  }

  NodeId power(NodeId x, NodeId p) {
    const Node& pn = b_.node(p);
    if (!pn.is_constant() || b_.node(x).is_constant()) return generic(Op::kPower, {x, p}, {});
    const Tensor pv = *pn.value;
    if (broadcast_shapes(shape(x), pv.shape()) != shape(x) || pv.size() == 0) {
      return generic(Op::kPower, {x, p}, {});
    }
    const double v = pv[0];
    if (!all_equal(pv, v)) return generic(Op::kPower, {x, p}, {});
    if (v == 0.5) return unary(Op::kSqrt, x);
    if (v == -0.5) return unary(Op::kReciprocal, unary(Op::kSqrt, x));
    if (v != std::round(v) || std::abs(v) > kMaxExpandedPower) return generic(Op::kPower, {x, p}, {});
    const int k = static_cast<int>(v);
    const std::string s = first_letters(shape(x).size());
    if (k == 0) return constant(Tensor::ones(shape(x)));
    std::vector<Term> copies(static_cast<std::size_t>(std::abs(k)), Term{s, x});
    NodeId prod = einsum(std::move(copies), s);
    return k > 0 ? prod : unary(Op::kReciprocal, prod);
  }

  // Scalar non-constant factors that multiply every summand of a polynomial node.
  std::set<NodeId> common_factors(NodeId id) {
    const Node& n = b_.node(id);
    std::set<NodeId> out;
    if (n.is_prim(Op::kEinsum)) {
      const auto spec = EinsumSpec::parse(n.attrs.formula);
      for (std::size_t i = 0; i < n.args.size(); ++i) {
        if (spec.inputs[i].empty() && !b_.node(n.args[i]).is_constant()) {
          out.insert(n.args[i]);
        } else {
          const auto inner = common_factors(n.args[i]);
          out.insert(inner.begin(), inner.end());
        }
      }
    } else if (n.is_prim(Op::kAdd)) {
      out = common_factors(n.args[0]);
      for (std::size_t i = 1; i < n.args.size() && !out.empty(); ++i) {
        const auto other = common_factors(n.args[i]);
        std::erase_if(out, [&](NodeId c) { return !other.contains(c); });
      }
    }
    return out;
  }

  // Rebuilds `id` with one copy of the common factor `s` removed.
  NodeId divide_out(NodeId id, NodeId s) {
    const Node n = b_.node(id);
    if (n.is_prim(Op::kAdd)) {
      std::vector<NodeId> parts;
      for (NodeId a : n.args) parts.push_back(divide_out(a, s));
      return add(parts, n.shape);
    }
    const auto spec = EinsumSpec::parse(n.attrs.formula);
    std::vector<Term> terms;
    bool removed = false;
    for (std::size_t k = 0; k < n.args.size(); ++k) {
      if (!removed && n.args[k] == s && spec.inputs[k].empty()) {
        removed = true;
        continue;
      }
      terms.push_back({spec.inputs[k], n.args[k]});
    }
    for (std::size_t k = 0; k < terms.size() && !removed; ++k) {
      if (common_factors(terms[k].id).contains(s)) {
        terms[k].id = divide_out(terms[k].id, s);
        removed = true;
      }
    }
    if (terms.empty()) return constant(Tensor::ones(n.shape));
    return einsum(std::move(terms), spec.output);
  }

  // Pulls a scalar factor shared by every summand out of inverse/log_det.
  NodeId matrix_fn(Op op, NodeId a) {
    if (b_.node(a).is_constant()) return generic(op, {a}, {});
    auto common = common_factors(a);
    if (op == Op::kLogDet) {
      // log_det(sM) = n log s + log_det(M) needs s > 0.
      std::erase_if(common, [&](NodeId c) {
        const Node& n = b_.node(c);
        if (n.is_input()) return !n.support || n.support->kind == SupportKind::kReal || n.support->kind == SupportKind::kInteger;
        return !(n.is_prim(Op::kExp) || n.is_prim(Op::kSqrt) || n.is_prim(Op::kLogistic));
      });
    }
    if (common.empty()) return b_.prim_id(op, {a});
    const NodeId s = *common.begin();
    NodeId inner = divide_out(a, s);
    const Shape full = shape(a);
    if (op == Op::kInverse) {
      const std::string letters = first_letters(full.size());
      return einsum({{"", unary(Op::kReciprocal, s)}, {letters, matrix_fn(op, inner)}}, letters);
    }
    const Shape batch(full.begin(), full.end() - 2);
    const double n = static_cast<double>(full.back());
    NodeId scaled_log = einsum({{"", constant(Tensor(n))}, {"", unary(Op::kLog, s)}}, "");
    return add({scaled_log, matrix_fn(op, inner)}, batch);
  }

  std::optional<std::vector<Term>> inline_operand(const std::vector<Term>& terms, std::size_t i,
                                                  const std::string& out) {
    const Node inner = b_.node(terms[i].id);
    const auto spec = EinsumSpec::parse(inner.attrs.formula);
    std::set<char> used(out.begin(), out.end());
    for (const auto& t : terms) used.insert(t.subs.begin(), t.subs.end());
    std::array<char, 128> rename{};
    for (std::size_t p = 0; p < spec.output.size(); ++p) {
      rename[static_cast<unsigned char>(spec.output[p])] = terms[i].subs[p];
    }
    for (const auto& s : spec.inputs) {
      for (char c : s) {
        auto& r = rename[static_cast<unsigned char>(c)];
        if (r != 0) continue;
        char f = 'a';
        while (f <= 'z' && used.contains(f)) ++f;
        if (f > 'z') return std::nullopt;
        used.insert(f);
        r = f;
      }
    }
    std::vector<Term> result;
    for (std::size_t k = 0; k < terms.size(); ++k) {
      if (k != i) {
        result.push_back(terms[k]);
        continue;
      }
      for (std::size_t q = 0; q < spec.inputs.size(); ++q) {
        std::string s = spec.inputs[q];
        for (char& c : s) c = rename[static_cast<unsigned char>(c)];
        result.push_back({s, inner.args[q]});
      }
    }
    return result;
  }

  const std::string& atom_name(NodeId id) {
    if (auto it = atom_names_.find(id); it != atom_names_.end()) return it->second;
    const Node n = b_.node(id);
    std::string name;
    if (n.is_input()) {
      name = n.name;
    } else {
      for (NodeId a : n.args) {
        const std::string& an = atom_name(a);
        if (!an.empty() && (name.empty() || an < name)) name = an;
      }
    }
    return atom_names_[id] = name;
  }

  // Sorts operands by (constant last, input name, structural hash, subscripts)
  // and renames indices by first appearance in output then operands.
  NodeId emit(std::vector<Term> terms, std::string out) {
    for (int pass = 0; pass < 4; ++pass) {
      auto key = [&](const Term& t) {
        const Node& n = b_.node(t.id);
        return std::tuple(n.is_constant(), atom_name(t.id), n.hash, t.subs);
      };
      std::stable_sort(terms.begin(), terms.end(),
                       [&](const Term& x, const Term& y) { return key(x) < key(y); });
      std::array<char, 128> rename{};
      char next = 'a';
      auto map = [&](std::string& s) {
        for (char& c : s) {
          auto& r = rename[static_cast<unsigned char>(c)];
          if (r == 0) r = next++;
          c = r;
        }
      };
      std::string new_out = out;
      map(new_out);
      std::vector<Term> renamed = terms;
      for (auto& t : renamed) map(t.subs);
      const bool stable = new_out == out && std::equal(renamed.begin(), renamed.end(), terms.begin(),
                                                       [](const Term& x, const Term& y) {
                                                         return x.subs == y.subs && x.id == y.id;
                                                       });
      terms = std::move(renamed);
      out = std::move(new_out);
      if (stable) break;
    }
    std::string formula;
    std::vector<NodeId> ids;
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (i) formula += ',';
      formula += terms[i].subs;
      ids.push_back(terms[i].id);
    }
    Attrs attrs;
    attrs.formula = formula + "->" + out;
    return b_.prim_id(Op::kEinsum, std::move(ids), std::move(attrs));
  }

  GraphBuilder& b_;
  std::map<NodeId, std::string> atom_names_;
};

}  // namespace

TermGraph local_simplify(const TermGraph& g) {
  GraphBuilder b(true);
  Simplifier s(b);
  for (NodeId in : g.inputs()) {
    const Node& n = g.node(in);
    b.input(n.name, n.shape, n.support);
  }
  std::vector<NodeId> map(g.size());
  for (NodeId id : g.reachable()) {
    const Node& n = g.node(id);
    switch (n.kind) {
      case NodeKind::kInput:
        map[id.value] = b.input(n.name, n.shape, n.support).id();
        break;
      case NodeKind::kConstant:
        map[id.value] = b.constant(*n.value).id();
        break;
      case NodeKind::kPrim: {
        std::vector<NodeId> args;
        for (NodeId a : n.args) args.push_back(map[a.value]);
        map[id.value] = s.apply(n.op, args, n.attrs);
        break;
      }
    }
  }
  return cse(b.finish(b.wrap(map[g.output().value]), g.input_names()));
}

}  // namespace symconj
