// Apache License, Version 2.0, refer to LICENSE.txt
#include "symconj/conjugacy.hpp"

#include <algorithm>
#include <iostream>
#include <set>
#include <sstream>

#include "symconj/error.hpp"

namespace symconj {

namespace {

struct Operand {
  NodeId id;
  std::string subs;
};

// One summand of the canonical add-tree as an einsum over operands.
struct Term {
  NodeId node;
  std::vector<Operand> operands;
  std::string output;
};

std::string letters(std::size_t n, std::size_t offset = 0) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>('a' + offset + i));
  return s;
}

Term term_of(const TermGraph& g, NodeId leaf) {
  const Node& n = g.node(leaf);
  Term t{leaf, {}, {}};
  if (n.is_prim(Op::kEinsum)) {
    const auto spec = EinsumSpec::parse(n.attrs.formula);
    for (std::size_t i = 0; i < n.args.size(); ++i) t.operands.push_back({n.args[i], spec.inputs[i]});
    t.output = spec.output;
  } else {
    t.output = letters(n.shape.size());
    t.operands.push_back({leaf, t.output});
  }
  return t;
}

std::vector<Term> terms_of(const TermGraph& g) {
  std::vector<Term> out;
  for (const auto& m : monomials(g)) out.push_back(term_of(g, m.node));
  return out;
}

enum class FactorKind { kBare, kLog, kLog1pNeg, kOneHot, kOther };

bool is_negation_of(const TermGraph& g, NodeId id, NodeId var) {
  const Node& n = g.node(id);
  if (n.is_prim(Op::kNegate)) return n.args[0] == var;
  if (!n.is_prim(Op::kEinsum) || n.args.size() != 2) return false;
  const auto spec = EinsumSpec::parse(n.attrs.formula);
  for (int i = 0; i < 2; ++i) {
    const Node& c = g.node(n.args[i]);
    if (c.is_constant() && c.value->size() == 1 && c.value->data()[0] == -1.0 && spec.inputs[i].empty() &&
        n.args[1 - i] == var && spec.inputs[1 - i] == spec.output) {
      return true;
    }
  }
  return false;
}

FactorKind classify(const TermGraph& g, NodeId id, NodeId var) {
  if (id == var) return FactorKind::kBare;
  const Node& n = g.node(id);
  if (n.is_prim(Op::kLog) && n.args[0] == var) return FactorKind::kLog;
  if (n.is_prim(Op::kLog1p) && is_negation_of(g, n.args[0], var)) return FactorKind::kLog1pNeg;
  if (n.is_prim(Op::kOneHot) && n.args[0] == var) return FactorKind::kOneHot;
  return FactorKind::kOther;
}

std::string describe_node(const TermGraph& g, NodeId id) {
  const Node& n = g.node(id);
  if (n.is_input()) return n.name;
  if (n.is_constant()) return "const";
  std::string s(op_name(n.op));
  s += "(";
  for (std::size_t i = 0; i < n.args.size(); ++i) {
    if (i) s += ", ";
    s += describe_node(g, n.args[i]);
  }
  return s + ")";
}

// How one term uses one variable.
struct Use {
  Statistic kind;
  std::vector<std::size_t> operands;  // indices into Term::operands
  std::string subs;                   // subscripts of the statistic tensor
  NodeId atom;
};

struct VarScan {
  std::string name;
  NodeId input;
  Shape shape;
  std::int64_t depth = 0;  // one_hot depth seen in the graph
  std::vector<StatisticAtom> atoms;
  std::vector<std::string> atom_text;
  std::vector<NodeId> residual;

  StatisticSignature signature() const {
    StatisticSignature s;
    for (const auto& a : atoms) s.insert(a.kind);
    return s;
  }
};

struct Scan {
  const TermGraph* graph = nullptr;
  std::vector<Term> terms;
  std::vector<VarScan> vars;
  std::vector<std::vector<std::optional<Use>>> uses;  // [term][var]
};

void add_atom(const TermGraph& g, VarScan& v, NodeId node, Statistic kind) {
  for (const auto& a : v.atoms) {
    if (a.node == node && a.kind == kind) return;
  }
  v.atoms.push_back({node, kind});
  v.atom_text.push_back(kind == Statistic::kSquare || kind == Statistic::kOuter
                            ? std::string(statistic_name(kind)) + "(" + v.name + ")"
                            : describe_node(g, node));
}

Scan scan(const CanonicalForm& cf, const std::vector<std::string>& names) {
  const TermGraph& g = cf.graph;
  Scan s;
  s.graph = &g;
  s.terms = terms_of(g);
  std::vector<std::vector<bool>> dep;
  for (const auto& name : names) {
    auto id = g.find_input(name);
    if (!id) throw GraphError("no input named '" + name + "'");
    s.vars.push_back({name, *id, g.shape(*id), 0, {}, {}, {}});
    dep.push_back(g.depends_on(*id));
  }
  for (const Term& t : s.terms) {
    std::vector<std::optional<Use>> row(names.size());
    for (std::size_t v = 0; v < names.size(); ++v) {
      VarScan& var = s.vars[v];
      std::vector<std::size_t> idx;
      std::vector<FactorKind> kinds;
      bool residual = false;
      for (std::size_t i = 0; i < t.operands.size(); ++i) {
        const NodeId id = t.operands[i].id;
        if (!dep[v][id.value]) continue;
        if (id != var.input) {
          const auto deps = input_dependencies(g, id);
          if (deps.size() > 1) {
            std::string others;
            for (const auto& d : deps) {
              if (d != var.name) others += (others.empty() ? "" : ", ") + d;
            }
            throw ConjugacyError("atom " + describe_node(g, id) + " mixes '" + var.name + "' with " + others);
          }
        }
        const FactorKind k = classify(g, id, var.input);
        if (k == FactorKind::kOther) {
          if (std::find(var.residual.begin(), var.residual.end(), id) == var.residual.end()) {
            var.residual.push_back(id);
          }
          residual = true;
        }
        if (k == FactorKind::kOneHot) {
          const std::int64_t depth = g.node(id).attrs.depth;
          if (var.depth != 0 && var.depth != depth) {
            throw ConjugacyError("one_hot of '" + var.name + "' used with depths " + std::to_string(var.depth) +
                                 " and " + std::to_string(depth));
          }
          var.depth = depth;
        }
        idx.push_back(i);
        kinds.push_back(k);
      }
      if (idx.empty() || residual) continue;

      auto fail = [&](const std::string& why) {
        std::string atoms;
        for (std::size_t i : idx) atoms += (atoms.empty() ? "" : ", ") + describe_node(g, t.operands[i].id);
        throw ConjugacyError("log-joint is not multiaffine in the statistics of '" + var.name + "' (" + why +
                             "): term with " + atoms);
      };
      Use use;
      use.operands = idx;
      if (idx.size() == 1) {
        const Operand& op = t.operands[idx[0]];
        use.subs = op.subs;
        use.atom = op.id;
        switch (kinds[0]) {
          case FactorKind::kBare: use.kind = Statistic::kIdentity; break;
          case FactorKind::kLog: use.kind = Statistic::kLog; break;
          case FactorKind::kLog1pNeg: use.kind = Statistic::kLog1pNeg; break;
          case FactorKind::kOneHot: use.kind = Statistic::kOneHot; break;
          case FactorKind::kOther: break;
        }
      } else if (idx.size() == 2 && kinds[0] == FactorKind::kBare && kinds[1] == FactorKind::kBare) {
        const std::string& a = t.operands[idx[0]].subs;
        const std::string& b = t.operands[idx[1]].subs;
        use.atom = t.node;
        if (a == b) {
          use.kind = Statistic::kSquare;
          use.subs = a;
        } else if (a.substr(0, a.size() - 1) == b.substr(0, b.size() - 1)) {
          use.kind = Statistic::kOuter;
          use.subs = a + b.back();
        } else {
          fail("the product couples different batch elements");
        }
      } else {
        fail("degree above one");
      }
      add_atom(g, var, use.atom, use.kind);
      row[v] = use;
    }
    s.uses.push_back(std::move(row));
  }
  return s;
}

// Statistic inputs of one variable in the energy graph.
struct Layout {
  std::vector<Statistic> stats;
  std::vector<Shape> shapes;
  std::vector<std::string> names;

  std::optional<std::size_t> find(Statistic s) const {
    for (std::size_t i = 0; i < stats.size(); ++i) {
      if (stats[i] == s) return i;
    }
    return std::nullopt;
  }
};

Shape statistic_shape(Statistic s, const Shape& var_shape, std::int64_t depth) {
  Shape out = var_shape;
  if (s == Statistic::kOneHot) out.push_back(depth);
  if (s == Statistic::kOuter) out.push_back(var_shape.back());
  return out;
}

Layout raw_layout(const VarScan& v) {
  Layout l;
  for (Statistic s : v.signature()) {
    l.stats.push_back(s);
    l.shapes.push_back(statistic_shape(s, v.shape, v.depth));
    l.names.push_back(statistic_input_name(v.name, s));
  }
  return l;
}

Layout family_layout(const VarScan& v, const Family& f) {
  Layout l;
  l.stats = f.statistics();
  l.shapes = f.param_shapes(v.shape, v.depth);
  for (Statistic s : l.stats) l.names.push_back(statistic_input_name(v.name, s));
  return l;
}

char fresh_letter(const Term& t) {
  std::set<char> used(t.output.begin(), t.output.end());
  for (const auto& op : t.operands) used.insert(op.subs.begin(), op.subs.end());
  for (char c = 'a'; c <= 'z'; ++c) {
    if (!used.contains(c)) return c;
  }
  throw ContractionError("einsum uses every index letter");
}

// The log-joint with the statistics of the scanned variables replaced by
// inputs laid out as `layouts`.
TermGraph build_energy(const Scan& s, const std::vector<Layout>& layouts) {
  const TermGraph& g = *s.graph;
  for (const auto& v : s.vars) {
    if (!v.residual.empty()) {
      std::string atoms;
      for (NodeId id : v.residual) atoms += (atoms.empty() ? "" : ", ") + describe_node(g, id);
      throw NoFamilyError("unrecognized statistics of '" + v.name + "': " + atoms);
    }
  }
  GraphBuilder b;
  std::map<std::string, Expr> bind;
  std::vector<std::string> order;
  for (NodeId in : g.inputs()) {
    const Node& n = g.node(in);
    const bool target =
        std::any_of(s.vars.begin(), s.vars.end(), [&](const VarScan& v) { return v.name == n.name; });
    if (target) continue;
    bind.emplace(n.name, b.input(n.name, n.shape, n.support));
    order.push_back(n.name);
  }
  std::vector<std::vector<Expr>> stat_inputs(s.vars.size());
  for (std::size_t v = 0; v < s.vars.size(); ++v) {
    for (std::size_t k = 0; k < layouts[v].stats.size(); ++k) {
      stat_inputs[v].push_back(b.input(layouts[v].names[k], layouts[v].shapes[k]));
      order.push_back(layouts[v].names[k]);
    }
  }

  std::optional<Expr> total;
  for (std::size_t ti = 0; ti < s.terms.size(); ++ti) {
    const Term& t = s.terms[ti];
    std::vector<bool> replaced(t.operands.size(), false);
    std::vector<Expr> ops;
    std::vector<std::string> subs;
    Term scratch = t;
    for (std::size_t v = 0; v < s.vars.size(); ++v) {
      const auto& use = s.uses[ti][v];
      if (!use) continue;
      for (std::size_t i : use->operands) replaced[i] = true;
      const Layout& l = layouts[v];
      if (auto k = l.find(use->kind)) {
        ops.push_back(stat_inputs[v][*k]);
        subs.push_back(use->subs);
      } else if (use->kind == Statistic::kSquare && l.find(Statistic::kOuter)) {
        // z_i z_i read off the diagonal of the outer statistic.
        const char f = fresh_letter(scratch);
        scratch.output.push_back(f);
        const std::int64_t d = s.vars[v].shape.back();
        ops.push_back(stat_inputs[v][*l.find(Statistic::kOuter)]);
        subs.push_back(use->subs + f);
        ops.push_back(b.constant(Tensor::identity(d)));
        subs.push_back(std::string{use->subs.back(), f});
      } else {
        throw NoFamilyError("statistic " + std::string(statistic_name(use->kind)) + " of '" + s.vars[v].name +
                            "' has no slot in the matched family");
      }
    }
    for (std::size_t i = 0; i < t.operands.size(); ++i) {
      if (replaced[i]) continue;
      ops.push_back(b.import(g, bind, t.operands[i].id));
      subs.push_back(t.operands[i].subs);
    }
    Expr term = [&] {
      if (ops.size() == 1 && subs[0] == t.output) return ops[0];
      std::string formula;
      for (std::size_t i = 0; i < subs.size(); ++i) formula += (i ? "," : "") + subs[i];
      return einsum(formula + "->" + t.output, ops);
    }();
    total = total ? *total + term : term;
  }
  if (!total) total = b.constant(0.0);
  for (const auto& v : s.vars) {
    if (b.find_input(v.name)) throw GraphError("statistic replacement left '" + v.name + "' in the energy");
  }
  return b.finish(*total, order);
}

SupportType resolve_support(const TermGraph& g, const std::string& var, std::optional<SupportType> given) {
  auto id = g.find_input(var);
  if (!id) throw GraphError("no input named '" + var + "'");
  const auto& tag = g.node(*id).support;
  if (given) {
    if (tag && (tag->kind != given->kind ||
                (given->kind == SupportKind::kInteger && tag->cardinality != given->cardinality))) {
      std::cerr << "warning: support of '" << var << "' given as " << to_string(*given) << ", overriding the declared "
                << to_string(*tag) << "\n";
    }
    return *given;
  }
  return tag ? *tag : SupportType::real();
}

const Family& match_family(const VarScan& v, SupportType support) {
  try {
    return builtin_families().lookup(v.signature(), support.kind);
  } catch (const NoFamilyError&) {
    std::string atoms;
    for (const auto& a : v.atom_text) atoms += (atoms.empty() ? "" : ", ") + a;
    throw NoFamilyError("no family for '" + v.name + "' with support " + to_string(support) + " and statistics " +
                        signature_to_string(v.signature()) + "; atoms: " + atoms);
  }
}

void settle_depth(VarScan& v, SupportType support) {
  if (support.kind == SupportKind::kInteger && support.cardinality > 0) {
    if (v.depth != 0 && v.depth != support.cardinality) {
      throw ConjugacyError("'" + v.name + "' has cardinality " + std::to_string(support.cardinality) +
                           " but one_hot depth " + std::to_string(v.depth));
    }
    v.depth = support.cardinality;
  }
}

// A point of the support, for evaluating the (constant) base measure.
double log_base_constant(const Family& f, const VarScan& v) {
  std::vector<Tensor> eta;
  for (const auto& s : f.param_shapes(v.shape, v.depth)) eta.push_back(Tensor::zeros(s));
  return sum_all(f.log_base_measure(support_point(f.support(), v.shape), eta));
}

std::vector<TermGraph> gradients(const TermGraph& energy, const Layout& l) {
  std::vector<TermGraph> out;
  for (const auto& name : l.names) out.push_back(grad(energy, name));
  return out;
}

std::string input_name_at(const TermGraph& g, std::size_t argnum) {
  if (argnum >= g.inputs().size()) {
    throw GraphError("argnum " + std::to_string(argnum) + " out of range for " +
                     std::to_string(g.inputs().size()) + " inputs");
  }
  return g.node(g.inputs()[argnum]).name;
}

}  // namespace

std::string statistic_input_name(const std::string& var, Statistic s) {
  return "t_" + var + "_" + std::string(statistic_name(s));
}

StatisticSignature StatisticSet::signature() const {
  StatisticSignature s;
  for (const auto& a : atoms) s.insert(a.kind);
  return s;
}

StatisticSet find_sufficient_statistics(const CanonicalForm& cf, const std::string& var) {
  Scan s = scan(cf, {var});
  return {var, s.vars[0].atoms, s.vars[0].residual};
}

std::map<Statistic, TermGraph> extract_natural_parameters(const CanonicalForm& cf, const StatisticSet& stats) {
  Scan s = scan(cf, {stats.variable});
  const Layout l = raw_layout(s.vars[0]);
  const TermGraph energy = build_energy(s, {l});
  std::map<Statistic, TermGraph> out;
  auto grads = gradients(energy, l);
  for (std::size_t k = 0; k < l.stats.size(); ++k) out.emplace(l.stats[k], std::move(grads[k]));
  return out;
}

Distribution ConditionalFactory::operator()(const Env& env) const {
  std::vector<Tensor> eta;
  for (const auto& g : eta_) eta.push_back(evaluate(g, env));
  return make_distribution(*family_, std::move(eta));
}

Distribution ConditionalFactory::operator()(const std::vector<Tensor>& args) const {
  if (args.size() != arguments_.size()) {
    throw GraphError("conditional of '" + variable_ + "' takes " + std::to_string(arguments_.size()) +
                     " arguments, got " + std::to_string(args.size()));
  }
  Env env;
  for (std::size_t i = 0; i < args.size(); ++i) env.emplace(arguments_[i], args[i]);
  return (*this)(env);
}

ConditionalFactory complete_conditional(const TermGraph& log_joint, const std::string& var,
                                        std::optional<SupportType> support) {
  const SupportType sup = resolve_support(log_joint, var, support);
  const CanonicalForm cf = canonicalize(log_joint);
  Scan s = scan(cf, {var});
  settle_depth(s.vars[0], sup);
  const Family& f = match_family(s.vars[0], sup);
  const Layout l = family_layout(s.vars[0], f);
  const TermGraph energy = build_energy(s, {l});

  ConditionalFactory out;
  out.variable_ = var;
  out.family_ = &f;
  out.support_ = sup;
  for (const auto& name : log_joint.input_names()) {
    if (name != var) out.arguments_.push_back(name);
  }
  out.eta_ = gradients(energy, l);
  return out;
}

ConditionalFactory complete_conditional(const TermGraph& log_joint, std::size_t argnum,
                                        std::optional<SupportType> support) {
  return complete_conditional(log_joint, input_name_at(log_joint, argnum), support);
}

TermGraph marginalize(const TermGraph& log_joint, const std::string& var, std::optional<SupportType> support) {
  const SupportType sup = resolve_support(log_joint, var, support);
  const CanonicalForm cf = canonicalize(log_joint);
  Scan s = scan(cf, {var});
  settle_depth(s.vars[0], sup);
  const Family& f = match_family(s.vars[0], sup);
  const Layout l = family_layout(s.vars[0], f);
  const TermGraph energy = build_energy(s, {l});
  const auto eta_graphs = gradients(energy, l);

  GraphBuilder b;
  std::map<std::string, Expr> bind;
  std::vector<std::string> order;
  for (NodeId in : log_joint.inputs()) {
    const Node& n = log_joint.node(in);
    if (n.name == var) continue;
    bind.emplace(n.name, b.input(n.name, n.shape, n.support));
    order.push_back(n.name);
  }
  for (std::size_t k = 0; k < l.names.size(); ++k) bind.emplace(l.names[k], b.constant(Tensor::zeros(l.shapes[k])));
  Expr g0 = b.import(energy, bind);
  std::vector<Expr> eta;
  for (const auto& eg : eta_graphs) eta.push_back(b.import(eg, bind));
  // exp(<eta, t>) integrates to exp(A(eta)) / h for a constant base measure h.
  Expr out = g0 + f.log_normalizer_expr(eta) - log_base_constant(f, s.vars[0]);
  return canonicalize(b.finish(out, order)).graph;
}

TermGraph marginalize(const TermGraph& log_joint, std::size_t argnum, std::optional<SupportType> support) {
  return marginalize(log_joint, input_name_at(log_joint, argnum), support);
}

std::vector<Tensor> MultilinearRepr::statistics(std::size_t m, const Tensor& z) const {
  const LatentBlock& block = latents.at(m);
  std::vector<Tensor> out;
  for (const auto& fn : block.statistic_fns) out.push_back(evaluate(fn, {{block.name, z}}));
  return out;
}

MultilinearRepr multilinear_repr(const TermGraph& log_joint, const std::vector<std::string>& vars,
                                 const std::vector<std::optional<SupportType>>& supports) {
  if (!supports.empty() && supports.size() != vars.size()) {
    throw GraphError("multilinear_repr: " + std::to_string(supports.size()) + " supports for " +
                     std::to_string(vars.size()) + " variables");
  }
  const std::set<std::string> distinct(vars.begin(), vars.end());
  if (distinct.size() != vars.size()) throw GraphError("multilinear_repr: repeated variable");

  std::vector<SupportType> sup;
  for (std::size_t m = 0; m < vars.size(); ++m) {
    sup.push_back(resolve_support(log_joint, vars[m], supports.empty() ? std::nullopt : supports[m]));
  }
  const CanonicalForm cf = canonicalize(log_joint);
  Scan s = scan(cf, vars);
  std::vector<const Family*> fams;
  std::vector<Layout> layouts;
  for (std::size_t m = 0; m < vars.size(); ++m) {
    settle_depth(s.vars[m], sup[m]);
    fams.push_back(&match_family(s.vars[m], sup[m]));
    layouts.push_back(family_layout(s.vars[m], *fams.back()));
  }

  MultilinearRepr out;
  out.neg_energy = build_energy(s, layouts);
  for (const auto& name : log_joint.input_names()) {
    if (!distinct.contains(name)) out.observed.push_back(name);
  }
  for (std::size_t m = 0; m < vars.size(); ++m) {
    LatentBlock block;
    block.name = vars[m];
    block.support = sup[m];
    block.family = fams[m];
    block.shape = s.vars[m].shape;
    block.statistic_inputs = layouts[m].names;
    block.statistic_shapes = layouts[m].shapes;
    for (std::size_t k = 0; k < layouts[m].stats.size(); ++k) {
      GraphBuilder b;
      Expr z = b.input(vars[m], block.shape, sup[m]);
      block.statistic_fns.push_back(b.finish(fams[m]->statistic_exprs(z, s.vars[m].depth)[k]));
    }
    {
      GraphBuilder b;
      std::vector<Expr> eta;
      for (std::size_t k = 0; k < layouts[m].shapes.size(); ++k) {
        eta.push_back(b.input("eta" + std::to_string(k), layouts[m].shapes[k]));
      }
      block.lognorm_fn = b.finish(fams[m]->log_normalizer_expr(eta));
    }
    block.natural_parameters = gradients(out.neg_energy, layouts[m]);
    block.log_base = log_base_constant(*fams[m], s.vars[m]);
    out.latents.push_back(std::move(block));
  }
  return out;
}

}  // namespace symconj
