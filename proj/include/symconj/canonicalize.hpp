// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "symconj/graph.hpp"
#include "symconj/pattern.hpp"

namespace symconj {

/// One summand of a canonical add-tree.
struct Monomial {
  NodeId node;                     // einsum, constant, or bare atom
  std::vector<NodeId> coefficients;  // constant operands
  std::vector<NodeId> factors;       // non-constant operands (atoms or inputs)
};

struct CanonicalForm {
  TermGraph graph;
  std::vector<Monomial> monomials;
  std::vector<NodeId> atoms;  // inputs and nonlinear nodes used as factors
  int rule_applications = 0;
  std::vector<std::string> fired;  // rule names in firing order, one per application
};

struct CanonicalizeOptions {
  int max_rule_applications = 10000;
  /// When set, every intermediate graph is evaluated here and compared with
  /// the input graph (relative tolerance 1e-10); a mismatch throws RuleError.
  std::optional<Env> check_env;
  /// Called after each rewrite pass with the rule name and the new graph. A
  /// pass applies one rule at every place it matches.
  std::function<void(const std::string&, const TermGraph&)> on_step;
};

/// Ordered rewrite rules used by canonicalize(). The registry is frozen.
const std::vector<Rule>& canonical_rules();
/// The einsum-over-add distribution rule on its own.
const Rule& distribute_einsum_rule();

/// One input-to-output sweep of single-primitive simplifications (einsum
/// lowering of polynomial primitives, constant folding, nested-einsum
/// merging, add-tree flattening, canonical index naming), followed by cse.
TermGraph local_simplify(const TermGraph& g);

/// Rewrites a scalar graph into a sum of einsum monomials over atoms. Rules
/// are tried only on the polynomial part and at atom roots, never inside an
/// atom's arguments.
CanonicalForm canonicalize(const TermGraph& g, const CanonicalizeOptions& options = {});

/// Whether the output is an add-tree of einsums, constants and atoms, with
/// every einsum argument a constant, an input, or an atom. In the strict
/// form an atom is a nonlinear node depending on exactly one input; the
/// relaxed form admits nonlinear nodes of several inputs.
bool is_canonical(const TermGraph& g, bool relaxed = false);

/// Progress measure over the polynomial part of the graph (everything above
/// the atoms): sums feeding an einsum, plus polynomial primitives that are
/// neither einsum nor add. Zero on canonical graphs.
int termination_measure(const TermGraph& g);

/// Splits a canonical graph into its summands (without copying).
std::vector<Monomial> monomials(const TermGraph& g);

/// The inputs a node depends on, sorted by name.
std::vector<std::string> input_dependencies(const TermGraph& g, NodeId id);

}  // namespace symconj
