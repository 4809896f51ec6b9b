// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "symconj/canonicalize.hpp"
#include "symconj/expfam.hpp"
#include "symconj/graph.hpp"
#include "symconj/support.hpp"

namespace symconj {

/// One sufficient-statistic atom of a variable in a canonical graph. For
/// product statistics (square, outer) `node` is the monomial einsum that
/// holds both copies of the variable.
struct StatisticAtom {
  NodeId node;
  Statistic kind;
};

struct StatisticSet {
  std::string variable;
  std::vector<StatisticAtom> atoms;
  /// Nonlinear nodes of the variable that match no known statistic.
  std::vector<NodeId> residual;

  StatisticSignature signature() const;
};

/// Walks the canonical add-tree and classifies every factor that depends on
/// `var`. Throws ConjugacyError when a monomial is not affine in the
/// statistics of `var` or an atom mixes `var` with other inputs.
StatisticSet find_sufficient_statistics(const CanonicalForm& cf, const std::string& var);

/// eta for each statistic of `stats`, as gradients of the log-joint with
/// respect to the statistic. Shapes: the variable's shape for identity,
/// square, log and log1p(-z); shape + [K] for one_hot; batch + [D, D] for
/// outer. The graphs keep the log-joint's inputs except the variable, plus
/// the statistic inputs (which they do not depend on).
std::map<Statistic, TermGraph> extract_natural_parameters(const CanonicalForm& cf, const StatisticSet& stats);

/// Compiled complete conditional of one variable.
class ConditionalFactory {
 public:
  const std::string& variable() const { return variable_; }
  const Family& family() const { return *family_; }
  SupportType support() const { return support_; }
  /// Names of the remaining arguments, in declared order.
  const std::vector<std::string>& arguments() const { return arguments_; }
  /// One graph per family statistic, in family order.
  const std::vector<TermGraph>& natural_parameters() const { return eta_; }

  Distribution operator()(const Env& env) const;
  /// Positional form over arguments().
  Distribution operator()(const std::vector<Tensor>& args) const;

 private:
  friend ConditionalFactory complete_conditional(const TermGraph&, const std::string&, std::optional<SupportType>);
  std::string variable_;
  const Family* family_ = nullptr;
  SupportType support_;
  std::vector<std::string> arguments_;
  std::vector<TermGraph> eta_;
};

/// `support` overrides the support tag of the input (with a warning on
/// conflict); without either the variable is taken to be real.
ConditionalFactory complete_conditional(const TermGraph& log_joint, const std::string& var,
                                        std::optional<SupportType> support = {});
ConditionalFactory complete_conditional(const TermGraph& log_joint, std::size_t argnum,
                                        std::optional<SupportType> support = {});

/// log of the integral of exp(log_joint) over `var`, as a canonical graph over
/// the remaining inputs (declared order kept).
TermGraph marginalize(const TermGraph& log_joint, const std::string& var, std::optional<SupportType> support = {});
TermGraph marginalize(const TermGraph& log_joint, std::size_t argnum, std::optional<SupportType> support = {});

struct LatentBlock {
  std::string name;
  SupportType support;
  const Family* family = nullptr;
  Shape shape;
  /// Inputs of neg_energy standing for this variable's statistics, in family order.
  std::vector<std::string> statistic_inputs;
  std::vector<Shape> statistic_shapes;
  /// t(z) per statistic; each graph has the single input `name`.
  std::vector<TermGraph> statistic_fns;
  /// A(eta) summed over the batch; inputs eta0, eta1, ...
  TermGraph lognorm_fn;
  /// d neg_energy / d statistic, one graph per statistic.
  std::vector<TermGraph> natural_parameters;
  /// Sum of log h(z) over the block; constant for every built-in family.
  double log_base = 0;
};

struct MultilinearRepr {
  /// The log-joint with each latent's statistics replaced by inputs. Inputs:
  /// the non-latent arguments in declared order, then every statistic input.
  TermGraph neg_energy;
  std::vector<LatentBlock> latents;
  std::vector<std::string> observed;

  /// Statistic values for latent m at value z.
  std::vector<Tensor> statistics(std::size_t m, const Tensor& z) const;
};

MultilinearRepr multilinear_repr(const TermGraph& log_joint, const std::vector<std::string>& vars,
                                 const std::vector<std::optional<SupportType>>& supports = {});

/// Name of the neg_energy input standing for statistic `s` of `var`.
std::string statistic_input_name(const std::string& var, Statistic s);

}  // namespace symconj
