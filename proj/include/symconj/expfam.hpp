// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <memory>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "symconj/graph.hpp"
#include "symconj/support.hpp"
#include "symconj/tensor.hpp"

namespace symconj {

/// Statistic descriptors over a single variable z.
enum class Statistic {
  kIdentity,  // z
  kSquare,    // z * z, elementwise
  kOuter,     // z_i z_j within one event
  kLog,       // log z
  kLog1pNeg,  // log(1 - z)
  kOneHot,    // one_hot(z, K)
};

std::string_view statistic_name(Statistic s);

using StatisticSignature = std::set<Statistic>;

std::string signature_to_string(const StatisticSignature& sig);

using Rng = std::mt19937_64;

/// One tractable exponential family with a fixed natural-parameter convention.
/// Natural parameters are a list of tensors, one per entry of statistics(),
/// in that order. A family is batched: every parameter carries leading batch
/// axes, and functions that return "per batch element" tensors return the
/// batch shape.
class Family {
 public:
  virtual ~Family() = default;

  virtual const std::string& name() const = 0;
  virtual SupportKind support() const = 0;
  virtual const std::vector<Statistic>& statistics() const = 0;
  /// Number of trailing event axes of a value (0 scalar, 1 for Dirichlet/MVN).
  virtual std::size_t event_rank() const = 0;

  /// Parameter shapes for a value of the given shape; `cardinality` is the
  /// category count for Categorical and ignored elsewhere.
  virtual std::vector<Shape> param_shapes(const Shape& value_shape, std::int64_t cardinality) const = 0;
  virtual Shape batch_shape(const std::vector<Tensor>& eta) const = 0;
  /// Shape of one sample.
  virtual Shape value_shape(const std::vector<Tensor>& eta) const = 0;

  /// Throws NaturalDomainError when eta lies outside the natural domain.
  virtual void check_domain(const std::vector<Tensor>& eta) const = 0;
  /// A(eta) per batch element.
  virtual Tensor log_normalizer(const std::vector<Tensor>& eta) const = 0;
  /// E[t(z)] = grad A(eta), one tensor per statistic.
  virtual std::vector<Tensor> mean(const std::vector<Tensor>& eta) const = 0;
  virtual Tensor sample(const std::vector<Tensor>& eta, Rng& rng) const = 0;
  /// t(value), one tensor per statistic.
  virtual std::vector<Tensor> statistic_values(const Tensor& value, const std::vector<Tensor>& eta) const = 0;
  /// log h(value) per batch element. Throws DomainError outside the support.
  virtual Tensor log_base_measure(const Tensor& value, const std::vector<Tensor>& eta) const = 0;

  /// Sum over the batch of A(eta) as a graph of the eta expressions.
  virtual Expr log_normalizer_expr(const std::vector<Expr>& eta) const = 0;
  /// t(z) as graphs of a value expression.
  virtual std::vector<Expr> statistic_exprs(Expr z, std::int64_t cardinality) const = 0;

  virtual std::vector<std::string> standard_names() const = 0;
  virtual std::vector<Tensor> to_standard(const std::vector<Tensor>& eta) const = 0;
  virtual std::vector<Tensor> from_standard(const std::vector<Tensor>& params) const = 0;
};

/// Frozen table of the built-in families: Bernoulli, Categorical, Beta,
/// Gamma, Dirichlet, Normal (diagonal) and MultivariateNormal.
class FamilyRegistry {
 public:
  FamilyRegistry();
  const std::vector<std::unique_ptr<Family>>& families() const { return families_; }
  const Family& by_name(const std::string& name) const;
  /// Exact signature match first, then the smallest family whose statistics
  /// contain the signature (missing statistics get zero natural parameter).
  /// Throws NoFamilyError.
  const Family& lookup(const StatisticSignature& sig, SupportKind support) const;

 private:
  std::vector<std::unique_ptr<Family>> families_;
};

const FamilyRegistry& builtin_families();

struct Distribution {
  const Family* family = nullptr;
  std::vector<Tensor> eta;

  Shape batch_shape() const { return family->batch_shape(eta); }
};

/// Validates the domain and returns the distribution.
Distribution make_distribution(const Family& family, std::vector<Tensor> eta);
Distribution from_standard(const Family& family, const std::vector<Tensor>& params);

Tensor log_normalizer(const Distribution& d);
std::vector<Tensor> mean_params(const Distribution& d);
Tensor sample(const Distribution& d, Rng& rng);
/// <eta, t(value)> - A(eta) + log h(value), per batch element.
Tensor log_prob(const Distribution& d, const Tensor& value);
std::vector<Tensor> standard_params(const Distribution& d);
/// "Beta(60.5, 40.5)" for an unbatched distribution, named lists otherwise.
std::string describe(const Distribution& d);

/// A fixed value inside the support (ones, halves, uniform simplex rows or zeros).
Tensor support_point(SupportKind kind, const Shape& shape);

/// Draw from Gamma(shape, rate=1) (Marsaglia and Tsang).
double sample_gamma(double shape, Rng& rng);

}  // namespace symconj
