// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "symconj/conjugacy.hpp"
#include "symconj/graph.hpp"
#include "symconj/inference.hpp"
#include "symconj/support.hpp"

namespace symconj {

/// Elementwise log densities as graph builders, summed over all elements.
namespace logp {
Expr normal(Expr x, Expr loc, Expr scale);
Expr normal(Expr x, double loc, double scale);
/// Gamma with shape/rate parameterization.
Expr gamma(Expr x, Expr shape, Expr rate);
Expr beta(Expr x, Expr a, Expr b);
/// Symmetric Dirichlet over the last axis of x.
Expr dirichlet(Expr x, Expr concentration);
}  // namespace logp

struct ModelFixture {
  std::string name;
  std::string description;
  TermGraph log_joint;
  /// Latents with conjugate complete conditionals, in update order.
  std::vector<std::string> latents;
  std::vector<SupportType> supports;
  /// Family expected for each latent's complete conditional.
  std::map<std::string, std::string> families;
  /// Desk-scale values for the non-latent inputs.
  Env data;
  /// Starting values for the latents (inside their supports).
  Env init;
  std::uint64_t seed = 0;
};

/// The bundled models: beta_bernoulli, normal_gamma, logistic_jj, kalman,
/// factor_analysis, gmm, then four synthetic canonicalization stress graphs.
const std::vector<ModelFixture>& fixtures();
/// Throws GraphError for an unknown name.
const ModelFixture& fixture(const std::string& name);

/// Full joint log p(x_{1:T}, y_{1:T}) of the random-walk state-space model,
/// inputs (x, y, s0, sx, sy).
TermGraph kalman_joint(std::int64_t steps);

/// Mixture of k Gaussians over n points in d dimensions with a symmetric
/// Dirichlet on the weights, Normal(0, sigma) means and Gamma(a, b)
/// per-dimension precisions. Inputs (z, pi, mu, tau, x, alpha, sigma, a, b).
TermGraph gmm_joint(std::int64_t n, std::int64_t k, std::int64_t d);

/// Forward filter driven by marginalize / complete_conditional artifacts
/// that are built once and reused at every step.
class KalmanFilter {
 public:
  KalmanFilter();
  /// log p(y_{1:T}); the first state has prior Normal(0, s0).
  double log_marginal(const std::vector<double>& y, double s0, double sx, double sy) const;
  /// (mean, standard deviation) of p(x_t | y_{1:t}) for every t.
  std::vector<std::pair<double, double>> filter(const std::vector<double>& y, double s0, double sx,
                                                double sy) const;

 private:
  TermGraph log_p_y1_;
  ConditionalFactory x1_given_y1_;
  TermGraph log_p_ytt_;
  ConditionalFactory xtt_given_ytt_;
};

/// Optimal Jaakkola-Jordan bound parameters: sqrt(E[(x_n . beta)^2]).
Tensor xi_update(const Tensor& beta_mean, const Tensor& beta_second_moment, const Tensor& x);

/// Variational logistic regression on a logistic_jj-shaped state: each round
/// updates q(beta), then refits xi. Appends the bound after the xi step to
/// state.elbo_trace and returns one bound value per round.
std::vector<double> run_jaakkola_jordan(MeanFieldState& state, std::int64_t rounds, std::ostream* trace = nullptr);

}  // namespace symconj
