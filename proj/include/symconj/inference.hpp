// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "symconj/conjugacy.hpp"
#include "symconj/expfam.hpp"

namespace symconj {

/// Everything a Gibbs chain shares across states.
struct GibbsModel {
  TermGraph log_joint;
  std::vector<std::string> latents;
  std::vector<ConditionalFactory> factories;
  /// Values of the non-latent inputs.
  Env data;
};

struct GibbsState {
  std::shared_ptr<const GibbsModel> model;
  /// Current value of every latent.
  Env values;
  Rng rng;
  std::int64_t iteration = 0;
};

/// Latents without an entry in `init` start at a fixed point of their support.
GibbsState make_gibbs_state(const TermGraph& log_joint, const std::vector<std::string>& latents,
                            const std::vector<std::optional<SupportType>>& supports, Env data, const Env& init,
                            std::uint64_t seed);

/// Samples every latent from its complete conditional, in declared order.
GibbsState gibbs_sweep(GibbsState state);

/// log p(z, x) at the state's current values.
double log_joint_value(const GibbsState& state);

struct MeanFieldState {
  std::shared_ptr<const MultilinearRepr> repr;
  Env data;
  /// q_m for each latent, in the order of repr->latents.
  std::vector<Distribution> q;
  /// Cached E_q[t_m(z_m)], one tensor per statistic.
  std::vector<std::vector<Tensor>> mu;
  /// ELBO after initialization, then after every coordinate update.
  std::vector<double> elbo_trace;
};

/// Each eta_m comes from one gradient evaluation at the statistics of the
/// initial points of the other latents. A latent missing from `init`
/// contributes zero statistics, which leaves its neighbours with their prior
/// natural parameters.
MeanFieldState make_mean_field_state(const TermGraph& log_joint, const std::vector<std::string>& latents,
                                     const std::vector<std::optional<SupportType>>& supports, Env data,
                                     const Env& init);

/// eta_m <- d neg_energy / d t_m at the mean parameters of the others.
/// Throws ConjugacyError when the result leaves the natural domain.
MeanFieldState cavi_update(MeanFieldState state, std::size_t m);
MeanFieldState cavi_sweep(MeanFieldState state);

/// g(mu) + sum_m [A(eta_m) - <eta_m, mu_m> - E log h_m].
double elbo(const MeanFieldState& state);

struct RunConfig {
  std::int64_t max_iters = 100;
  /// Writes "iter\tvalue" lines when set.
  std::ostream* trace = nullptr;
  /// CAVI stops once |delta ELBO| < tolerance * max(1, |ELBO|).
  double tolerance = 1e-8;
};

/// One log-joint value per sweep.
std::vector<double> run_gibbs(GibbsState& state, const RunConfig& config);
/// One ELBO value per sweep.
std::vector<double> run_cavi(MeanFieldState& state, const RunConfig& config);

}  // namespace symconj
