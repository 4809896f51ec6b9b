// Apache License, Version 2.0, refer to LICENSE.txt
#include "symconj/inference.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "symconj/error.hpp"

namespace symconj {

namespace {

std::vector<std::optional<SupportType>> padded(const std::vector<std::optional<SupportType>>& supports,
                                               std::size_t n) {
  if (supports.empty()) return std::vector<std::optional<SupportType>>(n);
  if (supports.size() != n) {
    throw GraphError(std::to_string(supports.size()) + " supports for " + std::to_string(n) + " latents");
  }
  return supports;
}

void check_data(const TermGraph& g, const std::vector<std::string>& latents, const Env& data) {
  for (const auto& name : g.input_names()) {
    if (std::find(latents.begin(), latents.end(), name) != latents.end()) continue;
    if (!data.contains(name)) throw GraphError("no value for observed input '" + name + "'");
  }
}

double inner(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double out = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      // Zero natural parameters pair with statistics that may be infinite.
      if (a[k][i] != 0) out += a[k][i] * b[k][i];
    }
  }
  return out;
}

Env energy_env(const MeanFieldState& s) {
  Env env = s.data;
  for (std::size_t m = 0; m < s.repr->latents.size(); ++m) {
    const LatentBlock& block = s.repr->latents[m];
    for (std::size_t k = 0; k < block.statistic_inputs.size(); ++k) {
      env.insert_or_assign(block.statistic_inputs[k], s.mu[m][k]);
    }
  }
  return env;
}

std::vector<Tensor> natural_parameters(const MeanFieldState& s, std::size_t m) {
  const Env env = energy_env(s);
  std::vector<Tensor> eta;
  for (const auto& g : s.repr->latents[m].natural_parameters) eta.push_back(evaluate(g, env));
  return eta;
}

void set_factor(MeanFieldState& s, std::size_t m, std::vector<Tensor> eta) {
  const LatentBlock& block = s.repr->latents[m];
  try {
    s.q[m] = make_distribution(*block.family, std::move(eta));
  } catch (const NaturalDomainError& e) {
    throw NaturalDomainError("update of '" + block.name + "': " + e.what());
  }
  s.mu[m] = mean_params(s.q[m]);
}

void emit(std::ostream* out, std::int64_t iter, double value) {
  if (out) *out << iter << '\t' << std::setprecision(17) << value << '\n';
}

}  // namespace

GibbsState make_gibbs_state(const TermGraph& log_joint, const std::vector<std::string>& latents,
                            const std::vector<std::optional<SupportType>>& supports, Env data, const Env& init,
                            std::uint64_t seed) {
  const auto sup = padded(supports, latents.size());
  auto model = std::make_shared<GibbsModel>();
  model->log_joint = log_joint;
  model->latents = latents;
  for (const auto& name : latents) data.erase(name);
  check_data(log_joint, latents, data);
  model->data = std::move(data);

  GibbsState state;
  for (std::size_t m = 0; m < latents.size(); ++m) {
    model->factories.push_back(complete_conditional(log_joint, latents[m], sup[m]));
    const auto it = init.find(latents[m]);
    if (it != init.end()) {
      state.values.emplace(latents[m], it->second);
    } else {
      const Node& n = log_joint.node(*log_joint.find_input(latents[m]));
      state.values.emplace(latents[m], support_point(model->factories.back().support().kind, n.shape));
    }
  }
  state.model = std::move(model);
  state.rng.seed(seed);
  return state;
}

GibbsState gibbs_sweep(GibbsState state) {
  const GibbsModel& model = *state.model;
  for (std::size_t m = 0; m < model.latents.size(); ++m) {
    Env env = model.data;
    for (const auto& [name, value] : state.values) {
      if (name != model.latents[m]) env.emplace(name, value);
    }
    state.values.insert_or_assign(model.latents[m], sample(model.factories[m](env), state.rng));
  }
  ++state.iteration;
  return state;
}

double log_joint_value(const GibbsState& state) {
  Env env = state.model->data;
  for (const auto& [name, value] : state.values) env.insert_or_assign(name, value);
  return evaluate(state.model->log_joint, env).item();
}

MeanFieldState make_mean_field_state(const TermGraph& log_joint, const std::vector<std::string>& latents,
                                     const std::vector<std::optional<SupportType>>& supports, Env data,
                                     const Env& init) {
  MeanFieldState s;
  s.repr = std::make_shared<const MultilinearRepr>(multilinear_repr(log_joint, latents, padded(supports, latents.size())));
  for (const auto& name : latents) data.erase(name);
  check_data(log_joint, latents, data);
  s.data = std::move(data);

  const auto& blocks = s.repr->latents;
  s.q.resize(blocks.size());
  s.mu.resize(blocks.size());
  for (std::size_t m = 0; m < blocks.size(); ++m) {
    const auto it = init.find(blocks[m].name);
    for (std::size_t k = 0; k < blocks[m].statistic_fns.size(); ++k) {
      s.mu[m].push_back(it == init.end() ? Tensor::zeros(blocks[m].statistic_shapes[k])
                                         : evaluate(blocks[m].statistic_fns[k], {{blocks[m].name, it->second}}));
    }
  }
  // All factors read the initial statistics, not each other's fresh means.
  std::vector<std::vector<Tensor>> eta;
  for (std::size_t m = 0; m < blocks.size(); ++m) eta.push_back(natural_parameters(s, m));
  for (std::size_t m = 0; m < blocks.size(); ++m) set_factor(s, m, std::move(eta[m]));
  s.elbo_trace.push_back(elbo(s));
  return s;
}

MeanFieldState cavi_update(MeanFieldState state, std::size_t m) {
  if (m >= state.q.size()) throw GraphError("no latent at index " + std::to_string(m));
  set_factor(state, m, natural_parameters(state, m));
  state.elbo_trace.push_back(elbo(state));
  return state;
}

MeanFieldState cavi_sweep(MeanFieldState state) {
  for (std::size_t m = 0; m < state.q.size(); ++m) state = cavi_update(std::move(state), m);
  return state;
}

double elbo(const MeanFieldState& state) {
  double out = evaluate(state.repr->neg_energy, energy_env(state)).item();
  for (std::size_t m = 0; m < state.q.size(); ++m) {
    const LatentBlock& block = state.repr->latents[m];
    out += sum_all(log_normalizer(state.q[m])) - inner(state.q[m].eta, state.mu[m]) - block.log_base;
  }
  return out;
}

std::vector<double> run_gibbs(GibbsState& state, const RunConfig& config) {
  std::vector<double> trace;
  for (std::int64_t i = 0; i < config.max_iters; ++i) {
    state = gibbs_sweep(std::move(state));
    trace.push_back(log_joint_value(state));
    emit(config.trace, i + 1, trace.back());
  }
  return trace;
}

std::vector<double> run_cavi(MeanFieldState& state, const RunConfig& config) {
  std::vector<double> trace;
  double previous = state.elbo_trace.back();
  for (std::int64_t i = 0; i < config.max_iters; ++i) {
    state = cavi_sweep(std::move(state));
    const double value = state.elbo_trace.back();
    trace.push_back(value);
    emit(config.trace, i + 1, value);
    if (std::abs(value - previous) < config.tolerance * std::max(1.0, std::abs(value))) break;
    previous = value;
  }
  return trace;
}

}  // namespace symconj
