// Apache License, Version 2.0, refer to LICENSE.txt
#include "symconj/examples.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "symconj/error.hpp"

namespace symconj {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

Expr like(Expr x, double v) { return x.builder().constant(v); }

Tensor normal_tensor(const Shape& shape, Rng& rng, double loc = 0.0, double scale = 1.0) {
  std::normal_distribution<double> n(loc, scale);
  std::vector<double> v(static_cast<std::size_t>(num_elements(shape)));
  for (auto& x : v) x = n(rng);
  return Tensor(shape, std::move(v));
}

Tensor ones_like_count(std::int64_t n) { return Tensor::ones({n}); }

// --- the worked models ------------------------------------------------------------

ModelFixture beta_bernoulli() {
  ModelFixture f;
  f.name = "beta_bernoulli";
  f.description = "coin bias with a Beta prior and binomial counts";
  f.log_joint = build({{"counts_prob", {}, SupportType::unit_interval()},
                       {"n_heads", {}, SupportType::nonnegative()},
                       {"n_draws", {}, SupportType::nonnegative()},
                       {"prior_a", {}, SupportType::nonnegative()},
                       {"prior_b", {}, SupportType::nonnegative()}},
                      [](auto in) {
                        Expr p = in[0], heads = in[1], draws = in[2], a = in[3], b = in[4];
                        Expr lp = (a - 1.0) * log(p) + (b - 1.0) * log1p(-p);
                        lp = lp + heads * log(p) + (draws - heads) * log1p(-p);
                        return lp - log_gamma(a) - log_gamma(b) + log_gamma(a + b);
                      });
  f.latents = {"counts_prob"};
  f.supports = {SupportType::unit_interval()};
  f.families = {{"counts_prob", "Beta"}};
  f.data = {{"n_heads", Tensor(60.0)}, {"n_draws", Tensor(100.0)}, {"prior_a", Tensor(0.5)}, {"prior_b", Tensor(0.5)}};
  f.init = {{"counts_prob", Tensor(0.5)}};
  return f;
}

ModelFixture normal_gamma() {
  const std::int64_t n = 20, d = 3;
  ModelFixture f;
  f.name = "normal_gamma";
  f.description = "Bayesian linear regression with a normal-gamma prior";
  f.log_joint = build({{"tau", {}, SupportType::nonnegative()},
                       {"beta", {d}, SupportType::real()},
                       {"x", {n, d}, SupportType::real()},
                       {"y", {n}, SupportType::real()},
                       {"a", {}, SupportType::nonnegative()},
                       {"b", {}, SupportType::nonnegative()},
                       {"kappa", {}, SupportType::nonnegative()},
                       {"mu0", {d}, SupportType::real()}},
                      [](auto in) {
                        Expr tau = in[0], beta = in[1], x = in[2], y = in[3];
                        Expr a = in[4], b = in[5], kappa = in[6], mu0 = in[7];
                        Expr log_p_tau = logp::gamma(tau, a, b);
                        Expr log_p_beta = logp::normal(beta, mu0, reciprocal(sqrt(kappa * tau)));
                        Expr log_p_y = logp::normal(y, dot(x, beta), reciprocal(sqrt(tau)));
                        return log_p_tau + log_p_beta + log_p_y;
                      });
  f.latents = {"tau", "beta"};
  f.supports = {SupportType::nonnegative(), SupportType::real()};
  f.families = {{"tau", "Gamma"}, {"beta", "MultivariateNormal"}};
  f.seed = 3;
  Rng rng(f.seed);
  const Tensor x = normal_tensor({n, d}, rng);
  const Tensor beta = normal_tensor({d}, rng);
  const double tau = 4.0;
  Tensor y = einsum("nd,d->n", {x, beta});
  std::normal_distribution<double> noise(0.0, 1.0 / std::sqrt(tau));
  for (std::int64_t i = 0; i < n; ++i) y.mutable_data()[i] += noise(rng);
  f.data = {{"x", x}, {"y", y}, {"a", Tensor(2.0)}, {"b", Tensor(1.0)}, {"kappa", Tensor(0.5)},
            {"mu0", Tensor::zeros({d})}};
  f.init = {{"tau", Tensor(1.0)}, {"beta", Tensor::zeros({d})}};
  return f;
}

ModelFixture logistic_jj() {
  const std::int64_t n = 100, d = 5;
  ModelFixture f;
  f.name = "logistic_jj";
  f.description = "logistic regression under the Jaakkola-Jordan quadratic bound";
  f.log_joint = build({{"beta", {d}, SupportType::real()},
                       {"xi", {n}, SupportType::nonnegative()},
                       {"x", {n, d}, SupportType::real()},
                       {"y", {n}, SupportType::binary()}},
                      [](auto in) {
                        Expr beta = in[0], xi = in[1], x = in[2], y = in[3];
                        Expr log_prior = sum(-0.5 * square(beta) - kHalfLog2Pi);
                        Expr y_logits = (2.0 * y - 1.0) * dot(x, beta);
                        Expr lamda = (0.5 - logistic(xi)) / (2.0 * xi);
                        Expr bound = sum(-log(1.0 + exp(-xi)) + 0.5 * (y_logits - xi) +
                                         lamda * (square(y_logits) - square(xi)));
                        return log_prior + bound;
                      });
  f.latents = {"beta"};
  f.supports = {SupportType::real()};
  f.families = {{"beta", "MultivariateNormal"}};
  f.seed = 4;
  Rng rng(f.seed);
  const Tensor x = normal_tensor({n, d}, rng);
  const Tensor beta = normal_tensor({d}, rng);
  const Tensor logits = einsum("nd,d->n", {x, beta});
  std::vector<double> y(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::int64_t i = 0; i < n; ++i) y[i] = u(rng) < 1.0 / (1.0 + std::exp(-logits[i])) ? 1.0 : 0.0;
  f.data = {{"x", x}, {"y", Tensor::vector(y)}, {"xi", Tensor::ones({n})}};
  f.init = {{"beta", Tensor::zeros({d})}};
  return f;
}

ModelFixture kalman() {
  const std::int64_t t = 10;
  ModelFixture f;
  f.name = "kalman";
  f.description = "random-walk state-space model with Gaussian observations";
  f.log_joint = kalman_joint(t);
  f.latents = {"x"};
  f.supports = {SupportType::real()};
  f.families = {{"x", "MultivariateNormal"}};
  f.seed = 5;
  Rng rng(f.seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> y(t);
  double state = 0.0;
  for (std::int64_t i = 0; i < t; ++i) {
    state += n(rng);
    y[i] = state + n(rng);
  }
  f.data = {{"y", Tensor::vector(y)}, {"s0", Tensor(1.0)}, {"sx", Tensor(1.0)}, {"sy", Tensor(1.0)}};
  f.init = {{"x", Tensor::zeros({t})}};
  return f;
}

ModelFixture factor_analysis() {
  const std::int64_t n = 50, d = 10, k = 5;
  ModelFixture f;
  f.name = "factor_analysis";
  f.description = "linear factor model with Gaussian loadings and factors";
  f.log_joint = build({{"w", {d, k}, SupportType::real()},
                       {"z", {n, k}, SupportType::real()},
                       {"tau", {}, SupportType::nonnegative()},
                       {"x", {n, d}, SupportType::real()},
                       {"a", {}, SupportType::nonnegative()},
                       {"b", {}, SupportType::nonnegative()}},
                      [](auto in) {
                        Expr w = in[0], z = in[1], tau = in[2], x = in[3], a = in[4], b = in[5];
                        return logp::normal(w, 0.0, 1.0) + logp::normal(z, 0.0, 1.0) + logp::gamma(tau, a, b) +
                               logp::normal(x, einsum("nk,dk->nd", {z, w}), reciprocal(sqrt(tau)));
                      });
  f.latents = {"w", "z", "tau"};
  f.supports = {SupportType::real(), SupportType::real(), SupportType::nonnegative()};
  f.families = {{"w", "MultivariateNormal"}, {"z", "MultivariateNormal"}, {"tau", "Gamma"}};
  f.seed = 6;
  Rng rng(f.seed);
  const Tensor w = normal_tensor({d, k}, rng);
  const Tensor z = normal_tensor({n, k}, rng);
  Tensor x = einsum("nk,dk->nd", {z, w});
  std::normal_distribution<double> noise(0.0, 0.5);
  for (std::size_t i = 0; i < x.size(); ++i) x.mutable_data()[i] += noise(rng);
  f.data = {{"x", x}, {"a", Tensor(1.0)}, {"b", Tensor(1.0)}};
  f.init = {{"w", normal_tensor({d, k}, rng, 0.0, 0.1)}, {"z", normal_tensor({n, k}, rng, 0.0, 0.1)},
            {"tau", Tensor(1.0)}};
  return f;
}

}  // namespace

TermGraph gmm_joint(std::int64_t n, std::int64_t k, std::int64_t d) {
  return build({{"z", {n}, SupportType::integer(k)},
                {"pi", {k}, SupportType::simplex()},
                {"mu", {k, d}, SupportType::real()},
                {"tau", {k, d}, SupportType::nonnegative()},
                {"x", {n, d}, SupportType::real()},
                {"alpha", {}, SupportType::nonnegative()},
                {"sigma", {}, SupportType::nonnegative()},
                {"a", {}, SupportType::nonnegative()},
                {"b", {}, SupportType::nonnegative()}},
               [&](auto in) {
                 Expr z = in[0], pi = in[1], mu = in[2], tau = in[3], x = in[4];
                 Expr alpha = in[5], sigma = in[6], a = in[7], b = in[8];
                 GraphBuilder& bld = z.builder();
                 Expr ones_n = bld.constant(ones_like_count(n));
                 Expr ones_k = bld.constant(ones_like_count(k));
                 Expr oh = one_hot(z, k);
                 Expr x3 = einsum("nd,k->nkd", {x, ones_k});
                 Expr mu3 = einsum("kd,n->nkd", {mu, ones_n});
                 Expr tau3 = einsum("kd,n->nkd", {tau, ones_n});
                 Expr ll = 0.5 * log(tau3) - 0.5 * tau3 * square(x3 - mu3) - kHalfLog2Pi;
                 return logp::dirichlet(pi, alpha) + einsum("nk,k->", {oh, log(pi)}) +
                        logp::normal(mu, like(mu, 0.0), sigma) + logp::gamma(tau, a, b) +
                        einsum("nk,nkd->", {oh, ll});
               });
}

namespace {

ModelFixture gmm() {
  const std::int64_t n = 100, k = 3, d = 2;
  ModelFixture f;
  f.name = "gmm";
  f.description = "mixture of Gaussians with per-component diagonal precisions";
  f.log_joint = gmm_joint(n, k, d);
  f.latents = {"z", "pi", "mu", "tau"};
  f.supports = {SupportType::integer(k), SupportType::simplex(), SupportType::real(), SupportType::nonnegative()};
  f.families = {{"z", "Categorical"}, {"pi", "Dirichlet"}, {"mu", "Normal"}, {"tau", "Gamma"}};
  f.seed = 7;
  Rng rng(f.seed);
  const std::vector<double> centers = {-3.0, 0.0, 0.0, 3.0, 3.0, -1.0};
  std::uniform_int_distribution<int> pick(0, k - 1);
  std::normal_distribution<double> noise(0.0, 0.7);
  std::vector<double> x(n * d);
  for (std::int64_t i = 0; i < n; ++i) {
    const int c = pick(rng);
    for (std::int64_t j = 0; j < d; ++j) x[i * d + j] = centers[c * d + j] + noise(rng);
  }
  f.data = {{"x", Tensor({n, d}, x)}, {"alpha", Tensor(1.0)}, {"sigma", Tensor(5.0)}, {"a", Tensor(1.0)},
            {"b", Tensor(1.0)}};
  std::vector<double> z(n);
  for (auto& v : z) v = pick(rng);
  f.init = {{"z", Tensor::vector(z)},
            {"pi", Tensor::filled({k}, 1.0 / k)},
            {"mu", normal_tensor({k, d}, rng)},
            {"tau", Tensor::ones({k, d})}};
  return f;
}

// --- canonicalization stress graphs ------------------------------------------------

ModelFixture stress_polynomial() {
  ModelFixture f;
  f.name = "stress_polynomial";
  f.description = "nested products of sums that expand to a quadratic";
  f.log_joint = build({{"x", {3}, SupportType::real()}, {"A", {3, 3}, SupportType::real()}, {"c", {3}, SupportType::real()}},
                      [](auto in) {
                        Expr x = in[0], a = in[1], c = in[2];
                        Expr r = dot(a, x - c) + 0.5 * (x + c) - 1.0;
                        Expr q = (x + 1.0) * (x - 2.0) - (x - c) * (x + c);
                        return -0.5 * sum(square(r)) - 0.5 * sum(square(x)) + 0.1 * sum(q) - 0.2 * sum(x * c) +
                               3.0 * (sum(x - c) - sum(x) + sum(c));
                      });
  f.latents = {"x"};
  f.supports = {SupportType::real()};
  f.families = {{"x", "MultivariateNormal"}};
  f.seed = 8;
  Rng rng(f.seed);
  f.data = {{"A", normal_tensor({3, 3}, rng)}, {"c", normal_tensor({3}, rng)}};
  f.init = {{"x", Tensor::zeros({3})}};
  return f;
}

ModelFixture stress_log_chain() {
  ModelFixture f;
  f.name = "stress_log_chain";
  f.description = "logs of reciprocals, roots and powers of a precision";
  f.log_joint = build({{"tau", {}, SupportType::nonnegative()},
                       {"kappa", {}, SupportType::nonnegative()},
                       {"r", {4}, SupportType::real()}},
                      [](auto in) {
                        Expr tau = in[0], kappa = in[1], r = in[2];
                        Expr t1 = log(reciprocal(sqrt(tau * kappa)));
                        Expr t2 = log(pow(tau, 2.5)) - 2.0 * exp(log(tau));
                        Expr t3 = log(sqrt(tau) * kappa) - tau * sum(square(r)) * reciprocal(reciprocal(kappa));
                        Expr t4 = log(tau / kappa) + log(exp(kappa));
                        return t1 + t2 + t3 + t4;
                      });
  f.latents = {"tau"};
  f.supports = {SupportType::nonnegative()};
  f.families = {{"tau", "Gamma"}};
  f.seed = 9;
  Rng rng(f.seed);
  f.data = {{"kappa", Tensor(1.5)}, {"r", normal_tensor({4}, rng)}};
  f.init = {{"tau", Tensor(1.0)}};
  return f;
}

ModelFixture stress_gather() {
  const std::int64_t n = 6, k = 4;
  ModelFixture f;
  f.name = "stress_gather";
  f.description = "categorical gathers pushed through logs and merged one-hots";
  f.log_joint = build({{"z", {n}, SupportType::integer(k)},
                       {"pi", {k}, SupportType::simplex()},
                       {"theta", {k}, SupportType::real()},
                       {"alpha", {}, SupportType::nonnegative()}},
                      [&](auto in) {
                        Expr z = in[0], pi = in[1], theta = in[2], alpha = in[3];
                        Expr oh = one_hot(z, k);
                        Expr gathered = einsum("nk,k->n", {oh, pi});
                        return logp::dirichlet(pi, alpha) + sum(log(gathered)) +
                               einsum("nk,nk,k->", {oh, oh, theta}) -
                               0.5 * sum(square(einsum("nk,k->n", {oh, theta})));
                      });
  f.latents = {"z", "pi"};
  f.supports = {SupportType::integer(k), SupportType::simplex()};
  f.families = {{"z", "Categorical"}, {"pi", "Dirichlet"}};
  f.seed = 10;
  Rng rng(f.seed);
  f.data = {{"theta", normal_tensor({k}, rng)}, {"alpha", Tensor(2.0)}};
  f.init = {{"z", Tensor::vector({0, 1, 2, 3, 0, 1})}, {"pi", Tensor::filled({k}, 0.25)}};
  return f;
}

ModelFixture stress_coupled() {
  ModelFixture f;
  f.name = "stress_coupled";
  f.description = "two vector latents coupled through a shared residual";
  f.log_joint = build({{"u", {3}, SupportType::real()},
                       {"v", {2}, SupportType::real()},
                       {"B", {3, 2}, SupportType::real()},
                       {"c", {2}, SupportType::real()},
                       {"s", {}, SupportType::nonnegative()}},
                      [](auto in) {
                        Expr u = in[0], v = in[1], bm = in[2], c = in[3], s = in[4];
                        Expr r = einsum("ij,i->j", {bm, u}) + v - c;
                        return -0.5 * sum(square(u)) - 0.5 * sum(square(v)) -
                               0.5 * sum(square(r)) * exp(log(s)) / s - log(s) * 2.0;
                      });
  f.latents = {"u", "v"};
  f.supports = {SupportType::real(), SupportType::real()};
  f.families = {{"u", "MultivariateNormal"}, {"v", "Normal"}};
  f.seed = 11;
  Rng rng(f.seed);
  f.data = {{"B", normal_tensor({3, 2}, rng)}, {"c", normal_tensor({2}, rng)}, {"s", Tensor(2.0)}};
  f.init = {{"u", Tensor::zeros({3})}, {"v", Tensor::zeros({2})}};
  return f;
}

// Two-step pieces of the filter.
TermGraph log_p_x1_y1() {
  return build({{"x1", {}, SupportType::real()},
                {"y1", {}, SupportType::real()},
                {"x1_scale", {}, SupportType::nonnegative()},
                {"y1_scale", {}, SupportType::nonnegative()}},
               [](auto in) { return logp::normal(in[0], like(in[0], 0.0), in[2]) + logp::normal(in[1], in[0], in[3]); });
}

TermGraph log_p_xt_xtt_ytt() {
  return build({{"xt", {}, SupportType::real()},
                {"xtt", {}, SupportType::real()},
                {"ytt", {}, SupportType::real()},
                {"xt_prior_mean", {}, SupportType::real()},
                {"xt_prior_scale", {}, SupportType::nonnegative()},
                {"x_scale", {}, SupportType::nonnegative()},
                {"y_scale", {}, SupportType::nonnegative()}},
               [](auto in) {
                 return logp::normal(in[0], in[3], in[4]) + logp::normal(in[1], in[0], in[5]) +
                        logp::normal(in[2], in[1], in[6]);
               });
}

}  // namespace

namespace logp {

Expr normal(Expr x, Expr loc, Expr scale) {
  Expr elem = -0.5 * square((x - loc) / scale) - log(scale) - kHalfLog2Pi;
  const Shape shape = broadcast_shapes(broadcast_shapes(x.shape(), loc.shape()), scale.shape());
  if (elem.shape() != shape) elem = broadcast_to(elem, shape);
  return sum(elem);
}

Expr normal(Expr x, double loc, double scale) { return normal(x, like(x, loc), like(x, scale)); }

Expr gamma(Expr x, Expr shape, Expr rate) {
  return sum(shape * log(rate) - log_gamma(shape) + (shape - 1.0) * log(x) - rate * x);
}

Expr beta(Expr x, Expr a, Expr b) {
  return sum((a - 1.0) * log(x) + (b - 1.0) * log1p(-x) - log_gamma(a) - log_gamma(b) + log_gamma(a + b));
}

Expr dirichlet(Expr x, Expr concentration) {
  const double k = static_cast<double>(x.shape().back());
  Expr norm = log_gamma(k * concentration) - k * log_gamma(concentration);
  const double batch = static_cast<double>(num_elements(x.shape())) / k;
  return sum((concentration - 1.0) * log(x)) + batch * norm;
}

}  // namespace logp

TermGraph kalman_joint(std::int64_t steps) {
  return build({{"x", {steps}, SupportType::real()},
                {"y", {steps}, SupportType::real()},
                {"s0", {}, SupportType::nonnegative()},
                {"sx", {}, SupportType::nonnegative()},
                {"sy", {}, SupportType::nonnegative()}},
               [&](auto in) {
                 Expr x = in[0], y = in[1], s0 = in[2], sx = in[3], sy = in[4];
                 GraphBuilder& b = x.builder();
                 Tensor first = Tensor::zeros({steps});
                 first.mutable_data()[0] = 1.0;
                 Expr x1 = einsum("t,t->", {b.constant(first), x});
                 Expr out = logp::normal(x1, like(x, 0.0), s0) + logp::normal(y, x, sy);
                 if (steps > 1) {
                   Tensor diff = Tensor::zeros({steps - 1, steps});
                   for (std::int64_t t = 0; t + 1 < steps; ++t) {
                     diff.mutable_data()[t * steps + t] = -1.0;
                     diff.mutable_data()[t * steps + t + 1] = 1.0;
                   }
                   out = out + logp::normal(einsum("st,t->s", {b.constant(diff), x}), like(x, 0.0), sx);
                 }
                 return out;
               });
}

const std::vector<ModelFixture>& fixtures() {
  static const std::vector<ModelFixture> all = {
      beta_bernoulli(),    normal_gamma(),     logistic_jj(),   kalman(),         factor_analysis(),
      gmm(),               stress_polynomial(), stress_log_chain(), stress_gather(), stress_coupled(),
  };
  return all;
}

const ModelFixture& fixture(const std::string& name) {
  for (const auto& f : fixtures()) {
    if (f.name == name) return f;
  }
  throw GraphError("unknown fixture '" + name + "'");
}

KalmanFilter::KalmanFilter() {
  const TermGraph first = log_p_x1_y1();
  x1_given_y1_ = complete_conditional(first, "x1", SupportType::real());
  log_p_y1_ = marginalize(first, "x1", SupportType::real());
  const TermGraph log_p_xtt_ytt = marginalize(log_p_xt_xtt_ytt(), "xt", SupportType::real());
  log_p_ytt_ = marginalize(log_p_xtt_ytt, "xtt", SupportType::real());
  xtt_given_ytt_ = complete_conditional(log_p_xtt_ytt, "xtt", SupportType::real());
}

std::vector<std::pair<double, double>> KalmanFilter::filter(const std::vector<double>& y, double s0, double sx,
                                                            double sy) const {
  std::vector<std::pair<double, double>> out;
  if (y.empty()) return out;
  auto moments = [](const Distribution& d) {
    const auto p = standard_params(d);
    return std::pair{p[0].item(), p[1].item()};
  };
  out.push_back(moments(x1_given_y1_({{"y1", Tensor(y[0])}, {"x1_scale", Tensor(s0)}, {"y1_scale", Tensor(sy)}})));
  for (std::size_t t = 1; t < y.size(); ++t) {
    out.push_back(moments(xtt_given_ytt_({{"ytt", Tensor(y[t])},
                                          {"xt_prior_mean", Tensor(out.back().first)},
                                          {"xt_prior_scale", Tensor(out.back().second)},
                                          {"x_scale", Tensor(sx)},
                                          {"y_scale", Tensor(sy)}})));
  }
  return out;
}

double KalmanFilter::log_marginal(const std::vector<double>& y, double s0, double sx, double sy) const {
  if (y.empty()) return 0.0;
  const auto post = filter(y, s0, sx, sy);
  double total = evaluate(log_p_y1_, {{"y1", Tensor(y[0])}, {"x1_scale", Tensor(s0)}, {"y1_scale", Tensor(sy)}}).item();
  for (std::size_t t = 1; t < y.size(); ++t) {
    total += evaluate(log_p_ytt_, {{"ytt", Tensor(y[t])},
                                   {"xt_prior_mean", Tensor(post[t - 1].first)},
                                   {"xt_prior_scale", Tensor(post[t - 1].second)},
                                   {"x_scale", Tensor(sx)},
                                   {"y_scale", Tensor(sy)}})
                 .item();
  }
  return total;
}

Tensor xi_update(const Tensor& beta_mean, const Tensor& beta_second_moment, const Tensor& x) {
  const Tensor cov = map_binary(BinaryFn::kSubtract, beta_second_moment, einsum("i,j->ij", {beta_mean, beta_mean}));
  const Tensor spread = einsum("ij,ni,nj->n", {cov, x, x});
  const Tensor fit = einsum("nd,d->n", {x, beta_mean});
  std::vector<double> out(spread.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(std::max(spread[i] + fit[i] * fit[i], 0.0));
  return Tensor(spread.shape(), std::move(out));
}

std::vector<double> run_jaakkola_jordan(MeanFieldState& state, std::int64_t rounds, std::ostream* trace) {
  const LatentBlock& block = state.repr->latents.at(0);
  const auto& stats = block.family->statistics();
  const auto at = [&](Statistic s) {
    return static_cast<std::size_t>(std::find(stats.begin(), stats.end(), s) - stats.begin());
  };
  std::vector<double> out;
  for (std::int64_t r = 0; r < rounds; ++r) {
    state = cavi_update(std::move(state), 0);
    const auto& mu = state.mu[0];
    state.data.insert_or_assign("xi", xi_update(mu[at(Statistic::kIdentity)], mu[at(Statistic::kOuter)], state.data.at("x")));
    out.push_back(elbo(state));
    state.elbo_trace.push_back(out.back());
    if (trace) *trace << r + 1 << '\t' << std::setprecision(17) << out.back() << '\n';
  }
  return out;
}

}  // namespace symconj
