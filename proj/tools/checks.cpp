// Apache License, Version 2.0, refer to LICENSE.txt
#include "checks.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "symconj/canonicalize.hpp"
#include "symconj/conjugacy.hpp"
#include "symconj/error.hpp"
#include "symconj/examples.hpp"
#include "symconj/expfam.hpp"
#include "symconj/inference.hpp"

namespace symconj::cli {

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

CheckResult pass(std::string name) { return {std::move(name), true, ""}; }
CheckResult fail(std::string name, std::string detail) { return {std::move(name), false, std::move(detail)}; }

// Runs `body`, turning any library error into a failed result.
CheckResult guarded(const std::string& name, const std::function<CheckResult()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return fail(name, e.what());
  }
}

Env fixture_env(const ModelFixture& f) {
  Env env = f.data;
  for (const auto& [name, value] : f.init) env.insert_or_assign(name, value);
  return env;
}

std::vector<std::optional<SupportType>> optional_supports(const ModelFixture& f) {
  return {f.supports.begin(), f.supports.end()};
}

struct FamilyPoint {
  std::string family;
  std::vector<Tensor> standard;
};

std::vector<FamilyPoint> family_points() {
  return {
      {"Bernoulli", {Tensor(0.3)}},
      {"Categorical", {Tensor::vector({0.2, 0.3, 0.5})}},
      {"Beta", {Tensor(2.0), Tensor(3.0)}},
      {"Gamma", {Tensor(2.0), Tensor(1.5)}},
      {"Dirichlet", {Tensor::vector({1.0, 2.0, 3.0})}},
      {"Normal", {Tensor(0.5), Tensor(1.2)}},
      {"MultivariateNormal", {Tensor::vector({0.0, 1.0}), Tensor({2, 2}, {2.0, 0.3, 0.3, 1.0})}},
  };
}

}  // namespace

ModelFile read_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'", 0);
  std::stringstream buffer;
  buffer << in.rdbuf();
  ModelFile out;
  out.path = path;
  out.log_joint = parse_graph(buffer.str());
  std::istringstream lines(buffer.str());
  std::string line;
  for (int n = 1; std::getline(lines, line); ++n) {
    std::istringstream words(line);
    std::string hash, key, name, family;
    if (!(words >> hash >> key) || hash != "#" || key != "latent") continue;
    if (!(words >> name >> family)) throw ParseError("expected '# latent NAME FAMILY'", n);
    if (!out.log_joint.find_input(name)) throw ParseError("latent '" + name + "' is not an input", n);
    out.latents.emplace_back(name, family);
  }
  return out;
}

std::vector<CheckResult> check_rewrite() {
  std::vector<CheckResult> out;
  for (const auto& f : fixtures()) {
    const std::string name = "rewrite/" + f.name;
    out.push_back(guarded(name, [&] {
      CanonicalizeOptions options;
      options.check_env = fixture_env(f);
      const CanonicalForm cf = canonicalize(f.log_joint, options);
      if (!is_canonical(cf.graph, true)) return fail(name, "result is not canonical");
      if (termination_measure(cf.graph) != 0) return fail(name, "termination measure is not zero");
      return pass(name);
    }));
  }
  return out;
}

std::vector<CheckResult> check_expfam() {
  std::vector<CheckResult> out;
  for (const auto& point : family_points()) {
    const Family& family = builtin_families().by_name(point.family);
    const Distribution d = from_standard(family, point.standard);

    const std::string round = "expfam/" + point.family + "/standard_round_trip";
    out.push_back(guarded(round, [&] {
      const auto back = standard_params(d);
      for (std::size_t k = 0; k < back.size(); ++k) {
        for (std::size_t i = 0; i < back[k].size(); ++i) {
          if (std::abs(back[k][i] - point.standard[k][i]) > 1e-12) return fail(round, "parameter " + std::to_string(k));
        }
      }
      return pass(round);
    }));

    const std::string grad = "expfam/" + point.family + "/mean_is_gradient";
    out.push_back(guarded(grad, [&] {
      const auto mu = mean_params(d);
      const double h = 1e-5;
      for (std::size_t k = 0; k < d.eta.size(); ++k) {
        for (std::size_t i = 0; i < d.eta[k].size(); ++i) {
          auto up = d.eta, down = d.eta;
          up[k].mutable_data()[i] += h;
          down[k].mutable_data()[i] -= h;
          const double fd = (sum_all(family.log_normalizer(up)) - sum_all(family.log_normalizer(down))) / (2 * h);
          if (std::abs(fd - mu[k][i]) > 1e-5 * std::max(1.0, std::abs(fd))) {
            return fail(grad, "statistic " + std::to_string(k) + "[" + std::to_string(i) + "]: " + fmt(fd) + " vs " +
                                  fmt(mu[k][i]));
          }
        }
      }
      return pass(grad);
    }));

    const std::string moments = "expfam/" + point.family + "/sampler_moments";
    out.push_back(guarded(moments, [&] {
      Rng rng(17);
      const int n = 100000;
      const auto mu = mean_params(d);
      std::vector<std::vector<double>> sum(mu.size()), sq(mu.size());
      for (std::size_t k = 0; k < mu.size(); ++k) {
        sum[k].assign(mu[k].size(), 0.0);
        sq[k].assign(mu[k].size(), 0.0);
      }
      for (int s = 0; s < n; ++s) {
        const auto t = family.statistic_values(sample(d, rng), d.eta);
        for (std::size_t k = 0; k < t.size(); ++k) {
          for (std::size_t i = 0; i < t[k].size(); ++i) {
            sum[k][i] += t[k][i];
            sq[k][i] += t[k][i] * t[k][i];
          }
        }
      }
      for (std::size_t k = 0; k < mu.size(); ++k) {
        for (std::size_t i = 0; i < mu[k].size(); ++i) {
          const double m = sum[k][i] / n;
          const double se = std::sqrt(std::max(sq[k][i] / n - m * m, 0.0) / n);
          if (std::abs(m - mu[k][i]) > 4 * se + 1e-12) {
            return fail(moments, "statistic " + std::to_string(k) + "[" + std::to_string(i) + "]: " + fmt(m) + " vs " +
                                     fmt(mu[k][i]));
          }
        }
      }
      return pass(moments);
    }));
  }
  return out;
}

std::vector<CheckResult> check_conjugacy(const std::vector<ModelFile>& extra) {
  std::vector<CheckResult> out;
  for (const auto& f : fixtures()) {
    for (std::size_t m = 0; m < f.latents.size(); ++m) {
      const std::string& var = f.latents[m];
      const std::string name = "conjugacy/" + f.name + "/" + var;
      out.push_back(guarded(name, [&] {
        const auto factory = complete_conditional(f.log_joint, var, f.supports[m]);
        if (factory.family().name() != f.families.at(var)) {
          return fail(name, "family " + factory.family().name() + ", expected " + f.families.at(var));
        }
        // log p(x, z) = log p(x) + log p(z | x) at the fixture point.
        Env env = fixture_env(f);
        Env rest = env;
        rest.erase(var);
        const double joint = evaluate(f.log_joint, env).item();
        const double split = evaluate(marginalize(f.log_joint, var, f.supports[m]), rest).item() +
                             sum_all(log_prob(factory(rest), env.at(var)));
        if (std::abs(joint - split) > 1e-8 * std::max(1.0, std::abs(joint))) {
          return fail(name, "chain rule " + fmt(split) + " vs " + fmt(joint));
        }
        return pass(name);
      }));
    }
  }
  for (const auto& file : extra) {
    for (const auto& [var, family] : file.latents) {
      const std::string name = "conjugacy/" + file.path + "/" + var;
      out.push_back(guarded(name, [&] {
        const auto factory = complete_conditional(file.log_joint, var);
        if (factory.family().name() != family) {
          return fail(name, "family " + factory.family().name() + ", expected " + family);
        }
        return pass(name);
      }));
    }
  }
  return out;
}

std::vector<CheckResult> check_inference() {
  std::vector<CheckResult> out;
  for (const auto& f : fixtures()) {
    const std::string name = "inference/" + f.name + "/cavi_monotone";
    out.push_back(guarded(name, [&] {
      MeanFieldState s = make_mean_field_state(f.log_joint, f.latents, optional_supports(f), f.data, f.init);
      for (int i = 0; i < 20; ++i) s = cavi_sweep(std::move(s));
      const auto& t = s.elbo_trace;
      for (std::size_t i = 2; i < t.size(); ++i) {
        if (t[i] - t[i - 1] < -1e-9 * std::max(1.0, std::abs(t[i - 1]))) {
          return fail(name, "ELBO fell from " + fmt(t[i - 1]) + " to " + fmt(t[i]));
        }
      }
      return pass(name);
    }));
  }
  const auto& bb = fixture("beta_bernoulli");
  const std::string exact = "inference/beta_bernoulli/elbo_is_evidence";
  out.push_back(guarded(exact, [&] {
    MeanFieldState s = cavi_update(make_mean_field_state(bb.log_joint, bb.latents, {}, bb.data, bb.init), 0);
    const double evidence = evaluate(marginalize(bb.log_joint, bb.latents[0]), bb.data).item();
    if (std::abs(elbo(s) - evidence) > 1e-8) return fail(exact, fmt(elbo(s)) + " vs " + fmt(evidence));
    return pass(exact);
  }));
  const std::string gibbs = "inference/beta_bernoulli/gibbs_mean";
  out.push_back(guarded(gibbs, [&] {
    GibbsState s = make_gibbs_state(bb.log_joint, bb.latents, {}, bb.data, bb.init, 0);
    const int n = 10000;
    double total = 0;
    for (int i = 0; i < n; ++i) {
      s = gibbs_sweep(std::move(s));
      total += s.values.at(bb.latents[0]).item();
    }
    const double a = 60.5, b = 40.5;
    const double se = std::sqrt(a * b / ((a + b) * (a + b) * (a + b + 1)) / n);
    if (std::abs(total / n - a / (a + b)) > 3 * se) return fail(gibbs, "mean " + fmt(total / n));
    return pass(gibbs);
  }));
  return out;
}

}  // namespace symconj::cli
