// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "symconj/expfam.hpp"

namespace symconj::testing {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline const Family& fam(const std::string& name) { return builtin_families().by_name(name); }

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline double lp(const Distribution& d, const Tensor& x) { return log_prob(d, x).item(); }

template <class F>
double gk(F f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 8, 1e-10);
}

// Random interior standard parameters and the total mass of exp(log_prob).
struct FamilyCase {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> draw;
  std::function<double(const Distribution&)> mass;
};

inline std::vector<FamilyCase> cases() {
  return {
      {"Bernoulli", [](Rng& r) { return std::vector<Tensor>{Tensor(uniform(r, 0.05, 0.95))}; },
       [](const Distribution& d) { return std::exp(lp(d, Tensor(0.0))) + std::exp(lp(d, Tensor(1.0))); }},
      {"Categorical",
       [](Rng& r) {
         std::vector<double> p(4);
         double s = 0;
         for (auto& v : p) s += (v = uniform(r, 0.1, 1.0));
         for (auto& v : p) v /= s;
         return std::vector<Tensor>{Tensor::vector(p)};
       },
       [](const Distribution& d) {
         double s = 0;
         for (int k = 0; k < 4; ++k) s += std::exp(lp(d, Tensor(static_cast<double>(k))));
         return s;
       }},
      {"Beta", [](Rng& r) { return std::vector<Tensor>{Tensor(uniform(r, 0.5, 5)), Tensor(uniform(r, 0.5, 5))}; },
       [](const Distribution& d) {
         boost::math::quadrature::tanh_sinh<double> ts;
         return ts.integrate([&](double x) { return std::exp(lp(d, Tensor(x))); }, 0.0, 1.0);
       }},
      {"Gamma", [](Rng& r) { return std::vector<Tensor>{Tensor(uniform(r, 0.5, 5)), Tensor(uniform(r, 0.5, 3))}; },
       [](const Distribution& d) {
         auto f = [&](double x) { return std::exp(lp(d, Tensor(x))); };
         boost::math::quadrature::tanh_sinh<double> ts;
         boost::math::quadrature::exp_sinh<double> es;
         return ts.integrate(f, 0.0, 1.0) + es.integrate(f, 1.0, kInf);
       }},
      {"Dirichlet",
       [](Rng& r) {
         return std::vector<Tensor>{Tensor::vector({uniform(r, 1, 5), uniform(r, 1, 5), uniform(r, 1, 5)})};
       },
       [](const Distribution& d) {
         return gk(
             [&](double x) {
               return gk(
                   [&](double y) {
                     const double z = 1 - x - y;
                     return z > 0 ? std::exp(lp(d, Tensor::vector({x, y, z}))) : 0.0;
                   },
                   0.0, 1 - x);
             },
             0.0, 1.0);
       }},
      {"Normal", [](Rng& r) { return std::vector<Tensor>{Tensor(uniform(r, -2, 2)), Tensor(uniform(r, 0.3, 2))}; },
       [](const Distribution& d) { return gk([&](double x) { return std::exp(lp(d, Tensor(x))); }, -kInf, kInf); }},
      {"MultivariateNormal",
       [](Rng& r) {
         const double a = uniform(r, -1, 1), b = uniform(r, -1, 1), c = uniform(r, -1, 1);
         // cov = L L^T + 0.5 I with L lower triangular (a, 0; b, c)
         Tensor cov = Tensor::matrix(2, 2, {a * a + 0.5, a * b, a * b, b * b + c * c + 0.5});
         return std::vector<Tensor>{Tensor::vector({uniform(r, -1, 1), uniform(r, -1, 1)}), cov};
       },
       [](const Distribution& d) {
         return gk([&](double x) { return gk([&](double y) { return std::exp(lp(d, Tensor::vector({x, y}))); },
                                             -kInf, kInf); },
                   -kInf, kInf);
       }},
  };
}

}  // namespace symconj::testing
