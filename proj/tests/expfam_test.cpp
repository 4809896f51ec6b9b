// Apache License, Version 2.0, refer to LICENSE.txt
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <gtest/gtest.h>

#include "family_cases.hpp"
#include "symconj/expfam.hpp"

using namespace symconj;
using namespace symconj::testing;

// --- registry -------------------------------------------------------------------

TEST(Registry, HasSevenFamilies) {
  std::set<std::string> names;
  for (const auto& f : builtin_families().families()) names.insert(f->name());
  EXPECT_EQ(names, (std::set<std::string>{"Bernoulli", "Categorical", "Beta", "Gamma", "Dirichlet", "Normal",
                                          "MultivariateNormal"}));
}

TEST(Registry, Lookup) {
  const auto& reg = builtin_families();
  EXPECT_EQ(reg.lookup({Statistic::kLog}, SupportKind::kSimplex).name(), "Dirichlet");
  EXPECT_EQ(reg.lookup({Statistic::kIdentity, Statistic::kLog}, SupportKind::kNonnegative).name(), "Gamma");
  EXPECT_EQ(reg.lookup({Statistic::kLog, Statistic::kLog1pNeg}, SupportKind::kUnitInterval).name(), "Beta");
  EXPECT_EQ(reg.lookup({Statistic::kIdentity}, SupportKind::kBinary).name(), "Bernoulli");
  EXPECT_EQ(reg.lookup({Statistic::kOneHot}, SupportKind::kInteger).name(), "Categorical");
  EXPECT_EQ(reg.lookup({Statistic::kIdentity, Statistic::kSquare}, SupportKind::kReal).name(), "Normal");
  EXPECT_EQ(reg.lookup({Statistic::kIdentity, Statistic::kOuter}, SupportKind::kReal).name(), "MultivariateNormal");
  EXPECT_EQ(reg.lookup({Statistic::kIdentity, Statistic::kSquare, Statistic::kOuter}, SupportKind::kReal).name(),
            "MultivariateNormal");
  // Subset matches: linear in tau only is an exponential, i.e. Gamma.
  EXPECT_EQ(reg.lookup({Statistic::kIdentity}, SupportKind::kNonnegative).name(), "Gamma");
  EXPECT_EQ(reg.lookup({Statistic::kLog}, SupportKind::kUnitInterval).name(), "Beta");
  EXPECT_THROW(reg.lookup({Statistic::kLog}, SupportKind::kReal), NoFamilyError);
  EXPECT_THROW(reg.lookup({}, SupportKind::kReal), NoFamilyError);
  EXPECT_THROW(reg.by_name("Wishart"), NoFamilyError);
}

// --- fixed examples ------------------------------------------------------------------

TEST(LogNormalizer, Examples) {
  EXPECT_NEAR(log_normalizer(make_distribution(fam("Categorical"), {Tensor::vector({0, 0, 0})})).item(),
              std::log(3.0), 1e-15);
  EXPECT_NEAR(log_normalizer(make_distribution(fam("Gamma"), {Tensor(-1.0), Tensor(0.0)})).item(), 0.0, 1e-15);
}

TEST(LogNormalizer, BetaPosteriorMatchesQuadrature) {
  auto d = from_standard(fam("Beta"), {Tensor(60.5), Tensor(40.5)});
  const double a = log_normalizer(d).item();
  EXPECT_NEAR(a, std::log(boost::math::beta(60.5, 40.5)), 1e-10);
  // Integrate exp(<eta, t(x)>) directly; the integrand is scaled by exp(-A0)
  // with A0 the log-normalizer's rough size to stay in range.
  const double shift = -70.0;
  boost::math::quadrature::tanh_sinh<double> ts;
  const double q = ts.integrate(
      [&](double x) { return std::exp(59.5 * std::log(x) + 39.5 * std::log1p(-x) - shift); }, 0.0, 1.0);
  EXPECT_NEAR(a, std::log(q) + shift, 1e-8);
}

TEST(MeanParams, Examples) {
  auto cat = mean_params(make_distribution(fam("Categorical"), {Tensor::vector({0, 0})}))[0];
  EXPECT_DOUBLE_EQ(cat[0], 0.5);
  EXPECT_DOUBLE_EQ(cat[1], 0.5);
  auto n = mean_params(from_standard(fam("Normal"), {Tensor(0.0), Tensor(1.0)}));
  EXPECT_NEAR(n[0].item(), 0.0, 1e-15);
  EXPECT_NEAR(n[1].item(), 1.0, 1e-15);
}

TEST(MeanParams, BetaLogMomentsMatchMonteCarlo) {
  auto d = from_standard(fam("Beta"), {Tensor(60.5), Tensor(40.5)});
  const auto m = mean_params(d);
  Rng rng(7);
  const int n = 1000000;
  double s1 = 0, s2 = 0, q1 = 0, q2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = sample(d, rng).item();
    const double l1 = std::log(x), l2 = std::log1p(-x);
    s1 += l1;
    s2 += l2;
    q1 += l1 * l1;
    q2 += l2 * l2;
  }
  const double m1 = s1 / n, m2 = s2 / n;
  const double se1 = std::sqrt((q1 / n - m1 * m1) / n), se2 = std::sqrt((q2 / n - m2 * m2) / n);
  EXPECT_LT(std::abs(m1 - m[0].item()), 3 * se1);
  EXPECT_LT(std::abs(m2 - m[1].item()), 3 * se2);
}

TEST(Sample, NearDegenerateCategorical) {
  auto d = make_distribution(fam("Categorical"), {Tensor::vector({100, 0, 0})});
  Rng rng(1);
  int zero = 0;
  for (int i = 0; i < 10000; ++i) zero += sample(d, rng).item() == 0 ? 1 : 0;
  EXPECT_GT(zero / 10000.0, 0.999);
}

TEST(Sample, BetaPosteriorMean) {
  auto d = from_standard(fam("Beta"), {Tensor(60.5), Tensor(40.5)});
  Rng rng(2);
  const int n = 100000;
  double s = 0, q = 0;
  for (int i = 0; i < n; ++i) {
    const double x = sample(d, rng).item();
    s += x;
    q += x * x;
  }
  const double m = s / n, se = std::sqrt((q / n - m * m) / n);
  EXPECT_LT(std::abs(m - 60.5 / 101), 3 * se);
}

TEST(Sample, StandardBivariateNormalCovariance) {
  auto d = from_standard(fam("MultivariateNormal"), {Tensor::vector({0, 0}), Tensor::identity(2)});
  Rng rng(3);
  const int n = 100000;
  double c[2][2] = {{0, 0}, {0, 0}}, c2[2][2] = {{0, 0}, {0, 0}};
  for (int i = 0; i < n; ++i) {
    const Tensor z = sample(d, rng);
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        const double v = z[a] * z[b];
        c[a][b] += v;
        c2[a][b] += v * v;
      }
    }
  }
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const double m = c[a][b] / n, se = std::sqrt((c2[a][b] / n - m * m) / n);
      EXPECT_LT(std::abs(m - (a == b ? 1.0 : 0.0)), 3 * se) << a << "," << b;
    }
  }
}

TEST(Sample, DeterministicGivenSeed) {
  for (const auto& f : builtin_families().families()) {
    Rng r0(5);
    auto c = cases();
    auto it = std::find_if(c.begin(), c.end(), [&](const FamilyCase& fc) { return fc.name == f->name(); });
    ASSERT_NE(it, c.end());
    auto d = from_standard(*f, it->draw(r0));
    Rng a(9), b(9);
    EXPECT_EQ(sample(d, a), sample(d, b)) << f->name();
  }
}

TEST(LogProb, Examples) {
  EXPECT_NEAR(lp(make_distribution(fam("Bernoulli"), {Tensor(0.0)}), Tensor(1.0)), std::log(0.5), 1e-15);
  auto beta = from_standard(fam("Beta"), {Tensor(60.5), Tensor(40.5)});
  const double direct =
      59.5 * std::log(0.6) + 39.5 * std::log(0.4) - std::log(boost::math::beta(60.5, 40.5));
  EXPECT_NEAR(lp(beta, Tensor(0.6)), direct, 1e-10);
  auto cat = make_distribution(fam("Categorical"), {Tensor::vector({0.3, -1.2, 2.0, 0.1})});
  double total = 0;
  for (int k = 0; k < 4; ++k) total += std::exp(lp(cat, Tensor(static_cast<double>(k))));
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(LogProb, SupportViolations) {
  EXPECT_THROW(lp(from_standard(fam("Beta"), {Tensor(2.0), Tensor(2.0)}), Tensor(1.5)), DomainError);
  EXPECT_THROW(lp(from_standard(fam("Gamma"), {Tensor(2.0), Tensor(2.0)}), Tensor(-1.0)), DomainError);
  EXPECT_THROW(lp(make_distribution(fam("Bernoulli"), {Tensor(0.0)}), Tensor(0.5)), DomainError);
  EXPECT_THROW(lp(make_distribution(fam("Categorical"), {Tensor::vector({0, 0})}), Tensor(2.0)), DomainError);
  EXPECT_THROW(lp(from_standard(fam("Dirichlet"), {Tensor::vector({1, 1, 1})}), Tensor::vector({0.5, 0.5, 0.5})),
               DomainError);
}

TEST(Domain, Violations) {
  EXPECT_THROW(make_distribution(fam("Beta"), {Tensor(-1.0), Tensor(0.0)}), NaturalDomainError);
  EXPECT_THROW(make_distribution(fam("Gamma"), {Tensor(0.5), Tensor(0.0)}), NaturalDomainError);
  EXPECT_THROW(make_distribution(fam("Normal"), {Tensor(0.0), Tensor(0.0)}), NaturalDomainError);
  EXPECT_THROW(make_distribution(fam("Dirichlet"), {Tensor::vector({0, -2})}), NaturalDomainError);
  EXPECT_THROW(make_distribution(fam("Categorical"), {Tensor::vector({0, kInf})}), NaturalDomainError);
  EXPECT_THROW(make_distribution(fam("MultivariateNormal"),
                                 {Tensor::vector({0, 0}), Tensor::matrix(2, 2, {-0.5, 0, 0, 0.5})}),
               NaturalDomainError);
  // Asymmetric duplicates are symmetrized before the check.
  EXPECT_NO_THROW(make_distribution(fam("MultivariateNormal"),
                                    {Tensor::vector({0, 0}), Tensor::matrix(2, 2, {-0.5, 0.2, -0.2, -0.5})}));
}

TEST(Describe, Formats) {
  EXPECT_EQ(describe(from_standard(fam("Beta"), {Tensor(60.5), Tensor(40.5)})), "Beta(60.5, 40.5)");
  EXPECT_EQ(describe(from_standard(fam("Gamma"), {Tensor::vector({1, 2}), Tensor::vector({3, 4})})),
            "Gamma(shape=[1, 2], rate=[3, 4])");
}

TEST(Batched, ScalarParametersBroadcast) {
  auto d = make_distribution(fam("Gamma"), {Tensor::vector({-1, -2, -3}), Tensor(0.0)});
  EXPECT_EQ(d.batch_shape(), (Shape{3}));
  const Tensor a = log_normalizer(d);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a[i], -std::log(i + 1.0), 1e-14);
}

// --- table-wide properties -----------------------------------------------------------

TEST(FamilyTable, Normalization) {
  Rng rng(11);
  for (const auto& c : cases()) {
    const bool discrete = c.name == "Bernoulli" || c.name == "Categorical";
    const int draws = c.name == "Dirichlet" || c.name == "MultivariateNormal" ? 5 : 20;
    for (int i = 0; i < draws; ++i) {
      auto d = from_standard(fam(c.name), c.draw(rng));
      const double m = c.mass(d);
      EXPECT_NEAR(m, 1.0, discrete ? 1e-12 : 1e-4) << c.name << " draw " << i;
    }
  }
}

TEST(FamilyTable, MeanIsGradientOfLogNormalizer) {
  Rng rng(12);
  const double h = 1e-5;
  for (const auto& c : cases()) {
    for (int i = 0; i < 5; ++i) {
      auto d = from_standard(fam(c.name), c.draw(rng));
      const auto m = mean_params(d);
      for (std::size_t k = 0; k < d.eta.size(); ++k) {
        for (std::size_t j = 0; j < d.eta[k].size(); ++j) {
          auto up = d.eta, dn = d.eta;
          up[k].mutable_data()[j] += h;
          dn[k].mutable_data()[j] -= h;
          const double fd = (d.family->log_normalizer(up).item() - d.family->log_normalizer(dn).item()) / (2 * h);
          EXPECT_NEAR(m[k][j], fd, 1e-5 * std::max(1.0, std::abs(fd))) << c.name << " stat " << k << " elem " << j;
        }
      }
    }
  }
}

TEST(FamilyTable, SamplerMoments) {
  Rng rng(13);
  const int n = 100000;
  for (const auto& c : cases()) {
    for (int i = 0; i < 5; ++i) {
      auto d = from_standard(fam(c.name), c.draw(rng));
      const auto m = mean_params(d);
      std::vector<std::vector<double>> s(m.size()), q(m.size());
      for (std::size_t k = 0; k < m.size(); ++k) {
        s[k].assign(m[k].size(), 0.0);
        q[k].assign(m[k].size(), 0.0);
      }
      for (int r = 0; r < n; ++r) {
        const Tensor z = sample(d, rng);
        const auto t = d.family->statistic_values(z, d.eta);
        for (std::size_t k = 0; k < t.size(); ++k) {
          for (std::size_t j = 0; j < t[k].size(); ++j) {
            s[k][j] += t[k][j];
            q[k][j] += t[k][j] * t[k][j];
          }
        }
      }
      for (std::size_t k = 0; k < m.size(); ++k) {
        for (std::size_t j = 0; j < m[k].size(); ++j) {
          const double mean = s[k][j] / n;
          const double sd = std::sqrt(std::max(0.0, q[k][j] / n - mean * mean));
          EXPECT_LE(std::abs(mean - m[k][j]), 4 * sd / std::sqrt(n) + 1e-12)
              << c.name << " draw " << i << " stat " << k << " elem " << j;
        }
      }
    }
  }
}

TEST(FamilyTable, StandardRoundTrip) {
  Rng rng(14);
  for (const auto& c : cases()) {
    for (int i = 0; i < 5; ++i) {
      const auto p = c.draw(rng);
      const auto back = standard_params(from_standard(fam(c.name), p));
      ASSERT_EQ(back.size(), p.size());
      for (std::size_t k = 0; k < p.size(); ++k) {
        for (std::size_t j = 0; j < p[k].size(); ++j) {
          EXPECT_NEAR(back[k][j], p[k][j], 1e-12 * std::max(1.0, std::abs(p[k][j]))) << c.name;
        }
      }
    }
  }
}

TEST(FamilyTable, SymbolicLogNormalizerMatchesNumeric) {
  Rng rng(15);
  for (const auto& c : cases()) {
    auto d = from_standard(fam(c.name), c.draw(rng));
    GraphBuilder b;
    std::vector<Expr> eta;
    Env env;
    for (std::size_t k = 0; k < d.eta.size(); ++k) {
      const std::string name = "eta" + std::to_string(k);
      eta.push_back(b.input(name, d.eta[k].shape()));
      env.emplace(name, d.eta[k]);
    }
    TermGraph g = b.finish(d.family->log_normalizer_expr(eta));
    EXPECT_NEAR(evaluate(g, env).item(), log_normalizer(d).item(), 1e-10) << c.name;
  }
}

TEST(FamilyTable, SymbolicStatisticsMatchNumeric) {
  Rng rng(16);
  for (const auto& c : cases()) {
    auto d = from_standard(fam(c.name), c.draw(rng));
    const Tensor z = sample(d, rng);
    GraphBuilder b;
    Expr in = b.input("z", z.shape());
    const std::int64_t card = c.name == "Categorical" ? d.eta[0].shape().back() : 0;
    const auto exprs = d.family->statistic_exprs(in, card);
    const auto want = d.family->statistic_values(z, d.eta);
    ASSERT_EQ(exprs.size(), want.size());
    for (std::size_t k = 0; k < exprs.size(); ++k) {
      GraphBuilder b2;
      Expr in2 = b2.input("z", z.shape());
      TermGraph g = b2.finish(d.family->statistic_exprs(in2, card)[k]);
      const Tensor got = evaluate(g, {{"z", z}});
      ASSERT_EQ(got.shape(), want[k].shape()) << c.name;
      for (std::size_t j = 0; j < got.size(); ++j) EXPECT_NEAR(got[j], want[k][j], 1e-14) << c.name;
    }
  }
}
