// Apache License, Version 2.0, refer to LICENSE.txt
#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "symconj/tensor.hpp"
#include "test_util.hpp"

using namespace symconj;
using symconj::testing::random_tensor;

namespace {

// Brute-force einsum: enumerate every joint assignment of all indices.
Tensor naive_einsum(const std::string& formula, const std::vector<Tensor>& ops) {
  auto spec = EinsumSpec::parse(formula);
  std::map<char, std::int64_t> ext;
  for (std::size_t k = 0; k < ops.size(); ++k) {
    for (std::size_t p = 0; p < spec.inputs[k].size(); ++p) ext[spec.inputs[k][p]] = ops[k].shape()[p];
  }
  std::vector<char> letters;
  for (auto& [c, e] : ext) letters.push_back(c);
  Shape out_shape;
  for (char c : spec.output) out_shape.push_back(ext[c]);
  Tensor out = Tensor::zeros(out_shape);
  std::map<char, std::int64_t> val;
  std::int64_t total = 1;
  for (char c : letters) total *= ext[c];
  for (std::int64_t f = 0; f < total; ++f) {
    std::int64_t rem = f;
    for (auto it = letters.rbegin(); it != letters.rend(); ++it) {
      val[*it] = rem % ext[*it];
      rem /= ext[*it];
    }
    double prod = 1;
    for (std::size_t k = 0; k < ops.size(); ++k) {
      auto st = ops[k].strides();
      std::int64_t off = 0;
      for (std::size_t p = 0; p < spec.inputs[k].size(); ++p) off += val[spec.inputs[k][p]] * st[p];
      prod *= ops[k][static_cast<std::size_t>(off)];
    }
    auto st = out.strides();
    std::int64_t off = 0;
    for (std::size_t p = 0; p < spec.output.size(); ++p) off += val[spec.output[p]] * st[p];
    out.mutable_data()[static_cast<std::size_t>(off)] += prod;
  }
  return out;
}

void expect_close(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "flat " << i;
}

}  // namespace

TEST(Einsum, IdentityContraction) {
  auto r = einsum("i->i", {Tensor::vector({1, 2, 3})});
  EXPECT_EQ(r, Tensor::vector({1, 2, 3}));
}

TEST(Einsum, TraceOfIdentity) {
  EXPECT_DOUBLE_EQ(einsum("ii->", {Tensor::identity(3)}).item(), 3.0);
}

TEST(Einsum, MatrixProductMatchesLoopOracle) {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  Tensor c = einsum("ij,jk->ik", {a, b});
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 2; ++k) {
      double s = 0;
      for (int j = 0; j < 4; ++j) s += a.at({i, j}) * b.at({j, k});
      EXPECT_NEAR(c.at({i, k}), s, 1e-12);
    }
  }
}

TEST(Einsum, RandomFormulasMatchNaiveDefinition) {
  std::mt19937_64 rng(11);
  const std::string alphabet = "abcde";
  for (int trial = 0; trial < 200; ++trial) {
    int n_idx = 1 + static_cast<int>(rng() % 5);
    int n_ops = 1 + static_cast<int>(rng() % 4);
    std::map<char, std::int64_t> ext;
    for (int i = 0; i < n_idx; ++i) ext[alphabet[i]] = 1 + static_cast<std::int64_t>(rng() % 4);
    std::vector<std::string> subs;
    std::vector<Tensor> ops;
    std::string used;
    for (int k = 0; k < n_ops; ++k) {
      int r = static_cast<int>(rng() % 4);
      std::string s;
      Shape shape;
      for (int p = 0; p < r; ++p) {
        char c = alphabet[rng() % n_idx];
        s += c;
        shape.push_back(ext[c]);
        used += c;
      }
      subs.push_back(s);
      ops.push_back(random_tensor(shape, rng));
    }
    std::string out;
    for (char c : used) {
      if (out.find(c) == std::string::npos && rng() % 2) out += c;
    }
    std::string formula;
    for (std::size_t k = 0; k < subs.size(); ++k) formula += (k ? "," : "") + subs[k];
    formula += "->" + out;
    SCOPED_TRACE(formula);
    expect_close(einsum(formula, std::span<const Tensor>(ops)), naive_einsum(formula, ops), 1e-12);
  }
}

TEST(Einsum, OperandOrderIsIrrelevant) {
  std::mt19937_64 rng(3);
  Tensor a = random_tensor({2, 3}, rng), b = random_tensor({3, 4}, rng), c = random_tensor({4}, rng);
  auto r1 = einsum("ij,jk,k->i", {a, b, c});
  auto r2 = einsum("k,jk,ij->i", {c, b, a});
  expect_close(r1, r2, 1e-12);
}

TEST(Einsum, Errors) {
  EXPECT_THROW(einsum("ij,jk->ik", {Tensor::zeros({2, 3}), Tensor::zeros({4, 2})}), ContractionError);
  EXPECT_THROW(einsum("i->j", {Tensor::zeros({2})}), ContractionError);
  EXPECT_THROW(einsum("iJ->i", {Tensor::zeros({2, 2})}), ContractionError);
  EXPECT_THROW(einsum("i,i->", {Tensor::zeros({2})}), ContractionError);
  try {
    einsum("ij,jk->ik", {Tensor::zeros({2, 3}), Tensor::zeros({4, 2})});
  } catch (const ContractionError& e) {
    EXPECT_NE(std::string(e.what()).find("'j'"), std::string::npos);
  }
}

TEST(MapUnary, Examples) {
  auto l = map_unary(UnaryFn::kLog, Tensor::vector({1.0, std::exp(1.0)}));
  EXPECT_NEAR(l[0], 0.0, 1e-15);
  EXPECT_NEAR(l[1], 1.0, 1e-15);
  auto g = map_unary(UnaryFn::kLogGamma, Tensor::vector({1.0, 2.0, 5.0}));
  EXPECT_NEAR(g[0], 0.0, 1e-14);
  EXPECT_NEAR(g[1], 0.0, 1e-14);
  EXPECT_NEAR(g[2], std::log(24.0), 1e-13);
}

TEST(MapUnary, DigammaMatchesFiniteDifferenceOfLogGamma) {
  const double h = 1e-6, x = 3.0;
  double fd = (std::lgamma(x + h) - std::lgamma(x - h)) / (2 * h);
  EXPECT_NEAR(map_unary(UnaryFn::kDigamma, Tensor::vector({x}))[0], fd, 1e-5);
}

TEST(MapUnary, DomainErrorsReportFlatIndex) {
  try {
    map_unary(UnaryFn::kLog, Tensor::vector({1.0, 2.0, -1.0}));
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_EQ(e.flat_index(), 2u);
  }
  EXPECT_THROW(map_unary(UnaryFn::kLog1p, Tensor::vector({-1.0})), DomainError);
  EXPECT_THROW(map_unary(UnaryFn::kLogGamma, Tensor::vector({0.0})), DomainError);
  EXPECT_THROW(map_unary(UnaryFn::kDigamma, Tensor::vector({-2.0})), DomainError);
}

TEST(MapUnary, ExpInvertsLog) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 20.0);
  std::vector<double> v(50);
  for (auto& x : v) x = u(rng);
  Tensor t = Tensor::vector(v);
  expect_close(map_unary(UnaryFn::kExp, map_unary(UnaryFn::kLog, t)), t, 1e-12 * 20);
}

TEST(OneHot, Examples) {
  EXPECT_EQ(one_hot(Tensor::vector({0, 2}), 3), Tensor::matrix(2, 3, {1, 0, 0, 0, 0, 1}));
  EXPECT_EQ(one_hot(Tensor::scalar(1), 4), Tensor::vector({0, 1, 0, 0}));
  EXPECT_THROW(one_hot(Tensor::vector({3}), 3), EncodingError);
  EXPECT_THROW(one_hot(Tensor::vector({-1}), 3), EncodingError);
}

TEST(OneHot, EinsumGatherMatchesIndexing) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 7, k = 4;
    std::vector<double> z(n);
    for (auto& x : z) x = static_cast<double>(rng() % k);
    Tensor v = random_tensor({k}, rng);
    Tensor g = einsum("nk,k->n", {one_hot(Tensor::vector(z), k), v});
    for (int i = 0; i < n; ++i) EXPECT_EQ(g[i], v[static_cast<std::size_t>(z[i])]);
  }
}

TEST(OneHot, RowsAreExactBasisVectors) {
  Tensor h = one_hot(Tensor::vector({2, 0, 1, 1}), 3);
  for (int r = 0; r < 4; ++r) {
    int ones = 0;
    for (int c = 0; c < 3; ++c) {
      double x = h.at({r, c});
      EXPECT_TRUE(x == 0.0 || x == 1.0);
      ones += x == 1.0;
    }
    EXPECT_EQ(ones, 1);
  }
}

TEST(Logsumexp, Examples) {
  EXPECT_NEAR(logsumexp(Tensor::vector({0, 0}), 0).item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(logsumexp(Tensor::vector({1000, 1000}), 0).item(), 1000 + std::log(2.0), 1e-12);
  EXPECT_EQ(logsumexp(Tensor::vector({-3.5}), 0).item(), -3.5);
}

TEST(Logsumexp, MatchesExtendedPrecisionSum) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({5}, rng, -10, 10);
    long double s = 0;
    for (std::size_t i = 0; i < 5; ++i) s += std::exp(static_cast<long double>(x[i]));
    EXPECT_NEAR(logsumexp(x, 0).item(), static_cast<double>(std::log(s)), 1e-12);
  }
}

TEST(Cholesky, Examples) {
  EXPECT_EQ(cholesky(Tensor::identity(3)), Tensor::identity(3));
  Tensor l = cholesky(Tensor::matrix(2, 2, {4, 2, 2, 3}));
  EXPECT_NEAR(l.at({0, 0}), 2, 1e-15);
  EXPECT_NEAR(l.at({0, 1}), 0, 1e-15);
  EXPECT_NEAR(l.at({1, 0}), 1, 1e-15);
  EXPECT_NEAR(l.at({1, 1}), std::sqrt(2.0), 1e-15);
}

TEST(Cholesky, ReconstructsRandomSpd) {
  std::mt19937_64 rng(17);
  Tensor a = random_tensor({5, 5}, rng);
  Tensor spd = einsum("ki,kj->ij", {a, a});
  for (int i = 0; i < 5; ++i) spd.mutable_data()[static_cast<std::size_t>(i * 5 + i)] += 5;
  Tensor l = cholesky(spd);
  expect_close(einsum("ik,jk->ij", {l, l}), spd, 1e-10);
  Tensor inv = spd_inverse(spd);
  expect_close(einsum("ij,jk->ik", {inv, spd}), Tensor::identity(5), 1e-10);
}

TEST(Cholesky, RejectsIndefinite) {
  try {
    cholesky(Tensor::matrix(2, 2, {1, 2, 2, 1}));
    FAIL();
  } catch (const FactorizationError& e) {
    EXPECT_EQ(e.pivot(), 1u);
  }
}

TEST(Broadcast, BinaryOps) {
  Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::vector({10, 20, 30});
  auto s = map_binary(BinaryFn::kAdd, a, b);
  EXPECT_EQ(s, Tensor::matrix(2, 3, {11, 22, 33, 14, 25, 36}));
  Tensor col({2, 1}, {2, 3});
  auto m = map_binary(BinaryFn::kMultiply, a, col);
  EXPECT_EQ(m, Tensor::matrix(2, 3, {2, 4, 6, 12, 15, 18}));
  EXPECT_THROW(map_binary(BinaryFn::kAdd, a, Tensor::vector({1, 2})), GraphError);
}
