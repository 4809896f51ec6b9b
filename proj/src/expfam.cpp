// Apache License, Version 2.0, refer to LICENSE.txt
#include "symconj/expfam.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>

#include "symconj/error.hpp"

namespace symconj {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double digamma(double x) { return boost::math::digamma(x); }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

std::string letters(std::size_t n, char first = 'a') {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<char>(first + i);
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

std::string fmt(const Tensor& t) {
  if (t.rank() == 0) return fmt(t.item());
  std::string s = "[";
  for (std::size_t i = 0; i < t.size(); ++i) s += (i ? ", " : "") + fmt(t[i]);
  return s + "]";
}

Shape drop_last(const Shape& s, std::size_t n) {
  if (s.size() < n) throw NaturalDomainError("natural parameter has too few axes");
  return Shape(s.begin(), s.end() - static_cast<std::ptrdiff_t>(n));
}

void require_finite(const Tensor& t, const std::string& family) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) throw NaturalDomainError(family + ": non-finite natural parameter");
  }
}

// --- elementwise families ---------------------------------------------------

// Families whose value, batch and every natural parameter share one shape.
class ScalarFamily : public Family {
 public:
  ScalarFamily(std::string name, SupportKind support, std::vector<Statistic> stats,
               std::vector<std::string> standard)
      : name_(std::move(name)), support_(support), stats_(std::move(stats)), standard_(std::move(standard)) {}

  const std::string& name() const override { return name_; }
  SupportKind support() const override { return support_; }
  const std::vector<Statistic>& statistics() const override { return stats_; }
  std::size_t event_rank() const override { return 0; }
  std::vector<std::string> standard_names() const override { return standard_; }

  std::vector<Shape> param_shapes(const Shape& value_shape, std::int64_t) const override {
    return std::vector<Shape>(stats_.size(), value_shape);
  }
  Shape batch_shape(const std::vector<Tensor>& eta) const override { return eta.at(0).shape(); }
  Shape value_shape(const std::vector<Tensor>& eta) const override { return eta.at(0).shape(); }

  void check_domain(const std::vector<Tensor>& eta) const override {
    check_arity(eta);
    for (std::size_t i = 0; i < eta[0].size(); ++i) {
      const auto e = at(eta, i);
      for (double v : e) {
        if (!std::isfinite(v)) throw NaturalDomainError(name_ + ": non-finite natural parameter");
      }
      if (auto msg = domain(e.data()); !msg.empty()) {
        throw NaturalDomainError(name_ + ": " + msg + " at element " + std::to_string(i));
      }
    }
  }

  Tensor log_normalizer(const std::vector<Tensor>& eta) const override {
    check_domain(eta);
    Tensor out = Tensor::zeros(eta[0].shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.mutable_data()[i] = A(at(eta, i).data());
    return out;
  }

  std::vector<Tensor> mean(const std::vector<Tensor>& eta) const override {
    check_domain(eta);
    std::vector<Tensor> out(stats_.size(), Tensor::zeros(eta[0].shape()));
    std::vector<double> m(stats_.size());
    for (std::size_t i = 0; i < eta[0].size(); ++i) {
      grad_A(at(eta, i).data(), m.data());
      for (std::size_t k = 0; k < m.size(); ++k) out[k].mutable_data()[i] = m[k];
    }
    return out;
  }

  Tensor sample(const std::vector<Tensor>& eta, Rng& rng) const override {
    check_domain(eta);
    Tensor out = Tensor::zeros(eta[0].shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.mutable_data()[i] = draw(at(eta, i).data(), rng);
    return out;
  }

  std::vector<Tensor> statistic_values(const Tensor& value, const std::vector<Tensor>&) const override {
    std::vector<Tensor> out(stats_.size(), Tensor::zeros(value.shape()));
    std::vector<double> t(stats_.size());
    for (std::size_t i = 0; i < value.size(); ++i) {
      stats(value[i], t.data());
      for (std::size_t k = 0; k < t.size(); ++k) out[k].mutable_data()[i] = t[k];
    }
    return out;
  }

  Tensor log_base_measure(const Tensor& value, const std::vector<Tensor>&) const override {
    Tensor out = Tensor::zeros(value.shape());
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (!in_support(value[i])) {
        throw DomainError(name_ + ": value " + fmt(value[i]) + " outside the support", i);
      }
      out.mutable_data()[i] = base();
    }
    return out;
  }

  std::vector<Tensor> to_standard(const std::vector<Tensor>& eta) const override {
    check_domain(eta);
    std::vector<Tensor> out(standard_.size(), Tensor::zeros(eta[0].shape()));
    std::vector<double> p(standard_.size());
    for (std::size_t i = 0; i < eta[0].size(); ++i) {
      to_std(at(eta, i).data(), p.data());
      for (std::size_t k = 0; k < p.size(); ++k) out[k].mutable_data()[i] = p[k];
    }
    return out;
  }

  std::vector<Tensor> from_standard(const std::vector<Tensor>& params) const override {
    if (params.size() != standard_.size()) throw NaturalDomainError(name_ + ": wrong number of parameters");
    Shape shape = params[0].shape();
    for (const auto& p : params) shape = broadcast_shapes(shape, p.shape());
    std::vector<Tensor> ps;
    for (const auto& p : params) ps.push_back(symconj::broadcast_to(p, shape));
    std::vector<Tensor> out(stats_.size(), Tensor::zeros(shape));
    std::vector<double> p(ps.size()), e(stats_.size());
    for (std::size_t i = 0; i < out[0].size(); ++i) {
      for (std::size_t k = 0; k < ps.size(); ++k) p[k] = ps[k][i];
      from_std(p.data(), e.data());
      for (std::size_t k = 0; k < e.size(); ++k) out[k].mutable_data()[i] = e[k];
    }
    return out;
  }

 protected:
  virtual std::string domain(const double* eta) const = 0;
  virtual double A(const double* eta) const = 0;
  virtual void grad_A(const double* eta, double* out) const = 0;
  virtual double draw(const double* eta, Rng& rng) const = 0;
  virtual void stats(double x, double* out) const = 0;
  virtual bool in_support(double x) const = 0;
  virtual double base() const { return 0.0; }
  virtual void to_std(const double* eta, double* out) const = 0;
  virtual void from_std(const double* p, double* out) const = 0;

 private:
  void check_arity(const std::vector<Tensor>& eta) const {
    if (eta.size() != stats_.size()) {
      throw NaturalDomainError(name_ + ": expected " + std::to_string(stats_.size()) + " natural parameters");
    }
    for (const auto& e : eta) {
      if (e.shape() != eta[0].shape()) throw NaturalDomainError(name_ + ": natural parameter shapes differ");
    }
  }

  std::vector<double> at(const std::vector<Tensor>& eta, std::size_t i) const {
    std::vector<double> e(eta.size());
    for (std::size_t k = 0; k < eta.size(); ++k) e[k] = eta[k][i];
    return e;
  }

  std::string name_;
  SupportKind support_;
  std::vector<Statistic> stats_;
  std::vector<std::string> standard_;
};

class Bernoulli final : public ScalarFamily {
 public:
  Bernoulli() : ScalarFamily("Bernoulli", SupportKind::kBinary, {Statistic::kIdentity}, {"p"}) {}

  Expr log_normalizer_expr(const std::vector<Expr>& eta) const override { return sum(log1p(exp(eta[0]))); }
  std::vector<Expr> statistic_exprs(Expr z, std::int64_t) const override { return {z}; }

 protected:
  std::string domain(const double*) const override { return {}; }
  double A(const double* e) const override { return softplus(e[0]); }
  void grad_A(const double* e, double* out) const override { out[0] = 1.0 / (1.0 + std::exp(-e[0])); }
  double draw(const double* e, Rng& rng) const override {
    const double p = 1.0 / (1.0 + std::exp(-e[0]));
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p ? 1.0 : 0.0;
  }
  void stats(double x, double* out) const override { out[0] = x; }
  bool in_support(double x) const override { return x == 0.0 || x == 1.0; }
  void to_std(const double* e, double* out) const override { out[0] = 1.0 / (1.0 + std::exp(-e[0])); }
  void from_std(const double* p, double* out) const override { out[0] = std::log(p[0]) - std::log1p(-p[0]); }
};

class Beta final : public ScalarFamily {
 public:
  Beta() : ScalarFamily("Beta", SupportKind::kUnitInterval, {Statistic::kLog, Statistic::kLog1pNeg}, {"a", "b"}) {}

  Expr log_normalizer_expr(const std::vector<Expr>& eta) const override {
    Expr a = eta[0] + 1.0, b = eta[1] + 1.0;
    return sum(log_gamma(a) + log_gamma(b) - log_gamma(a + b));
  }
  std::vector<Expr> statistic_exprs(Expr z, std::int64_t) const override { return {log(z), log1p(-z)}; }

 protected:
  std::string domain(const double* e) const override {
    return e[0] > -1.0 && e[1] > -1.0 ? "" : "needs both natural parameters > -1";
  }
  double A(const double* e) const override {
    const double a = e[0] + 1, b = e[1] + 1;
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  }
  void grad_A(const double* e, double* out) const override {
    const double a = e[0] + 1, b = e[1] + 1, s = digamma(a + b);
    out[0] = digamma(a) - s;
    out[1] = digamma(b) - s;
  }
  double draw(const double* e, Rng& rng) const override {
    const double x = sample_gamma(e[0] + 1, rng);
    const double y = sample_gamma(e[1] + 1, rng);
    return x / (x + y);
  }
  void stats(double x, double* out) const override {
    out[0] = std::log(x);
    out[1] = std::log1p(-x);
  }
  bool in_support(double x) const override { return x >= 0.0 && x <= 1.0; }
  void to_std(const double* e, double* out) const override {
    out[0] = e[0] + 1;
    out[1] = e[1] + 1;
  }
  void from_std(const double* p, double* out) const override {
    out[0] = p[0] - 1;
    out[1] = p[1] - 1;
  }
};

class Gamma final : public ScalarFamily {
 public:
  Gamma()
      : ScalarFamily("Gamma", SupportKind::kNonnegative, {Statistic::kIdentity, Statistic::kLog}, {"shape", "rate"}) {}

  Expr log_normalizer_expr(const std::vector<Expr>& eta) const override {
    Expr shape = eta[1] + 1.0;
    return sum(log_gamma(shape) - shape * log(-eta[0]));
  }
  std::vector<Expr> statistic_exprs(Expr z, std::int64_t) const override { return {z, log(z)}; }

 protected:
  std::string domain(const double* e) const override {
    if (!(e[0] < 0)) return "rate-side parameter must be < 0";
    if (!(e[1] > -1)) return "shape-side parameter must be > -1";
    return {};
  }
  double A(const double* e) const override {
    const double shape = e[1] + 1, rate = -e[0];
    return std::lgamma(shape) - shape * std::log(rate);
  }
  void grad_A(const double* e, double* out) const override {
    const double shape = e[1] + 1, rate = -e[0];
    out[0] = shape / rate;
    out[1] = digamma(shape) - std::log(rate);
  }
  double draw(const double* e, Rng& rng) const override { return sample_gamma(e[1] + 1, rng) / -e[0]; }
  void stats(double x, double* out) const override {
    out[0] = x;
    out[1] = std::log(x);
  }
  bool in_support(double x) const override { return x >= 0.0; }
  void to_std(const double* e, double* out) const override {
    out[0] = e[1] + 1;
    out[1] = -e[0];
  }
  void from_std(const double* p, double* out) const override {
    out[0] = -p[1];
    out[1] = p[0] - 1;
  }
};

class Normal final : public ScalarFamily {
 public:
  Normal()
      : ScalarFamily("Normal", SupportKind::kReal, {Statistic::kIdentity, Statistic::kSquare}, {"loc", "scale"}) {}

  Expr log_normalizer_expr(const std::vector<Expr>& eta) const override {
    return -0.25 * sum(eta[0] * eta[0] * reciprocal(eta[1])) - 0.5 * sum(log(-2.0 * eta[1]));
  }
  std::vector<Expr> statistic_exprs(Expr z, std::int64_t) const override { return {z, square(z)}; }

 protected:
  std::string domain(const double* e) const override { return e[1] < 0 ? "" : "square-side parameter must be < 0"; }
  double A(const double* e) const override { return -e[0] * e[0] / (4 * e[1]) - 0.5 * std::log(-2 * e[1]); }
  void grad_A(const double* e, double* out) const override {
    const double var = -0.5 / e[1], mu = e[0] * var;
    out[0] = mu;
    out[1] = mu * mu + var;
  }
  double draw(const double* e, Rng& rng) const override {
    const double var = -0.5 / e[1];
    return e[0] * var + std::sqrt(var) * std::normal_distribution<double>()(rng);
  }
  void stats(double x, double* out) const override {
    out[0] = x;
    out[1] = x * x;
  }
  bool in_support(double x) const override { return std::isfinite(x); }
  double base() const override { return -0.5 * kLog2Pi; }
  void to_std(const double* e, double* out) const override {
    const double var = -0.5 / e[1];
    out[0] = e[0] * var;
    out[1] = std::sqrt(var);
  }
  void from_std(const double* p, double* out) const override {
    const double prec = 1.0 / (p[1] * p[1]);
    out[0] = p[0] * prec;
    out[1] = -0.5 * prec;
  }
};

// --- families with an event axis ---------------------------------------------

// Shared helpers for a single parameter of shape batch + [K].
struct Rows {
  std::size_t count;
  std::size_t k;
};

Rows rows_of(const Tensor& t) {
  const std::size_t k = t.rank() == 0 ? 0 : static_cast<std::size_t>(t.shape().back());
  return {k == 0 ? 0 : t.size() / k, k};
}

class Categorical final : public Family {
 public:
  const std::string& name() const override { return name_; }
  SupportKind support() const override { return SupportKind::kInteger; }
  const std::vector<Statistic>& statistics() const override { return stats_; }
  std::size_t event_rank() const override { return 0; }

  std::vector<Shape> param_shapes(const Shape& value_shape, std::int64_t cardinality) const override {
    Shape s = value_shape;
    s.push_back(cardinality);
    return {s};
  }
  Shape batch_shape(const std::vector<Tensor>& eta) const override { return drop_last(eta.at(0).shape(), 1); }
  Shape value_shape(const std::vector<Tensor>& eta) const override { return batch_shape(eta); }

  void check_domain(const std::vector<Tensor>& eta) const override {
    if (eta.size() != 1 || eta[0].rank() == 0 || eta[0].shape().back() < 1) {
      throw NaturalDomainError("Categorical: expected one parameter with a category axis");
    }
    require_finite(eta[0], name_);
  }

  Tensor log_normalizer(const std::vector<Tensor>& eta) const override {
    check_domain(eta);
    return symconj::logsumexp(eta[0], eta[0].rank() - 1);
  }

  std::vector<Tensor> mean(const std::vector<Tensor>& eta) const override {
    check_domain(eta);
    Tensor p = eta[0];
    const auto [n, k] = rows_of(p);
    auto& d = p.mutable_data();
    for (std::size_t r = 0; r < n; ++r) {
      double* row = d.data() + r * k;
      const double m = *std::max_element(row, row + k);
      double z = 0;
      for (std::size_t j = 0; j < k; ++j) z += (row[j] = std::exp(row[j] - m));
      for (std::size_t j = 0; j < k; ++j) row[j] /= z;
    }
    return {p};
  }

  Tensor sample(const std::vector<Tensor>& eta, Rng& rng) const override {
    const Tensor p = mean(eta)[0];
    const auto [n, k] = rows_of(p);
    Tensor out = Tensor::zeros(batch_shape(eta));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t r = 0; r < n; ++r) {
      const double x = u(rng);
      double c = 0;
      std::size_t j = 0;
      for (; j + 1 < k; ++j) {
        c += p[r * k + j];
        if (x < c) break;
      }
      out.mutable_data()[r] = static_cast<double>(j);
    }
    return out;
  }

  std::vector<Tensor> statistic_values(const Tensor& value, const std::vector<Tensor>& eta) const override {
    return {symconj::one_hot(value, eta.at(0).shape().back())};
  }

  Tensor log_base_measure(const Tensor& value, const std::vector<Tensor>& eta) const override {
    const double k = static_cast<double>(eta.at(0).shape().back());
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double v = value[i];
      if (v != std::floor(v) || v < 0 || v >= k) {
        throw DomainError("Categorical: value " + fmt(v) + " outside {0.." + fmt(k - 1) + "}", i);
      }
    }
    return Tensor::zeros(value.shape());
  }

  Expr log_normalizer_expr(const std::vector<Expr>& eta) const override {
    return sum(logsumexp(eta[0], static_cast<std::int64_t>(eta[0].shape().size()) - 1));
  }
  std::vector<Expr> statistic_exprs(Expr z, std::int64_t cardinality) const override {
    return {one_hot(z, cardinality)};
  }

  std::vector<std::string> standard_names() const override { return {"probs"}; }
  std::vector<Tensor> to_standard(const std::vector<Tensor>& eta) const override { return mean(eta); }
  std::vector<Tensor> from_standard(const std::vector<Tensor>& params) const override {
    return {map_unary(UnaryFn::kLog, params.at(0))};
  }

 private:
  std::string name_ = "Categorical";
  std::vector<Statistic> stats_{Statistic::kOneHot};
};

class Dirichlet final : public Family {
 public:
  const std::string& name() const override { return name_; }
  SupportKind support() const override { return SupportKind::kSimplex; }
  const std::vector<Statistic>& statistics() const override { return stats_; }
  std::size_t event_rank() const override { return 1; }

  std::vector<Shape> param_shapes(const Shape& value_shape, std::int64_t) const override { return {value_shape}; }
  Shape batch_shape(const std::vector<Tensor>& eta) const override { return drop_last(eta.at(0).shape(), 1); }
  Shape value_shape(const std::vector<Tensor>& eta) const override { return eta.at(0).shape(); }

  void check_domain(const std::vector<Tensor>& eta) const override {
    if (eta.size() != 1 || eta[0].rank() == 0) throw NaturalDomainError("Dirichlet: expected one vector parameter");
    require_finite(eta[0], name_);
    for (std::size_t i = 0; i < eta[0].size(); ++i) {
      if (!(eta[0][i] > -1)) {
        throw NaturalDomainError("Dirichlet: natural parameter must be > -1 at element " + std::to_string(i));
      }
    }
  }

  Tensor log_normalizer(const std::vector<Tensor>& eta) const override {
    check_domain(eta);
    const auto [n, k] = rows_of(eta[0]);
    Tensor out = Tensor::zeros(batch_shape(eta));
    for (std::size_t r = 0; r < n; ++r) {
      double total = 0, a = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const double alpha = eta[0][r * k + j] + 1;
        total += alpha;
        a += std::lgamma(alpha);
      }
      out.mutable_data()[r] = a - std::lgamma(total);
    }
    return out;
  }

  std::vector<Tensor> mean(const std::vector<Tensor>& eta) const override {
    check_domain(eta);
    Tensor m = eta[0];
    const auto [n, k] = rows_of(m);
    for (std::size_t r = 0; r < n; ++r) {
      double total = 0;
      for (std::size_t j = 0; j < k; ++j) total += eta[0][r * k + j] + 1;
      const double s = digamma(total);
      for (std::size_t j = 0; j < k; ++j) m.mutable_data()[r * k + j] = digamma(eta[0][r * k + j] + 1) - s;
    }
    return {m};
  }

  Tensor sample(const std::vector<Tensor>& eta, Rng& rng) const override {
    check_domain(eta);
    Tensor out = eta[0];
    const auto [n, k] = rows_of(out);
    auto& d = out.mutable_data();
    for (std::size_t r = 0; r < n; ++r) {
      double total = 0;
      for (std::size_t j = 0; j < k; ++j) total += (d[r * k + j] = sample_gamma(eta[0][r * k + j] + 1, rng));
      for (std::size_t j = 0; j < k; ++j) d[r * k + j] /= total;
    }
    return out;
  }

  std::vector<Tensor> statistic_values(const Tensor& value, const std::vector<Tensor>&) const override {
    return {map_unary(UnaryFn::kLog, value)};
  }

  Tensor log_base_measure(const Tensor& value, const std::vector<Tensor>& eta) const override {
    const auto [n, k] = rows_of(value);
    for (std::size_t r = 0; r < n; ++r) {
      double total = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const double v = value[r * k + j];
        if (!(v >= 0)) throw DomainError("Dirichlet: negative simplex entry", r * k + j);
        total += v;
      }
      if (std::abs(total - 1) > 1e-8) throw DomainError("Dirichlet: entries do not sum to 1", r * k);
    }
    return Tensor::zeros(batch_shape(eta));
  }

  Expr log_normalizer_expr(const std::vector<Expr>& eta) const override {
    Expr alpha = eta[0] + 1.0;
    const auto last = static_cast<std::int64_t>(eta[0].shape().size()) - 1;
    return sum(log_gamma(alpha)) - sum(log_gamma(sum(alpha, last)));
  }
  std::vector<Expr> statistic_exprs(Expr z, std::int64_t) const override { return {log(z)}; }

  std::vector<std::string> standard_names() const override { return {"alpha"}; }
  std::vector<Tensor> to_standard(const std::vector<Tensor>& eta) const override {
    check_domain(eta);
    return {map_binary(BinaryFn::kAdd, eta[0], Tensor(1.0))};
  }
  std::vector<Tensor> from_standard(const std::vector<Tensor>& params) const override {
    return {map_binary(BinaryFn::kSubtract, params.at(0), Tensor(1.0))};
  }

 private:
  std::string name_ = "Dirichlet";
  std::vector<Statistic> stats_{Statistic::kLog};
};

// Natural parameters (P mu, -P/2) with precision P; A = mu'P mu / 2 - log|P| / 2.
class MultivariateNormal final : public Family {
 public:
  const std::string& name() const override { return name_; }
  SupportKind support() const override { return SupportKind::kReal; }
  const std::vector<Statistic>& statistics() const override { return stats_; }
  std::size_t event_rank() const override { return 1; }

  std::vector<Shape> param_shapes(const Shape& value_shape, std::int64_t) const override {
    Shape outer = value_shape;
    if (!outer.empty()) outer.push_back(outer.back());
    return {value_shape, outer};
  }
  Shape batch_shape(const std::vector<Tensor>& eta) const override { return drop_last(eta.at(0).shape(), 1); }
  Shape value_shape(const std::vector<Tensor>& eta) const override { return eta.at(0).shape(); }

  // Per batch row: precision, its Cholesky factor, covariance and mean.
  struct Row {
    std::vector<double> precision, chol, cov, mu;
  };

  std::vector<Row> rows(const std::vector<Tensor>& eta) const {
    if (eta.size() != 2 || eta[0].rank() == 0) {
      throw NaturalDomainError("MultivariateNormal: expected (vector, matrix) natural parameters");
    }
    const auto d = static_cast<std::size_t>(eta[0].shape().back());
    Shape want = eta[0].shape();
    want.push_back(static_cast<std::int64_t>(d));
    if (eta[1].shape() != want) {
      throw NaturalDomainError("MultivariateNormal: matrix parameter has shape " + shape_to_string(eta[1].shape()) +
                               ", expected " + shape_to_string(want));
    }
    require_finite(eta[0], name_);
    require_finite(eta[1], name_);
    const std::size_t n = d == 0 ? 0 : eta[0].size() / d;
    std::vector<Row> out(n);
    for (std::size_t r = 0; r < n; ++r) {
      Row& row = out[r];
      row.precision.resize(d * d);
      const double* e2 = eta[1].data().data() + r * d * d;
      double trace = 0;
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) row.precision[i * d + j] = -(e2[i * d + j] + e2[j * d + i]);
        trace += std::abs(row.precision[i * d + i]);
      }
      // Cholesky with a pivot floor relative to the trace scale.
      const double floor = 1e-12 * std::max(trace / static_cast<double>(d), 1e-300);
      row.chol.assign(d * d, 0.0);
      for (std::size_t j = 0; j < d; ++j) {
        double s = row.precision[j * d + j];
        for (std::size_t k = 0; k < j; ++k) s -= row.chol[j * d + k] * row.chol[j * d + k];
        if (!(s > floor)) {
          throw NaturalDomainError("MultivariateNormal: -2*eta2 is not positive definite (row " + std::to_string(r) +
                                   ", pivot " + std::to_string(j) + ")");
        }
        const double l = std::sqrt(s);
        row.chol[j * d + j] = l;
        for (std::size_t i = j + 1; i < d; ++i) {
          double t = row.precision[i * d + j];
          for (std::size_t k = 0; k < j; ++k) t -= row.chol[i * d + k] * row.chol[j * d + k];
          row.chol[i * d + j] = t / l;
        }
      }
      const Tensor lower({static_cast<std::int64_t>(d), static_cast<std::int64_t>(d)}, row.chol);
      row.mu = cholesky_solve(lower, std::span<const double>(eta[0].data().data() + r * d, d));
      row.cov.assign(d * d, 0.0);
      std::vector<double> unit(d, 0.0);
      for (std::size_t j = 0; j < d; ++j) {
        std::fill(unit.begin(), unit.end(), 0.0);
        unit[j] = 1;
        const auto col = cholesky_solve(lower, unit);
        for (std::size_t i = 0; i < d; ++i) row.cov[i * d + j] = col[i];
      }
    }
    return out;
  }

  void check_domain(const std::vector<Tensor>& eta) const override { (void)rows(eta); }

  Tensor log_normalizer(const std::vector<Tensor>& eta) const override {
    const auto rs = rows(eta);
    const auto d = static_cast<std::size_t>(eta[0].shape().back());
    Tensor out = Tensor::zeros(batch_shape(eta));
    for (std::size_t r = 0; r < rs.size(); ++r) {
      double quad = 0, logdet = 0;
      for (std::size_t i = 0; i < d; ++i) {
        quad += eta[0][r * d + i] * rs[r].mu[i];
        logdet += 2 * std::log(rs[r].chol[i * d + i]);
      }
      out.mutable_data()[r] = 0.5 * quad - 0.5 * logdet;
    }
    return out;
  }

  std::vector<Tensor> mean(const std::vector<Tensor>& eta) const override {
    const auto rs = rows(eta);
    const auto d = static_cast<std::size_t>(eta[0].shape().back());
    Tensor m1 = Tensor::zeros(eta[0].shape()), m2 = Tensor::zeros(eta[1].shape());
    for (std::size_t r = 0; r < rs.size(); ++r) {
      for (std::size_t i = 0; i < d; ++i) {
        m1.mutable_data()[r * d + i] = rs[r].mu[i];
        for (std::size_t j = 0; j < d; ++j) {
          m2.mutable_data()[(r * d + i) * d + j] = rs[r].cov[i * d + j] + rs[r].mu[i] * rs[r].mu[j];
        }
      }
    }
    return {m1, m2};
  }

  Tensor sample(const std::vector<Tensor>& eta, Rng& rng) const override {
    const auto rs = rows(eta);
    const auto d = static_cast<std::size_t>(eta[0].shape().back());
    Tensor out = Tensor::zeros(eta[0].shape());
    std::normal_distribution<double> normal;
    for (std::size_t r = 0; r < rs.size(); ++r) {
      const Tensor cov({static_cast<std::int64_t>(d), static_cast<std::int64_t>(d)}, rs[r].cov);
      const Tensor l = cholesky(cov);
      std::vector<double> eps(d);
      for (auto& e : eps) e = normal(rng);
      for (std::size_t i = 0; i < d; ++i) {
        double v = rs[r].mu[i];
        for (std::size_t k = 0; k <= i; ++k) v += l[i * d + k] * eps[k];
        out.mutable_data()[r * d + i] = v;
      }
    }
    return out;
  }

  std::vector<Tensor> statistic_values(const Tensor& value, const std::vector<Tensor>&) const override {
    const std::string b = letters(value.rank() - 1, 'c');
    return {value, symconj::einsum(b + "a," + b + "b->" + b + "ab", {value, value})};
  }

  Tensor log_base_measure(const Tensor& value, const std::vector<Tensor>& eta) const override {
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (!std::isfinite(value[i])) throw DomainError("MultivariateNormal: non-finite value", i);
    }
    const double d = static_cast<double>(eta.at(0).shape().back());
    return Tensor::filled(batch_shape(eta), -0.5 * d * kLog2Pi);
  }

  Expr log_normalizer_expr(const std::vector<Expr>& eta) const override {
    const std::size_t batch = eta[0].shape().size() - 1;
    const std::string b = letters(batch, 'c');
    Expr precision = -1.0 * (eta[1] + einsum(b + "ab->" + b + "ba", {eta[1]}));
    Expr quad = einsum(b + "a," + b + "ab," + b + "b->", {eta[0], inverse(precision), eta[0]});
    return 0.5 * quad - 0.5 * sum(log_det(precision));
  }
  std::vector<Expr> statistic_exprs(Expr z, std::int64_t) const override {
    const std::string b = letters(z.shape().size() - 1, 'c');
    return {z, einsum(b + "a," + b + "b->" + b + "ab", {z, z})};
  }

  std::vector<std::string> standard_names() const override { return {"mean", "cov"}; }
  std::vector<Tensor> to_standard(const std::vector<Tensor>& eta) const override {
    const auto rs = rows(eta);
    const auto d = static_cast<std::size_t>(eta[0].shape().back());
    Tensor mu = Tensor::zeros(eta[0].shape()), cov = Tensor::zeros(eta[1].shape());
    for (std::size_t r = 0; r < rs.size(); ++r) {
      std::copy(rs[r].mu.begin(), rs[r].mu.end(), mu.mutable_data().begin() + static_cast<std::ptrdiff_t>(r * d));
      std::copy(rs[r].cov.begin(), rs[r].cov.end(),
                cov.mutable_data().begin() + static_cast<std::ptrdiff_t>(r * d * d));
    }
    return {mu, cov};
  }
  std::vector<Tensor> from_standard(const std::vector<Tensor>& params) const override {
    const Tensor& mu = params.at(0);
    const Tensor precision = spd_inverse(params.at(1));
    const std::string b = letters(mu.rank() - 1, 'c');
    Tensor e1 = symconj::einsum(b + "ab," + b + "b->" + b + "a", {precision, mu});
    Tensor e2 = map_binary(BinaryFn::kMultiply, precision, Tensor(-0.5));
    return {e1, e2};
  }

 private:
  std::string name_ = "MultivariateNormal";
  std::vector<Statistic> stats_{Statistic::kIdentity, Statistic::kOuter};
};

}  // namespace

std::string_view statistic_name(Statistic s) {
  switch (s) {
    case Statistic::kIdentity: return "identity";
    case Statistic::kSquare: return "square";
    case Statistic::kOuter: return "outer";
    case Statistic::kLog: return "log";
    case Statistic::kLog1pNeg: return "log1p_neg";
    case Statistic::kOneHot: return "one_hot";
  }
  return "?";
}

std::string signature_to_string(const StatisticSignature& sig) {
  std::string s = "{";
  for (Statistic t : sig) s += (s.size() > 1 ? ", " : "") + std::string(statistic_name(t));
  return s + "}";
}

Tensor support_point(SupportKind kind, const Shape& shape) {
  switch (kind) {
    case SupportKind::kNonnegative: return Tensor::ones(shape);
    case SupportKind::kUnitInterval: return Tensor::filled(shape, 0.5);
    case SupportKind::kSimplex: return Tensor::filled(shape, 1.0 / static_cast<double>(shape.back()));
    default: return Tensor::zeros(shape);
  }
}

double sample_gamma(double shape, Rng& rng) {
  if (!(shape > 0)) throw NaturalDomainError("gamma sampler needs shape > 0");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  if (shape < 1) {
    // Boost to shape + 1 and scale by U^(1/shape).
    const double u = uniform(rng);
    return sample_gamma(shape + 1, rng) * std::pow(u, 1.0 / shape);
  }
  std::normal_distribution<double> normal;
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x, v;
    do {
      x = normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0);
    v = v * v * v;
    const double u = uniform(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

FamilyRegistry::FamilyRegistry() {
  families_.push_back(std::make_unique<Bernoulli>());
  families_.push_back(std::make_unique<Categorical>());
  families_.push_back(std::make_unique<Beta>());
  families_.push_back(std::make_unique<Gamma>());
  families_.push_back(std::make_unique<Dirichlet>());
  families_.push_back(std::make_unique<Normal>());
  families_.push_back(std::make_unique<MultivariateNormal>());
}

const Family& FamilyRegistry::by_name(const std::string& name) const {
  for (const auto& f : families_) {
    if (f->name() == name) return *f;
  }
  throw NoFamilyError("no family named '" + name + "'");
}

const Family& FamilyRegistry::lookup(const StatisticSignature& sig, SupportKind support) const {
  // Outer statistics fold identity and square into an MVN.
  StatisticSignature want = sig;
  if (want.contains(Statistic::kOuter)) want.erase(Statistic::kSquare);
  const Family* best = nullptr;
  for (const auto& f : families_) {
    if (f->support() != support) continue;
    const StatisticSignature have(f->statistics().begin(), f->statistics().end());
    if (have == want) return *f;
    if (!want.empty() && std::includes(have.begin(), have.end(), want.begin(), want.end())) {
      if (!best || have.size() < best->statistics().size()) best = f.get();
    }
  }
  if (best) return *best;
  throw NoFamilyError("no registered family has statistics " + signature_to_string(sig) + " on support " +
                      to_string(SupportType{support, 0}));
}

const FamilyRegistry& builtin_families() {
  static const FamilyRegistry registry;
  return registry;
}

Distribution make_distribution(const Family& family, std::vector<Tensor> eta) {
  if (family.event_rank() == 0 && family.statistics().size() > 1 && !eta.empty()) {
    Shape shape = eta[0].shape();
    for (const auto& e : eta) shape = broadcast_shapes(shape, e.shape());
    for (auto& e : eta) {
      if (e.shape() != shape) e = broadcast_to(e, shape);
    }
  }
  family.check_domain(eta);
  return Distribution{&family, std::move(eta)};
}

Distribution from_standard(const Family& family, const std::vector<Tensor>& params) {
  return make_distribution(family, family.from_standard(params));
}

Tensor log_normalizer(const Distribution& d) { return d.family->log_normalizer(d.eta); }

std::vector<Tensor> mean_params(const Distribution& d) { return d.family->mean(d.eta); }

Tensor sample(const Distribution& d, Rng& rng) { return d.family->sample(d.eta, rng); }

Tensor log_prob(const Distribution& d, const Tensor& value) {
  const Family& f = *d.family;
  if (value.shape() != f.value_shape(d.eta)) {
    throw DomainError(f.name() + ": value shape " + shape_to_string(value.shape()) + " does not match " +
                          shape_to_string(f.value_shape(d.eta)),
                      0);
  }
  Tensor out = f.log_base_measure(value, d.eta);
  const auto t = f.statistic_values(value, d.eta);
  const Tensor a = f.log_normalizer(d.eta);
  for (std::size_t k = 0; k < t.size(); ++k) {
    // Inner product over the event axes; 0 * (-inf) at a boundary counts as 0.
    const std::size_t per = out.size() == 0 ? 0 : t[k].size() / out.size();
    for (std::size_t i = 0; i < t[k].size(); ++i) {
      const double e = d.eta[k][i];
      if (e != 0) out.mutable_data()[i / per] += e * t[k][i];
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out.mutable_data()[i] -= a[i];
  return out;
}

std::vector<Tensor> standard_params(const Distribution& d) { return d.family->to_standard(d.eta); }

std::string describe(const Distribution& d) {
  const auto params = standard_params(d);
  const auto names = d.family->standard_names();
  const bool unbatched = d.batch_shape().empty();
  std::string s = d.family->name() + "(";
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (i) s += ", ";
    if (!unbatched || params[i].rank() > 0) s += names[i] + "=";
    s += fmt(params[i]);
  }
  return s + ")";
}

}  // namespace symconj
