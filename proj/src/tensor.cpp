// Apache License, Version 2.0, refer to LICENSE.txt
#include "symconj/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>

namespace symconj {

std::int64_t num_elements(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_) {
    if (e < 0) throw GraphError("negative extent in shape " + shape_to_string(shape_));
  }
  if (num_elements(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw GraphError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = static_cast<std::int64_t>(values.size());
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::int64_t rows, std::int64_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = static_cast<std::size_t>(num_elements(shape));
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::identity(std::int64_t n) {
  Tensor t = zeros({n, n});
  for (std::int64_t i = 0; i < n; ++i) t.data_[static_cast<std::size_t>(i * n + i)] = 1.0;
  return t;
}

std::vector<std::int64_t> Tensor::strides() const {
  std::vector<std::int64_t> s(shape_.size(), 1);
  for (std::size_t i = shape_.size(); i-- > 1;) s[i - 1] = s[i] * shape_[i];
  return s;
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != shape_.size()) throw GraphError("index rank mismatch");
  auto st = strides();
  std::int64_t off = 0;
  std::size_t k = 0;
  for (auto i : index) {
    if (i < 0 || i >= shape_[k]) throw GraphError("index out of range");
    off += i * st[k++];
  }
  return data_[static_cast<std::size_t>(off)];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw GraphError("item() on tensor of shape " + shape_to_string(shape_));
  }
  return data_[0];
}

// --- einsum ------------------------------------------------------------------

EinsumSpec EinsumSpec::parse(std::string_view formula) {
  auto arrow = formula.find("->");
  if (arrow == std::string_view::npos) {
    throw ContractionError("einsum formula '" + std::string(formula) + "' lacks '->'");
  }
  EinsumSpec spec;
  std::string_view lhs = formula.substr(0, arrow);
  spec.output = std::string(formula.substr(arrow + 2));
  std::size_t start = 0;
  while (true) {
    auto comma = lhs.find(',', start);
    spec.inputs.emplace_back(lhs.substr(start, comma == std::string_view::npos
                                                   ? std::string_view::npos
                                                   : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  auto check_alpha = [&](const std::string& s) {
    for (char c : s) {
      if (c < 'a' || c > 'z') {
        throw ContractionError(std::string("einsum index '") + c +
                               "' is outside the alphabet a-z in '" +
                               std::string(formula) + "'");
      }
    }
  };
  for (auto& in : spec.inputs) check_alpha(in);
  check_alpha(spec.output);
  std::array<int, 26> seen{};
  for (char c : spec.output) {
    if (seen[c - 'a']++) {
      throw ContractionError(std::string("output index '") + c + "' repeated in '" +
                             std::string(formula) + "'");
    }
    bool found = std::any_of(spec.inputs.begin(), spec.inputs.end(), [c](const std::string& s) {
      return s.find(c) != std::string::npos;
    });
    if (!found) {
      throw ContractionError(std::string("output index '") + c +
                             "' does not appear in any operand of '" +
                             std::string(formula) + "'");
    }
  }
  return spec;
}

std::string EinsumSpec::to_string() const {
  std::string s;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (i) s += ",";
    s += inputs[i];
  }
  return s + "->" + output;
}

Shape einsum_shape(const EinsumSpec& spec, std::span<const Shape> shapes) {
  if (shapes.size() != spec.inputs.size()) {
    throw ContractionError("einsum '" + spec.to_string() + "' expects " +
                           std::to_string(spec.inputs.size()) + " operands, got " +
                           std::to_string(shapes.size()));
  }
  std::array<std::int64_t, 26> extent;
  extent.fill(-1);
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    const auto& sub = spec.inputs[k];
    if (sub.size() != shapes[k].size()) {
      throw ContractionError("einsum '" + spec.to_string() + "': operand " + std::to_string(k) +
                             " has rank " + std::to_string(shapes[k].size()) +
                             " but subscript '" + sub + "'");
    }
    for (std::size_t p = 0; p < sub.size(); ++p) {
      auto& e = extent[sub[p] - 'a'];
      if (e == -1) {
        e = shapes[k][p];
      } else if (e != shapes[k][p]) {
        throw ContractionError("einsum '" + spec.to_string() + "': index '" +
                               std::string(1, sub[p]) + "' has extents " + std::to_string(e) +
                               " and " + std::to_string(shapes[k][p]));
      }
    }
  }
  Shape out;
  for (char c : spec.output) out.push_back(extent[c - 'a']);
  return out;
}

namespace {

// Labelled operand during pairwise contraction; indices are unique.
struct Labelled {
  std::string idx;
  Tensor value;
};

std::array<std::int64_t, 26> extents_of(const std::vector<Labelled>& ops) {
  std::array<std::int64_t, 26> ext;
  ext.fill(0);
  for (const auto& op : ops) {
    for (std::size_t p = 0; p < op.idx.size(); ++p) ext[op.idx[p] - 'a'] = op.value.shape()[p];
  }
  return ext;
}

// Generic loop: result[out] = sum over loop indices of prod of operands.
Tensor contract(const std::vector<const Labelled*>& ops, const std::string& out,
                const std::array<std::int64_t, 26>& ext) {
  std::string loop = out;
  for (const auto* op : ops) {
    for (char c : op->idx) {
      if (loop.find(c) == std::string::npos) loop += c;
    }
  }
  Shape out_shape;
  for (char c : out) out_shape.push_back(ext[c - 'a']);
  Tensor result = Tensor::zeros(out_shape);
  if (result.size() == 0) return result;
  for (char c : loop) {
    if (ext[c - 'a'] == 0) return result;
  }

  const std::size_t n_loop = loop.size();
  // stride of each loop index in each operand and in the output
  std::vector<std::vector<std::int64_t>> op_stride(ops.size(), std::vector<std::int64_t>(n_loop, 0));
  for (std::size_t k = 0; k < ops.size(); ++k) {
    auto st = ops[k]->value.strides();
    for (std::size_t p = 0; p < ops[k]->idx.size(); ++p) {
      op_stride[k][loop.find(ops[k]->idx[p])] = st[p];
    }
  }
  std::vector<std::int64_t> out_stride(n_loop, 0);
  {
    auto st = result.strides();
    for (std::size_t p = 0; p < out.size(); ++p) out_stride[p] = st[p];
  }
  std::vector<std::int64_t> extent(n_loop);
  for (std::size_t i = 0; i < n_loop; ++i) extent[i] = ext[loop[i] - 'a'];

  std::vector<std::int64_t> counter(n_loop, 0);
  std::vector<std::int64_t> op_off(ops.size(), 0);
  std::int64_t out_off = 0;
  auto& rd = result.mutable_data();
  std::vector<const double*> base(ops.size());
  for (std::size_t k = 0; k < ops.size(); ++k) base[k] = ops[k]->value.data().data();

  while (true) {
    double prod = 1.0;
    for (std::size_t k = 0; k < ops.size(); ++k) prod *= base[k][op_off[k]];
    rd[static_cast<std::size_t>(out_off)] += prod;
    // advance odometer from the innermost index
    std::size_t i = n_loop;
    while (i > 0) {
      --i;
      ++counter[i];
      out_off += out_stride[i];
      for (std::size_t k = 0; k < ops.size(); ++k) op_off[k] += op_stride[k][i];
      if (counter[i] < extent[i]) break;
      out_off -= out_stride[i] * counter[i];
      for (std::size_t k = 0; k < ops.size(); ++k) op_off[k] -= op_stride[k][i] * counter[i];
      counter[i] = 0;
      if (i == 0) return result;
    }
    if (n_loop == 0) return result;
  }
}

// Removes repeated indices by taking diagonals.
Labelled take_diagonals(const std::string& sub, const Tensor& t) {
  std::string uniq;
  for (char c : sub) {
    if (uniq.find(c) == std::string::npos) uniq += c;
  }
  if (uniq.size() == sub.size()) return {sub, t};
  std::array<std::int64_t, 26> ext;
  ext.fill(0);
  for (std::size_t p = 0; p < sub.size(); ++p) ext[sub[p] - 'a'] = t.shape()[p];
  Shape out_shape;
  for (char c : uniq) out_shape.push_back(ext[c - 'a']);
  Tensor out = Tensor::zeros(out_shape);
  auto st = t.strides();
  auto ost = out.strides();
  std::vector<std::int64_t> counter(uniq.size(), 0);
  auto& od = out.mutable_data();
  for (std::int64_t flat = 0; flat < num_elements(out_shape); ++flat) {
    std::int64_t rem = flat;
    for (std::size_t q = 0; q < uniq.size(); ++q) {
      counter[q] = rem / ost[q];
      rem %= ost[q];
    }
    std::int64_t src = 0;
    for (std::size_t p = 0; p < sub.size(); ++p) src += counter[uniq.find(sub[p])] * st[p];
    od[static_cast<std::size_t>(flat)] = t[static_cast<std::size_t>(src)];
  }
  return {uniq, out};
}

}  // namespace

Tensor einsum(const EinsumSpec& spec, std::span<const Tensor> operands) {
  std::vector<Shape> shapes;
  for (const auto& t : operands) shapes.push_back(t.shape());
  einsum_shape(spec, shapes);

  std::vector<Labelled> ops;
  ops.reserve(operands.size());
  for (std::size_t k = 0; k < operands.size(); ++k) ops.push_back(take_diagonals(spec.inputs[k], operands[k]));
  auto ext = extents_of(ops);

  // Pairwise left-to-right, keeping only indices still needed downstream.
  Labelled cur = std::move(ops[0]);
  for (std::size_t k = 1; k < ops.size(); ++k) {
    std::string needed = spec.output;
    for (std::size_t j = k + 1; j < ops.size(); ++j) needed += ops[j].idx;
    std::string keep;
    for (char c : cur.idx + ops[k].idx) {
      if (needed.find(c) != std::string::npos && keep.find(c) == std::string::npos) keep += c;
    }
    Tensor next = contract({&cur, &ops[k]}, keep, ext);
    cur = Labelled{keep, std::move(next)};
  }
  if (cur.idx == spec.output) return cur.value;
  return contract({&cur}, spec.output, ext);
}

Tensor einsum(std::string_view formula, std::span<const Tensor> operands) {
  return einsum(EinsumSpec::parse(formula), operands);
}

Tensor einsum(std::string_view formula, std::initializer_list<Tensor> operands) {
  std::vector<Tensor> v(operands);
  return einsum(formula, std::span<const Tensor>(v));
}

// --- elementwise -------------------------------------------------------------

std::string_view unary_fn_name(UnaryFn fn) {
  switch (fn) {
    case UnaryFn::kLog: return "log";
    case UnaryFn::kLog1p: return "log1p";
    case UnaryFn::kExp: return "exp";
    case UnaryFn::kSqrt: return "sqrt";
    case UnaryFn::kSquare: return "square";
    case UnaryFn::kReciprocal: return "reciprocal";
    case UnaryFn::kLogistic: return "logistic";
    case UnaryFn::kLogGamma: return "log_gamma";
    case UnaryFn::kDigamma: return "digamma";
    case UnaryFn::kNegate: return "negate";
  }
  return "?";
}

namespace {

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

[[noreturn]] void domain_fail(std::string_view fn, double x, std::size_t i) {
  std::ostringstream os;
  os.precision(17);
  os << fn << " domain error at flat index " << i << " (value " << x << ")";
  throw DomainError(os.str(), i);
}

}  // namespace

Tensor map_unary(UnaryFn fn, const Tensor& x) {
  std::vector<double> out(x.size());
  auto name = unary_fn_name(fn);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = x[i];
    if (std::isnan(v)) domain_fail(name, v, i);
    double r = 0;
    switch (fn) {
      case UnaryFn::kLog:
        if (!(v > 0)) domain_fail(name, v, i);
        r = std::log(v);
        break;
      case UnaryFn::kLog1p:
        if (!(v > -1)) domain_fail(name, v, i);
        r = std::log1p(v);
        break;
      case UnaryFn::kExp: r = std::exp(v); break;
      case UnaryFn::kSqrt:
        if (v < 0) domain_fail(name, v, i);
        r = std::sqrt(v);
        break;
      case UnaryFn::kSquare: r = v * v; break;
      case UnaryFn::kReciprocal:
        if (v == 0) domain_fail(name, v, i);
        r = 1.0 / v;
        break;
      case UnaryFn::kLogistic: r = logistic(v); break;
      case UnaryFn::kLogGamma:
        if (!(v > 0)) domain_fail(name, v, i);
        r = std::lgamma(v);
        break;
      case UnaryFn::kDigamma:
        if (!(v > 0)) domain_fail(name, v, i);
        r = boost::math::digamma(v);
        break;
      case UnaryFn::kNegate: r = -v; break;
    }
    if (!std::isfinite(r)) domain_fail(name, v, i);
    out[i] = r;
  }
  return Tensor(x.shape(), std::move(out));
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw GraphError("shapes " + shape_to_string(a) + " and " + shape_to_string(b) +
                       " do not broadcast");
    }
    out[i] = ea == 1 ? eb : ea;
  }
  return out;
}

namespace {

// Maps each flat index of `target` to a flat index of a tensor with shape
// `src` broadcast against it.
std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& target) {
  const std::size_t r = target.size();
  const std::size_t off = r - src.size();
  Tensor probe = Tensor::zeros(src);
  auto sst = probe.strides();
  std::vector<std::int64_t> st(r, 0);
  for (std::size_t i = 0; i < src.size(); ++i) st[i + off] = src[i] == 1 ? 0 : sst[i];
  const auto n = static_cast<std::size_t>(num_elements(target));
  std::vector<std::size_t> map(n);
  std::vector<std::int64_t> counter(r, 0);
  std::int64_t o = 0;
  for (std::size_t f = 0; f < n; ++f) {
    map[f] = static_cast<std::size_t>(o);
    for (std::size_t i = r; i-- > 0;) {
      ++counter[i];
      o += st[i];
      if (counter[i] < target[i]) break;
      o -= st[i] * counter[i];
      counter[i] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shapes(x.shape(), shape) != shape) {
    throw GraphError("cannot broadcast " + shape_to_string(x.shape()) + " to " +
                     shape_to_string(shape));
  }
  auto map = broadcast_index(x.shape(), shape);
  std::vector<double> out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = x[map[i]];
  return Tensor(shape, std::move(out));
}

Tensor map_binary(BinaryFn fn, const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shapes(a.shape(), b.shape());
  auto ma = broadcast_index(a.shape(), shape);
  auto mb = broadcast_index(b.shape(), shape);
  std::vector<double> out(ma.size());
  for (std::size_t i = 0; i < ma.size(); ++i) {
    double x = a[ma[i]], y = b[mb[i]];
    double r = 0;
    switch (fn) {
      case BinaryFn::kAdd: r = x + y; break;
      case BinaryFn::kSubtract: r = x - y; break;
      case BinaryFn::kMultiply: r = x * y; break;
      case BinaryFn::kDivide:
        if (y == 0) domain_fail("divide", y, i);
        r = x / y;
        break;
      case BinaryFn::kPower: r = std::pow(x, y); break;
    }
    if (!std::isfinite(r)) domain_fail("binary op", x, i);
    out[i] = r;
  }
  return Tensor(shape, std::move(out));
}

Tensor one_hot(const Tensor& indices, std::int64_t depth) {
  if (depth <= 0) throw EncodingError("one_hot depth must be positive");
  Shape shape = indices.shape();
  shape.push_back(depth);
  Tensor out = Tensor::zeros(shape);
  auto& d = out.mutable_data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    double v = indices[i];
    auto k = static_cast<std::int64_t>(std::llround(v));
    if (static_cast<double>(k) != v || k < 0 || k >= depth) {
      throw EncodingError("one_hot index " + std::to_string(v) + " at flat position " +
                          std::to_string(i) + " is outside [0, " + std::to_string(depth) + ")");
    }
    d[i * static_cast<std::size_t>(depth) + static_cast<std::size_t>(k)] = 1.0;
  }
  return out;
}

namespace {

template <typename Reduce>
Tensor reduce_axis(const Tensor& x, std::size_t axis, Reduce&& reduce) {
  if (axis >= x.rank()) {
    throw GraphError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  const std::int64_t n = out_shape[axis];
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  std::vector<double> out(static_cast<std::size_t>(outer * inner));
  std::vector<double> lane(static_cast<std::size_t>(n));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      for (std::int64_t k = 0; k < n; ++k) lane[k] = x[static_cast<std::size_t>((o * n + k) * inner + in)];
      out[static_cast<std::size_t>(o * inner + in)] = reduce(lane);
    }
  }
  return Tensor(out_shape, std::move(out));
}

}  // namespace

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  return reduce_axis(x, axis, [](const std::vector<double>& lane) {
    return std::accumulate(lane.begin(), lane.end(), 0.0);
  });
}

Tensor logsumexp(const Tensor& x, std::size_t axis) {
  return reduce_axis(x, axis, [](const std::vector<double>& lane) {
    if (lane.empty()) return -std::numeric_limits<double>::infinity();
    if (lane.size() == 1) return lane[0];
    double m = *std::max_element(lane.begin(), lane.end());
    if (!std::isfinite(m)) return m;
    double s = 0;
    for (double v : lane) s += std::exp(v - m);
    return m + std::log(s);
  });
}

double sum_all(const Tensor& x) {
  return std::accumulate(x.data().begin(), x.data().end(), 0.0);
}

// --- linear algebra ----------------------------------------------------------

namespace {

void check_square(const Tensor& a, const char* what) {
  if (a.rank() < 2 || a.shape()[a.rank() - 1] != a.shape()[a.rank() - 2]) {
    throw GraphError(std::string(what) + " needs square trailing axes, got " +
                     shape_to_string(a.shape()));
  }
}

// In-place Cholesky of one n x n block; throws on a non-positive pivot.
void cholesky_block(const double* a, double* l, std::int64_t n) {
  double scale = 0;
  for (std::int64_t i = 0; i < n * n; ++i) scale = std::max(scale, std::abs(a[i]));
  const double sym_tol = 1e-10 * std::max(1.0, scale);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < i; ++j) {
      if (std::abs(a[i * n + j] - a[j * n + i]) > sym_tol) {
        throw FactorizationError("cholesky: matrix is not symmetric at (" + std::to_string(i) +
                                     "," + std::to_string(j) + ")",
                                 static_cast<std::size_t>(i));
      }
    }
  }
  std::fill(l, l + n * n, 0.0);
  for (std::int64_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::int64_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (!(d > 0) || !std::isfinite(d)) {
      throw FactorizationError("cholesky: matrix is not positive definite (pivot " +
                                   std::to_string(j) + ")",
                               static_cast<std::size_t>(j));
    }
    const double ljj = std::sqrt(d);
    l[j * n + j] = ljj;
    for (std::int64_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::int64_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / ljj;
    }
  }
}

}  // namespace

Tensor cholesky(const Tensor& a) {
  check_square(a, "cholesky");
  const std::int64_t n = a.shape().back();
  const std::int64_t batch = n == 0 ? 0 : static_cast<std::int64_t>(a.size()) / (n * n);
  std::vector<double> out(a.size());
  for (std::int64_t b = 0; b < batch; ++b) {
    cholesky_block(a.data().data() + b * n * n, out.data() + b * n * n, n);
  }
  return Tensor(a.shape(), std::move(out));
}

std::vector<double> cholesky_solve(const Tensor& lower, std::span<const double> b) {
  const auto n = static_cast<std::size_t>(lower.shape().back());
  std::vector<double> y(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) y[i] -= lower[i * n + k] * y[k];
    y[i] /= lower[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) y[i] -= lower[k * n + i] * y[k];
    y[i] /= lower[i * n + i];
  }
  return y;
}

Tensor spd_inverse(const Tensor& a) {
  Tensor l = cholesky(a);
  const auto n = static_cast<std::size_t>(a.shape().back());
  const std::size_t block = n * n;
  std::vector<double> out(a.size());
  for (std::size_t b = 0; n && b < a.size() / block; ++b) {
    Tensor lb({static_cast<std::int64_t>(n), static_cast<std::int64_t>(n)},
              std::vector<double>(l.data().begin() + static_cast<std::ptrdiff_t>(b * block),
                                  l.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * block)));
    std::vector<double> e(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
      std::fill(e.begin(), e.end(), 0.0);
      e[c] = 1.0;
      auto col = cholesky_solve(lb, e);
      for (std::size_t r = 0; r < n; ++r) out[b * block + r * n + c] = col[r];
    }
  }
  return Tensor(a.shape(), std::move(out));
}

Tensor spd_log_det(const Tensor& a) {
  Tensor l = cholesky(a);
  const auto n = static_cast<std::size_t>(a.shape().back());
  Shape batch(a.shape().begin(), a.shape().end() - 2);
  std::vector<double> out(static_cast<std::size_t>(num_elements(batch)), 0.0);
  for (std::size_t b = 0; b < out.size(); ++b) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += std::log(l[b * n * n + i * n + i]);
    out[b] = 2 * s;
  }
  return Tensor(batch, std::move(out));
}

}  // namespace symconj
