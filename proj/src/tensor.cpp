#include "atm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "atm/errors.hpp"

namespace atm {

namespace {

std::atomic<std::uint64_t> g_sequence{1};

std::uint64_t next_seq() { return g_sequence.fetch_add(1, std::memory_order_relaxed); }

std::string shape_of(const detail::Node& n) {
  std::ostringstream os;
  os << "[" << n.rows << "x" << n.cols << "]";
  return os.str();
}

void ensure_grad(detail::Node& n) {
  if (n.requires_grad && n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

enum class Broadcast { same, row, col };

Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::same;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::col;
  throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

inline std::size_t bindex(Broadcast k, std::size_t r, std::size_t c, std::size_t cols) {
  switch (k) {
    case Broadcast::same:
      return r * cols + c;
    case Broadcast::row:
      return c;
    case Broadcast::col:
      return r;
  }
  return 0;
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  const Broadcast kind = broadcast_kind(op, a, b);
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(rows * cols);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = fwd(av[r * cols + c], bv[bindex(kind, r, c, cols)]);
  return Tensor::make_result(op, rows, cols, std::move(out), {a.node(), b.node()},
                             [kind, rows, cols, da, db](detail::Node& self) {
                               auto& pa = *self.parents[0];
                               auto& pb = *self.parents[1];
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t c = 0; c < cols; ++c) {
                                   const std::size_t i = r * cols + c;
                                   const std::size_t j = bindex(kind, r, c, cols);
                                   const double g = self.grad[i];
                                   if (pa.requires_grad) pa.grad[i] += g * da(pa.value[i], pb.value[j]);
                                   if (pb.requires_grad) pb.grad[j] += g * db(pa.value[i], pb.value[j]);
                                 }
                               }
                             });
}

// `dfn(x, y)` is the derivative given input x and output y.
template <typename Fwd, typename D>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, D dfn) {
  std::vector<double> out(a.size());
  const auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return Tensor::make_result(op, a.rows(), a.cols(), std::move(out), {a.node()},
                             [dfn](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 p.grad[i] += self.grad[i] * dfn(p.value[i], self.value[i]);
                             });
}

}  // namespace

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) { node_->seq = next_seq(); }

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (data.size() != rows * cols) {
    std::ostringstream os;
    os << "tensor data length " << data.size() << " does not match shape [" << rows << "x" << cols << "]";
    throw DimensionError(os.str());
  }
  node_->rows = rows;
  node_->cols = cols;
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
  node_->seq = next_seq();
  ensure_grad(*node_);
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return Tensor(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
}

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double v, bool requires_grad) {
  return Tensor(rows, cols, std::vector<double>(rows * cols, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor(1, 1, {v}, requires_grad); }

Tensor Tensor::row(std::initializer_list<double> values, bool requires_grad) {
  return Tensor(1, values.size(), std::vector<double>(values), requires_grad);
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows, bool requires_grad) {
  const std::size_t n = rows.size();
  const std::size_t d = n ? rows.front().size() : 0;
  std::vector<double> data;
  data.reserve(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    if (rows[r].size() != d) {
      throw DimensionError("from_rows: row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                           " columns, expected " + std::to_string(d));
    }
    data.insert(data.end(), rows[r].begin(), rows[r].end());
  }
  return Tensor(n, d, std::move(data), requires_grad);
}

std::string Tensor::shape_str() const { return shape_of(*node_); }

double Tensor::item() const {
  if (size() != 1) throw RankError("item() requires a scalar tensor, got " + shape_str());
  return node_->value[0];
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return Tensor(rows(), cols(), node_->value, false); }

std::vector<double> Tensor::row_values(std::size_t r) const {
  const auto begin = node_->value.begin() + static_cast<std::ptrdiff_t>(r * cols());
  return {begin, begin + static_cast<std::ptrdiff_t>(cols())};
}

Tensor Tensor::make_result(const char* op, std::size_t rows, std::size_t cols, std::vector<double> value,
                           std::vector<std::shared_ptr<detail::Node>> parents,
                           std::function<void(detail::Node&)> backward) {
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in forward pass");
  }
  auto node = std::make_shared<detail::Node>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  node->op = op;
  node->seq = next_seq();
  node->requires_grad = backward && std::any_of(parents.begin(), parents.end(),
                                                [](const auto& p) { return p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
    ensure_grad(*node);
  }
  return Tensor(std::move(node));
}

Tape Tape::record(const Tensor& loss) {
  Tape tape;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{loss.node()};
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (!n->requires_grad || !seen.insert(n.get()).second) continue;
    for (const auto& p : n->parents) stack.push_back(p);
    tape.records_.push_back(std::move(n));
  }
  std::sort(tape.records_.begin(), tape.records_.end(),
            [](const auto& a, const auto& b) { return a->seq < b->seq; });
  return tape;
}

void Tape::run(const Tensor& loss) const {
  for (const auto& n : records_) {
    if (!n->is_leaf()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
  auto& root = *loss.node();
  if (root.is_leaf()) {
    root.grad[0] += 1.0;
    return;
  }
  root.grad[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    auto& n = **it;
    if (n.backward) n.backward(n);
  }
  for (const auto& n : records_) {
    if (!n->is_leaf()) continue;
    for (double g : n->grad) {
      if (!std::isfinite(g)) throw NumericError("backward: non-finite gradient reached a leaf");
    }
  }
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw RankError("backward requires a scalar loss, got " + loss.shape_str());
  if (!loss.requires_grad()) return;
  Tape::record(loss).run(loss);
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double c) {
  return unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " + a.shape_str() + " vs " + b.shape_str());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
    }
  return Tensor::make_result("matmul", m, n, std::move(out), {a.node(), b.node()},
                             [m, k, n](detail::Node& self) {
                               auto& pa = *self.parents[0];
                               auto& pb = *self.parents[1];
                               const auto& g = self.grad;
                               // a.grad += g · bᵀ
                               if (pa.requires_grad) {
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                     double s = 0.0;
                                     for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * pb.value[p * n + j];
                                     pa.grad[i * k + p] += s;
                                   }
                               }
                               // b.grad += aᵀ · g
                               if (pb.requires_grad) {
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                     const double x = pa.value[i * k + p];
                                     for (std::size_t j = 0; j < n; ++j) pb.grad[p * n + j] += x * g[i * n + j];
                                   }
                               }
                             });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& a, double floor) {
  if (!(floor > 0.0)) throw NumericError("log: clamp floor must be positive");
  for (double v : a.data()) {
    if (std::isnan(v)) throw NumericError("log: NaN input");
  }
  // Clamped inputs sit on a flat segment, so they receive zero gradient.
  return unary(
      "log", a, [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x, double) { return x >= floor ? 1.0 / x : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a) {
  switch (op) {
    case ElementwiseOp::relu:
      return relu(a);
    case ElementwiseOp::sigmoid:
      return sigmoid(a);
    case ElementwiseOp::log:
      return log(a);
    case ElementwiseOp::square:
      return square(a);
    case ElementwiseOp::exp:
      return exp(a);
    default:
      throw std::invalid_argument("elementwise: binary op given one operand");
  }
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  switch (op) {
    case ElementwiseOp::add:
      return add(a, b);
    case ElementwiseOp::sub:
      return sub(a, b);
    case ElementwiseOp::mul:
      return mul(a, b);
    default:
      throw std::invalid_argument("elementwise: unary op given two operands");
  }
}

Tensor softmax_rows(const Tensor& a) {
  if (a.rows() == 0 || a.cols() == 0) throw EmptyReductionError("softmax_rows: empty input " + a.shape_str());
  const std::size_t m = a.rows(), c = a.cols();
  const auto av = a.data();
  std::vector<double> out(m * c);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = av.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    if (!std::isfinite(mx)) throw NumericError("softmax_rows: non-finite input in row " + std::to_string(i));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out[i * c + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return Tensor::make_result("softmax_rows", m, c, std::move(out), {a.node()}, [m, c](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        p.grad[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
}

Tensor sum(const Tensor& a) {
  if (a.empty()) throw EmptyReductionError("sum: empty input");
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result("sum", 1, 1, {s}, {a.node()}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (double& g : p.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.empty()) throw EmptyReductionError("mean: empty input");
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result("mean", 1, 1, {s / n}, {a.node()}, [n](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    const double g = self.grad[0] / n;
    for (double& x : p.grad) x += g;
  });
}

Tensor sum_rows(const Tensor& a) {
  if (a.cols() == 0) throw EmptyReductionError("sum_rows: input has no columns");
  const std::size_t m = a.rows(), c = a.cols();
  const auto av = a.data();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += av[i * c + j];
  return Tensor::make_result("sum_rows", m, 1, std::move(out), {a.node()}, [m, c](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[i];
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_cols: row counts differ, " + a.shape_str() + " vs " + b.shape_str());
  }
  const std::size_t m = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
  std::vector<double> out(m * c);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().data() + i * ca, ca, out.data() + i * c);
    std::copy_n(b.data().data() + i * cb, cb, out.data() + i * c + ca);
  }
  return Tensor::make_result("concat_cols", m, c, std::move(out), {a.node(), b.node()},
                             [m, ca, cb, c](detail::Node& self) {
                               auto& pa = *self.parents[0];
                               auto& pb = *self.parents[1];
                               for (std::size_t i = 0; i < m; ++i) {
                                 if (pa.requires_grad)
                                   for (std::size_t j = 0; j < ca; ++j) pa.grad[i * ca + j] += self.grad[i * c + j];
                                 if (pb.requires_grad)
                                   for (std::size_t j = 0; j < cb; ++j)
                                     pb.grad[i * cb + j] += self.grad[i * c + ca + j];
                               }
                             });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("concat_rows: column counts differ, " + a.shape_str() + " vs " + b.shape_str());
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t na = a.size();
  return Tensor::make_result("concat_rows", a.rows() + b.rows(), a.cols(), std::move(out), {a.node(), b.node()},
                             [na](detail::Node& self) {
                               auto& pa = *self.parents[0];
                               auto& pb = *self.parents[1];
                               if (pa.requires_grad)
                                 for (std::size_t i = 0; i < na; ++i) pa.grad[i] += self.grad[i];
                               if (pb.requires_grad)
                                 for (std::size_t i = 0; i < pb.grad.size(); ++i) pb.grad[i] += self.grad[na + i];
                             });
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  return Tensor::make_result("transpose", n, m, std::move(out), {a.node()}, [m, n](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += self.grad[j * m + i];
  });
}

Tensor select_rows(const Tensor& a, std::span<const std::size_t> index) {
  const std::size_t c = a.cols();
  std::vector<double> out(index.size() * c);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= a.rows()) {
      throw DimensionError("select_rows: index " + std::to_string(index[r]) + " out of range for " + a.shape_str());
    }
    std::copy_n(a.data().data() + index[r] * c, c, out.data() + r * c);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t n = idx.size();
  return Tensor::make_result("select_rows", n, c, std::move(out), {a.node()},
                             [idx = std::move(idx), c](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               for (std::size_t r = 0; r < idx.size(); ++r)
                                 for (std::size_t j = 0; j < c; ++j) p.grad[idx[r] * c + j] += self.grad[r * c + j];
                             });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> cols) {
  if (cols.size() != a.rows()) {
    throw DimensionError("pick: " + std::to_string(cols.size()) + " indices for " + a.shape_str());
  }
  const std::size_t c = a.cols();
  std::vector<double> out(a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    if (cols[r] >= c) {
      throw DimensionError("pick: column " + std::to_string(cols[r]) + " out of range for " + a.shape_str());
    }
    out[r] = a.data()[r * c + cols[r]];
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return Tensor::make_result("pick", a.rows(), 1, std::move(out), {a.node()},
                             [idx = std::move(idx), c](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               for (std::size_t r = 0; r < idx.size(); ++r) p.grad[r * c + idx[r]] += self.grad[r];
                             });
}

Tensor gradient_reversal(const Tensor& a, double coeff) {
  if (coeff < 0.0) throw std::invalid_argument("gradient_reversal: coefficient must be non-negative");
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make_result("gradient_reversal", a.rows(), a.cols(), std::move(out), {a.node()},
                             [coeff](detail::Node& self) {
                               auto& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] -= coeff * self.grad[i];
                             });
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  Tensor x(point.rows(), point.cols(), std::vector<double>(point.data().begin(), point.data().end()), true);
  const Tensor y = f(x);
  if (y.size() != 1) throw RankError("grad_check: function must be scalar-valued, got " + y.shape_str());
  backward(y);
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  if (!y.requires_grad()) analytic.assign(x.size(), 0.0);

  double worst = 0.0;
  std::vector<double> probe(point.data().begin(), point.data().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(Tensor(point.rows(), point.cols(), probe)).item();
    probe[i] = orig - h;
    const double fm = f(Tensor(point.rows(), point.cols(), probe)).item();
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("grad_check: non-finite evaluation");
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace atm
