#pragma once

// Dense rank-2 tensors of doubles with reverse-mode differentiation.
//
// Every operation returns a new Tensor whose node remembers its operands and
// a local backward rule. Nodes carry a creation sequence number; a backward
// pass orders the records reachable from the loss by that number, so the
// traversal is a reverse topological order by construction.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace atm {

namespace detail {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor filled(std::size_t rows, std::size_t cols, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  /// 1 × n row vector.
  static Tensor row(std::initializer_list<double> values, bool requires_grad = false);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows, bool requires_grad = false);

  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  bool empty() const { return size() == 0; }
  std::string shape_str() const;

  std::span<const double> data() const { return node_->value; }
  /// Writable storage. Only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->value; }
  double operator()(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  void zero_grad();

  /// Value copy with no history and no gradient.
  Tensor detach() const;
  std::vector<double> row_values(std::size_t r) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds a result node. The backward rule may be empty for non-differentiable results.
  static Tensor make_result(const char* op, std::size_t rows, std::size_t cols,
                            std::vector<double> value,
                            std::vector<std::shared_ptr<detail::Node>> parents,
                            std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// The ordered list of records reachable from a scalar loss.
class Tape {
 public:
  static Tape record(const Tensor& loss);

  std::size_t size() const { return records_.size(); }
  std::span<const std::shared_ptr<detail::Node>> records() const { return records_; }

  /// Runs every record's backward rule once, latest first. Intermediate
  /// gradients are reset; leaf gradients accumulate.
  void run(const Tensor& loss) const;

 private:
  std::vector<std::shared_ptr<detail::Node>> records_;
};

void backward(const Tensor& loss);

// Binary ops accept equal shapes, a 1×cols right operand (broadcast over
// rows) or a rows×1 right operand (broadcast over columns).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Natural log after clamping inputs to at least `floor`.
Tensor log(const Tensor& a, double floor = 1e-12);
Tensor square(const Tensor& a);
Tensor exp(const Tensor& a);

enum class ElementwiseOp { add, sub, mul, relu, sigmoid, log, square, exp };
Tensor elementwise(ElementwiseOp op, const Tensor& a);
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);

/// Row-wise softmax with row-max subtraction.
Tensor softmax_rows(const Tensor& a);

Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);
/// rows × 1: the sum of each row.
Tensor sum_rows(const Tensor& a);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Gathers rows by index; repeated indices scatter-add on backward.
Tensor select_rows(const Tensor& a, std::span<const std::size_t> index);
/// rows × 1: entry (i, cols[i]) of each row.
Tensor pick(const Tensor& a, std::span<const std::size_t> cols);

/// Identity forward; backward multiplies upstream gradient by -coeff.
Tensor gradient_reversal(const Tensor& a, double coeff);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double h);

}  // namespace atm
