#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every operation is recorded on a Tape; Tape::backward walks the
// recording in reverse creation order, which is a valid topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pignn::ad {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;
  bool grad_populated = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor constant(Shape shape, double fill);
  static Tensor parameter(Shape shape, std::vector<double> values);
  /// Column vector n x 1.
  static Tensor column(std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  Shape shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  /// Mutable access for leaves only (optimizers, finite differences).
  std::span<double> mutable_values();
  double operator()(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape.cols + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad_populated; }
  /// Gradient from the last backward pass; zeros if the loss did not depend on it.
  std::span<const double> grad() const;
  void zero_grad();

  /// Value copy without history.
  Tensor detach() const;

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

using Index = std::span<const std::size_t>;

class Tape {
 public:
  /// With record == false results never require grad and nothing is kept,
  /// which is the inference mode.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Elementwise binary ops broadcast dimensions of extent 1.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor div(const Tensor& a, const Tensor& b);

  Tensor scale(const Tensor& a, double s);
  Tensor neg(const Tensor& a) { return scale(a, -1.0); }
  Tensor matmul(const Tensor& a, const Tensor& b);
  /// x * W + b with b a 1 x cols row.
  Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);
  /// Sum over columns, giving rows x 1.
  Tensor row_sum(const Tensor& a);
  Tensor max(const Tensor& a);

  Tensor sin(const Tensor& a);
  Tensor cos(const Tensor& a);
  Tensor exp(const Tensor& a);
  Tensor log(const Tensor& a);
  Tensor sqrt(const Tensor& a);
  Tensor square(const Tensor& a);
  Tensor asinh(const Tensor& a);
  Tensor leaky_relu(const Tensor& a, double slope = 0.01);

  /// Clamp with pass-through gradient inside [lo, hi] and zero outside.
  Tensor clamp(const Tensor& a, double lo, double hi);
  /// Clamp to [-bound, bound] elementwise; bound must match a's shape. When
  /// clipped the gradient flows to the bound instead.
  Tensor clamp_abs(const Tensor& a, const Tensor& bound);
  /// Angle wrap to (-pi, pi] with identity gradient.
  Tensor wrap_angle(const Tensor& a);

  Tensor concat_cols(std::span<const Tensor> parts);
  Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
  Tensor gather_rows(const Tensor& a, Index index);
  Tensor scatter_add_rows(const Tensor& a, Index index, std::size_t out_rows);
  /// Softmax over the rows that share a segment id, independently per column.
  Tensor segment_softmax(const Tensor& a, Index segment, std::size_t num_segments);

  void backward(const Tensor& loss);

 private:
  Tensor make(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
              std::function<void(detail::Node&)> backward);
  Tensor binary(const Tensor& a, const Tensor& b, char op);
  Tensor unary(const Tensor& a, double (*f)(double), double (*df)(double, double));

  bool record_;
  bool consumed_ = false;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

struct GradCheckReport {
  double max_abs_error = 0.0;
  /// max |analytic - numeric| / max(||analytic||_inf, ||numeric||_inf).
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  /// Rounding level of the difference quotient; a tensor whose absolute
  /// error stays below it passes (structurally zero gradients).
  double noise_floor = 0.0;
  bool passed = true;
};

using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;

/// Central-difference check of d f / d x at `point`.
GradCheckReport gradient_check(const ScalarFn& f, Shape shape, std::vector<double> point, double h = 1e-6,
                               double tol = 1e-5);

/// Central-difference check for several leaves at once; one report per leaf.
/// Leaf values are perturbed in place and restored.
std::vector<GradCheckReport> gradient_check(std::span<Tensor> leaves, const std::function<Tensor(Tape&)>& f,
                                            double h = 1e-6, double tol = 1e-5);

}  // namespace pignn::ad
