#include "pignn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "pignn/angles.hpp"

namespace pignn::ad {

using detail::Node;

std::string Shape::str() const { return "[" + std::to_string(rows) + " x " + std::to_string(cols) + "]"; }

namespace {

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape.size())
    throw std::invalid_argument("tensor value count " + std::to_string(values.size()) + " does not match shape " +
                                shape.str());
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

[[noreturn]] void shape_error(const char* op, Shape a, Shape b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

}  // namespace

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(new_node(shape, std::move(values), false));
}

Tensor Tensor::constant(Shape shape, double fill) {
  return Tensor(new_node(shape, std::vector<double>(shape.size(), fill), false));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return Tensor(new_node(shape, std::move(values), true));
}

Tensor Tensor::column(std::vector<double> values) {
  const Shape shape{values.size(), 1};
  return constant(shape, std::move(values));
}

std::span<double> Tensor::mutable_values() {
  if (!node_->leaf) throw std::logic_error("only leaf tensors can be modified in place");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape().str());
  return node_->value[0];
}

std::span<const double> Tensor::grad() const { return node_->grad_buffer(); }

void Tensor::zero_grad() {
  node_->grad.clear();
  node_->grad_populated = false;
}

Tensor Tensor::detach() const { return constant(shape(), node_->value); }

Tensor Tape::make(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                  std::function<void(Node&)> backward) {
  bool needs = false;
  if (record_)
    for (const auto& p : parents) needs = needs || p.node_->requires_grad;
  auto node = new_node(shape, std::move(value), needs);
  node->leaf = false;
  if (needs) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward = std::move(backward);
    nodes_.push_back(node);
  }
  return Tensor(std::move(node));
}

Tensor Tape::binary(const Tensor& a, const Tensor& b, char op) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  auto compatible = [](std::size_t x, std::size_t y) { return x == y || x == 1 || y == 1; };
  if (!compatible(sa.rows, sb.rows) || !compatible(sa.cols, sb.cols)) shape_error("elementwise op", sa, sb);
  const Shape out{std::max(sa.rows, sb.rows), std::max(sa.cols, sb.cols)};
  const auto& av = a.node_->value;
  const auto& bv = b.node_->value;
  auto ia = [sa](std::size_t r, std::size_t c) { return (sa.rows == 1 ? 0 : r) * sa.cols + (sa.cols == 1 ? 0 : c); };
  auto ib = [sb](std::size_t r, std::size_t c) { return (sb.rows == 1 ? 0 : r) * sb.cols + (sb.cols == 1 ? 0 : c); };

  std::vector<double> value(out.size());
  for (std::size_t r = 0; r < out.rows; ++r) {
    for (std::size_t c = 0; c < out.cols; ++c) {
      const double x = av[ia(r, c)];
      const double y = bv[ib(r, c)];
      double z = 0.0;
      switch (op) {
        case '+': z = x + y; break;
        case '-': z = x - y; break;
        case '*': z = x * y; break;
        case '/': z = x / y; break;
      }
      value[r * out.cols + c] = z;
    }
  }
  return make(out, std::move(value), {a, b}, [=](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    for (std::size_t r = 0; r < out.rows; ++r) {
      for (std::size_t c = 0; c < out.cols; ++c) {
        const double gi = g[r * out.cols + c];
        const auto i = ia(r, c);
        const auto j = ib(r, c);
        const double x = pa.value[i];
        const double y = pb.value[j];
        double da = 0.0;
        double db = 0.0;
        switch (op) {
          case '+': da = 1.0; db = 1.0; break;
          case '-': da = 1.0; db = -1.0; break;
          case '*': da = y; db = x; break;
          case '/': da = 1.0 / y; db = -x / (y * y); break;
        }
        if (pa.requires_grad) pa.grad_buffer()[i] += gi * da;
        if (pb.requires_grad) pb.grad_buffer()[j] += gi * db;
      }
    }
  });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) { return binary(a, b, '+'); }
Tensor Tape::sub(const Tensor& a, const Tensor& b) { return binary(a, b, '-'); }
Tensor Tape::mul(const Tensor& a, const Tensor& b) { return binary(a, b, '*'); }
Tensor Tape::div(const Tensor& a, const Tensor& b) { return binary(a, b, '/'); }

Tensor Tape::scale(const Tensor& a, double s) {
  std::vector<double> value(a.values().begin(), a.values().end());
  for (auto& x : value) x *= s;
  return make(a.shape(), std::move(value), {a}, [s](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

namespace {

void matmul_into(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = ai[kk];
      const double* bk = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
}

// dA += dC * B^T ; dB += A^T * dC
void matmul_backward(const Node& self, Node& pa, Node& pb, std::size_t m, std::size_t k, std::size_t n) {
  const double* g = self.grad.data();
  if (pa.requires_grad) {
    double* ga = pa.grad_buffer().data();
    const double* b = pb.value.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b[kk * n + j];
        ga[i * k + kk] += acc;
      }
  }
  if (pb.requires_grad) {
    double* gb = pb.grad_buffer().data();
    const double* a = pa.value.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double aik = a[i * k + kk];
        for (std::size_t j = 0; j < n; ++j) gb[kk * n + j] += aik * g[i * n + j];
      }
  }
}

}  // namespace

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> value(m * n, 0.0);
  matmul_into(a.values().data(), b.values().data(), value.data(), m, k, n);
  return make({m, n}, std::move(value), {a, b},
              [=](Node& self) { matmul_backward(self, *self.parents[0], *self.parents[1], m, k, n); });
}

Tensor Tape::affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.cols() != w.rows()) shape_error("affine", x.shape(), w.shape());
  if (b.rows() != 1 || b.cols() != w.cols()) shape_error("affine bias", w.shape(), b.shape());
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  std::vector<double> value(m * n, 0.0);
  matmul_into(x.values().data(), w.values().data(), value.data(), m, k, n);
  const auto bias = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) value[i * n + j] += bias[j];
  return make({m, n}, std::move(value), {x, w, b}, [=](Node& self) {
    matmul_backward(self, *self.parents[0], *self.parents[1], m, k, n);
    auto& pb = *self.parents[2];
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
    }
  });
}

Tensor Tape::sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make({1, 1}, {s}, {a}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor Tape::mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor Tape::row_sum(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> value(r, 0.0);
  const auto av = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) value[i] += av[i * c + j];
  return make({r, 1}, std::move(value), {a}, [=](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i];
  });
}

Tensor Tape::max(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("max of empty tensor");
  const auto av = a.values();
  const auto arg = static_cast<std::size_t>(std::max_element(av.begin(), av.end()) - av.begin());
  return make({1, 1}, {av[arg]}, {a}, [arg](Node& self) { self.parents[0]->grad_buffer()[arg] += self.grad[0]; });
}

Tensor Tape::unary(const Tensor& a, double (*f)(double), double (*df)(double, double)) {
  std::vector<double> value(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < value.size(); ++i) value[i] = f(av[i]);
  return make(a.shape(), std::move(value), {a}, [df](Node& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

Tensor Tape::sin(const Tensor& a) {
  return unary(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}
Tensor Tape::cos(const Tensor& a) {
  return unary(a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}
Tensor Tape::exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
Tensor Tape::log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
Tensor Tape::sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}
Tensor Tape::asinh(const Tensor& a) {
  return unary(a, [](double x) { return std::asinh(x); }, [](double x, double) { return 1.0 / std::sqrt(1.0 + x * x); });
}
Tensor Tape::square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
Tensor Tape::wrap_angle(const Tensor& a) {
  return unary(a, [](double x) { return wrap_to_pi(x); }, [](double, double) { return 1.0; });
}

Tensor Tape::leaky_relu(const Tensor& a, double slope) {
  std::vector<double> value(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < value.size(); ++i) value[i] = av[i] > 0.0 ? av[i] : slope * av[i];
  return make(a.shape(), std::move(value), {a}, [slope](Node& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (p.value[i] > 0.0 ? 1.0 : slope);
  });
}

Tensor Tape::clamp(const Tensor& a, double lo, double hi) {
  std::vector<double> value(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < value.size(); ++i) value[i] = std::clamp(av[i], lo, hi);
  return make(a.shape(), std::move(value), {a}, [lo, hi](Node& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.value[i] >= lo && p.value[i] <= hi) g[i] += self.grad[i];
  });
}

Tensor Tape::clamp_abs(const Tensor& a, const Tensor& bound) {
  if (a.shape() != bound.shape()) shape_error("clamp_abs", a.shape(), bound.shape());
  std::vector<double> value(a.size());
  const auto av = a.values();
  const auto bv = bound.values();
  for (std::size_t i = 0; i < value.size(); ++i) value[i] = std::clamp(av[i], -bv[i], bv[i]);
  return make(a.shape(), std::move(value), {a, bound}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = pa.value[i];
      const double b = pb.value[i];
      if (x > b) {
        if (pb.requires_grad) pb.grad_buffer()[i] += self.grad[i];
      } else if (x < -b) {
        if (pb.requires_grad) pb.grad_buffer()[i] -= self.grad[i];
      } else if (pa.requires_grad) {
        pa.grad_buffer()[i] += self.grad[i];
      }
    }
  });
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts[0].shape(), p.shape());
    cols += p.cols();
  }
  std::vector<double> value(rows * cols);
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto pv = p.values();
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * w), w, value.begin() + static_cast<std::ptrdiff_t>(r * cols + offset));
    widths.push_back(w);
    offset += w;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make({rows, cols}, std::move(value), std::move(parents), [rows, cols, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& p = *self.parents[k];
      const std::size_t w = widths[k];
      if (p.requires_grad) {
        auto& g = p.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * cols + off + c];
      }
      off += w;
    }
  });
}

Tensor Tape::slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) shape_error("slice_cols", a.shape(), {a.rows(), begin + count});
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> value(rows * count);
  const auto av = a.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c) value[r * count + c] = av[r * cols + begin + c];
  return make({rows, count}, std::move(value), {a}, [=](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < count; ++c) g[r * cols + begin + c] += self.grad[r * count + c];
  });
}

Tensor Tape::gather_rows(const Tensor& a, Index index) {
  const std::size_t cols = a.cols();
  std::vector<double> value(index.size() * cols);
  const auto av = a.values();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= a.rows()) throw std::out_of_range("gather_rows index out of range");
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(index[r] * cols), cols,
                value.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make({index.size(), cols}, std::move(value), {a}, [cols, idx = std::move(idx)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) g[idx[r] * cols + c] += self.grad[r * cols + c];
  });
}

Tensor Tape::scatter_add_rows(const Tensor& a, Index index, std::size_t out_rows) {
  if (index.size() != a.rows()) shape_error("scatter_add_rows", a.shape(), {index.size(), a.cols()});
  const std::size_t cols = a.cols();
  std::vector<double> value(out_rows * cols, 0.0);
  const auto av = a.values();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= out_rows) throw std::out_of_range("scatter_add_rows index out of range");
    for (std::size_t c = 0; c < cols; ++c) value[index[r] * cols + c] += av[r * cols + c];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make({out_rows, cols}, std::move(value), {a}, [cols, idx = std::move(idx)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[idx[r] * cols + c];
  });
}

Tensor Tape::segment_softmax(const Tensor& a, Index segment, std::size_t num_segments) {
  if (segment.size() != a.rows()) shape_error("segment_softmax", a.shape(), {segment.size(), a.cols()});
  const std::size_t rows = a.rows(), cols = a.cols();
  const auto av = a.values();
  std::vector<double> value(rows * cols);
  std::vector<double> peak(num_segments * cols, -std::numeric_limits<double>::infinity());
  std::vector<double> total(num_segments * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (segment[r] >= num_segments) throw std::out_of_range("segment id out of range");
    for (std::size_t c = 0; c < cols; ++c) {
      auto& m = peak[segment[r] * cols + c];
      m = std::max(m, av[r * cols + c]);
    }
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double e = std::exp(av[r * cols + c] - peak[segment[r] * cols + c]);
      value[r * cols + c] = e;
      total[segment[r] * cols + c] += e;
    }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) value[r * cols + c] /= total[segment[r] * cols + c];

  std::vector<std::size_t> seg(segment.begin(), segment.end());
  return make({rows, cols}, std::move(value), {a}, [rows, cols, num_segments, seg = std::move(seg)](Node& self) {
    std::vector<double> dot(num_segments * cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        dot[seg[r] * cols + c] += self.grad[r * cols + c] * self.value[r * cols + c];
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const auto i = r * cols + c;
        g[i] += self.value[i] * (self.grad[i] - dot[seg[r] * cols + c]);
      }
  });
}

void Tape::backward(const Tensor& loss) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  if (consumed_) throw std::logic_error("backward already ran on this tape");
  if (loss.size() != 1) throw std::invalid_argument("backward needs a scalar loss, got shape " + loss.shape().str());
  consumed_ = true;
  if (!loss.requires_grad()) return;

  std::vector<Node*> leaves;
  std::unordered_set<Node*> seen;
  for (const auto& node : nodes_)
    for (const auto& p : node->parents)
      if (p->leaf && p->requires_grad && seen.insert(p.get()).second) leaves.push_back(p.get());
  for (auto* leaf : leaves)
    if (leaf->grad_populated)
      throw std::logic_error("gradient already populated; call zero_grad() before another backward pass");

  loss.node_->grad_buffer()[0] = 1.0;
  if (loss.node_->leaf) {
    loss.node_->grad_populated = true;
    return;
  }
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = **it;
    if (!node.grad.empty()) node.backward(node);
  }
  for (auto* leaf : leaves) {
    leaf->grad_buffer();
    leaf->grad_populated = true;
  }
}

GradCheckReport gradient_check(const ScalarFn& f, Shape shape, std::vector<double> point, double h, double tol) {
  std::vector<Tensor> leaf{Tensor::parameter(shape, std::move(point))};
  auto reports = gradient_check(leaf, [&](Tape& tape) { return f(tape, leaf[0]); }, h, tol);
  return reports.front();
}

std::vector<GradCheckReport> gradient_check(std::span<Tensor> leaves, const std::function<Tensor(Tape&)>& f,
                                            double h, double tol) {
  for (auto& leaf : leaves) leaf.zero_grad();
  double f0 = 0.0;
  {
    Tape tape;
    const auto loss = f(tape);
    f0 = loss.item();
    tape.backward(loss);
  }
  // central differences cannot resolve gradients below the rounding of f
  const double noise = 100.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f0)) / h;
  auto evaluate = [&] {
    Tape tape(false);
    return f(tape).item();
  };
  std::vector<GradCheckReport> reports;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    std::vector<double> numeric(analytic.size());
    auto values = leaf.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double fp = evaluate();
      values[i] = saved - h;
      const double fm = evaluate();
      values[i] = saved;
      numeric[i] = (fp - fm) / (2.0 * h);
    }
    GradCheckReport report;
    double scale = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
      const double err = std::abs(analytic[i] - numeric[i]);
      if (err > report.max_abs_error) {
        report.max_abs_error = err;
        report.worst_index = i;
      }
    }
    report.max_rel_error = scale > 0.0 ? report.max_abs_error / scale : report.max_abs_error;
    report.noise_floor = noise;
    report.passed = report.max_rel_error <= tol || report.max_abs_error <= noise;
    reports.push_back(report);
    leaf.zero_grad();
  }
  return reports;
}

}  // namespace pignn::ad
