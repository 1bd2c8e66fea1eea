#include "nga/diff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_set>

#include "nga/error.hpp"

namespace nga::diff {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

}  // namespace detail

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

void check_shape(const Shape& shape, std::size_t n) {
  for (auto extent : shape) {
    if (extent == 0) fail(ErrorKind::kArgument, "tensor extents must be positive: " + shape_str(shape));
  }
  if (shape_size(shape) != n) {
    fail(ErrorKind::kArgument, "tensor shape " + shape_str(shape) + " does not match " +
                                   std::to_string(n) + " values");
  }
}

std::vector<double>& grad_of(Node& node) {
  if (node.grad.size() != node.data.size()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}

}  // namespace

struct Access {
  static const std::shared_ptr<Node>& node(const Tensor& t) {
    if (!t.node_) fail(ErrorKind::kArgument, "use of an undefined tensor");
    return t.node_;
  }
  static Tensor wrap(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

  // Builds an op result; the tape entry is only kept when some input needs a gradient.
  static Tensor result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                       std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    if (g_grad_enabled) {
      bool tracked = false;
      for (const auto& in : inputs) tracked = tracked || Access::node(in)->requires_grad;
      if (tracked) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (auto& in : inputs) node->parents.push_back(Access::node(in));
        node->backward = std::move(backward_fn);
      }
    }
    return Tensor(std::move(node));
  }
};

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape, values.size());
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return Access::node(*this)->shape; }
std::size_t Tensor::size() const { return Access::node(*this)->data.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.size() >= 2 ? s[0] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() >= 2) return size() / s[0];
  return s.empty() ? 1 : s[0];
}

std::span<const double> Tensor::data() const { return Access::node(*this)->data; }

double Tensor::item() const {
  if (size() != 1) fail(ErrorKind::kArgument, "item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return Access::node(*this)->requires_grad; }

bool Tensor::has_grad() const {
  const auto& n = Access::node(*this);
  return n->grad.size() == n->data.size();
}

std::span<const double> Tensor::grad() const { return Access::node(*this)->grad; }

void Tensor::zero_grad() {
  auto& n = *Access::node(*this);
  n.grad.assign(n.data.size(), 0.0);
}

std::span<double> Tensor::mutable_data() {
  auto& n = *Access::node(*this);
  if (n.backward) fail(ErrorKind::kContract, "mutable_data() on a non-leaf tensor");
  return n.data;
}

std::span<double> Tensor::mutable_grad() { return grad_of(*Access::node(*this)); }

Tensor Tensor::detach() const {
  const auto& n = *Access::node(*this);
  return from(n.shape, n.data, false);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// backward

void backward(const Tensor& loss) {
  const auto& root = Access::node(loss);
  if (root->data.size() != 1) {
    fail(ErrorKind::kArgument, "backward() needs a scalar loss, got shape " + shape_str(root->shape));
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order) node->grad.assign(node->data.size(), 0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

enum class Broadcast { kNone, kRow };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (a.rank() == 2 && b.size() == a.cols() && (b.rank() == 1 || b.rows() == 1)) return Broadcast::kRow;
  fail(ErrorKind::kArgument, std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                                 shape_str(b.shape()));
}

template <typename Fwd, typename GradA, typename GradB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, GradA ga, GradB gb) {
  const auto kind = broadcast_kind(a, b, op);
  const auto& ad = Access::node(a)->data;
  const auto& bd = Access::node(b)->data;
  const std::size_t n = ad.size();
  const std::size_t width = bd.size();
  std::vector<double> out(n);
  if (kind == Broadcast::kNone) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i], bd[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i], bd[i % width]);
  }
  return Access::result(a.shape(), std::move(out), {a, b}, [kind, width, ga, gb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t n = self.data.size();
    if (pa.requires_grad) {
      auto& g = grad_of(pa);
      for (std::size_t i = 0; i < n; ++i) {
        const double bv = kind == Broadcast::kNone ? pb.data[i] : pb.data[i % width];
        g[i] += self.grad[i] * ga(pa.data[i], bv);
      }
    }
    if (pb.requires_grad) {
      auto& g = grad_of(pb);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = kind == Broadcast::kNone ? i : i % width;
        g[j] += self.grad[i] * gb(pa.data[i], pb.data[j]);
      }
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& xd = Access::node(x)->data;
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  // deriv(x, y) with y the forward output.
  return Access::result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    Node& px = *self.parents[0];
    auto& g = grad_of(px);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(px.data[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    fail(ErrorKind::kArgument, "matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                   shape_str(b.shape()));
  }
  const std::size_t r = a.rows(), inner = a.cols(), c = b.cols();
  const auto& ad = Access::node(a)->data;
  const auto& bd = Access::node(b)->data;
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double* orow = out.data() + i * c;
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = ad[i * inner + k];
      const double* brow = bd.data() + k * c;
      for (std::size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
    }
  }
  return Access::result({r, c}, std::move(out), {a, b}, [r, inner, c](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const double* g = self.grad.data();
    if (pa.requires_grad) {
      auto& ga = grad_of(pa);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t k = 0; k < inner; ++k) {
          double acc = 0.0;
          const double* brow = pb.data.data() + k * c;
          const double* grow = g + i * c;
          for (std::size_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
          ga[i * inner + k] += acc;
        }
    }
    if (pb.requires_grad) {
      auto& gb = grad_of(pb);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t k = 0; k < inner; ++k) {
          const double av = pa.data[i * inner + k];
          double* gbrow = gb.data() + k * c;
          const double* grow = g + i * c;
          for (std::size_t j = 0; j < c; ++j) gbrow[j] += av * grow[j];
        }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    fail(ErrorKind::kArgument, "matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                                   shape_str(b.shape()));
  }
  const std::size_t r = a.rows(), inner = a.cols(), c = b.rows();
  const auto& ad = Access::node(a)->data;
  const auto& bd = Access::node(b)->data;
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += ad[i * inner + k] * bd[j * inner + k];
      out[i * c + j] = acc;
    }
  return Access::result({r, c}, std::move(out), {a, b}, [r, inner, c](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const double* g = self.grad.data();
    if (pa.requires_grad) {
      auto& ga = grad_of(pa);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const double gv = g[i * c + j];
          for (std::size_t k = 0; k < inner; ++k) ga[i * inner + k] += gv * pb.data[j * inner + k];
        }
    }
    if (pb.requires_grad) {
      auto& gb = grad_of(pb);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const double gv = g[i * c + j];
          for (std::size_t k = 0; k < inner; ++k) gb[j * inner + k] += gv * pa.data[i * inner + k];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) fail(ErrorKind::kArgument, "transpose needs rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.rows(), c = a.cols();
  const auto& ad = Access::node(a)->data;
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
  return Access::result({c, r}, std::move(out), {a}, [r, c](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// normalization

namespace {

struct AxisLayout {
  std::size_t outer, extent, inner;
};

AxisLayout axis_layout(const Tensor& x, std::size_t axis, const char* op) {
  const auto& s = x.shape();
  if (axis >= s.size()) {
    fail(ErrorKind::kArgument, std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                                   shape_str(s));
  }
  AxisLayout l{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto l = axis_layout(x, axis, "softmax");
  const auto& xd = Access::node(x)->data;
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.extent * l.inner + in;
      double hi = xd[base];
      for (std::size_t e = 1; e < l.extent; ++e) hi = std::max(hi, xd[base + e * l.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < l.extent; ++e) {
        const double v = std::exp(xd[base + e * l.inner] - hi);
        out[base + e * l.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < l.extent; ++e) out[base + e * l.inner] /= total;
    }
  return Access::result(x.shape(), std::move(out), {x}, [l](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.extent * l.inner + in;
        double dot = 0.0;
        for (std::size_t e = 0; e < l.extent; ++e) {
          const std::size_t idx = base + e * l.inner;
          dot += self.grad[idx] * self.data[idx];
        }
        for (std::size_t e = 0; e < l.extent; ++e) {
          const std::size_t idx = base + e * l.inner;
          g[idx] += self.data[idx] * (self.grad[idx] - dot);
        }
      }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto l = axis_layout(x, axis, "log_softmax");
  const auto& xd = Access::node(x)->data;
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.extent * l.inner + in;
      double hi = xd[base];
      for (std::size_t e = 1; e < l.extent; ++e) hi = std::max(hi, xd[base + e * l.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < l.extent; ++e) total += std::exp(xd[base + e * l.inner] - hi);
      const double lse = hi + std::log(total);
      for (std::size_t e = 0; e < l.extent; ++e) out[base + e * l.inner] = xd[base + e * l.inner] - lse;
    }
  return Access::result(x.shape(), std::move(out), {x}, [l](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.extent * l.inner + in;
        double total = 0.0;
        for (std::size_t e = 0; e < l.extent; ++e) total += self.grad[base + e * l.inner];
        for (std::size_t e = 0; e < l.extent; ++e) {
          const std::size_t idx = base + e * l.inner;
          g[idx] += self.grad[idx] - std::exp(self.data[idx]) * total;
        }
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  const std::size_t width = x.shape().back();
  if (gain.size() != width || shift.size() != width) {
    fail(ErrorKind::kArgument, "layer_norm: gain/shift width mismatch for shape " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / width;
  const auto& xd = Access::node(x)->data;
  const auto& gd = Access::node(gain)->data;
  const auto& sd = Access::node(shift)->data;
  std::vector<double> out(xd.size());
  // normalized values and inverse std kept for the backward pass
  auto normed = std::make_shared<std::vector<double>>(xd.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(width);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < width; ++j) {
      const double h = (row[j] - mu) * is;
      (*normed)[r * width + j] = h;
      out[r * width + j] = gd[j] * h + sd[j];
    }
  }
  return Access::result(x.shape(), std::move(out), {x, gain, shift},
                        [rows, width, normed, inv_std](Node& self) {
                          Node& px = *self.parents[0];
                          Node& pg = *self.parents[1];
                          Node& ps = *self.parents[2];
                          const auto& h = *normed;
                          if (pg.requires_grad) {
                            auto& g = grad_of(pg);
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < width; ++j)
                                g[j] += self.grad[r * width + j] * h[r * width + j];
                          }
                          if (ps.requires_grad) {
                            auto& g = grad_of(ps);
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < width; ++j) g[j] += self.grad[r * width + j];
                          }
                          if (px.requires_grad) {
                            auto& g = grad_of(px);
                            const double n = static_cast<double>(width);
                            for (std::size_t r = 0; r < rows; ++r) {
                              double mean_dh = 0.0, mean_dh_h = 0.0;
                              for (std::size_t j = 0; j < width; ++j) {
                                const double dh = self.grad[r * width + j] * pg.data[j];
                                mean_dh += dh;
                                mean_dh_h += dh * h[r * width + j];
                              }
                              mean_dh /= n;
                              mean_dh_h /= n;
                              for (std::size_t j = 0; j < width; ++j) {
                                const double dh = self.grad[r * width + j] * pg.data[j];
                                g[r * width + j] +=
                                    (*inv_std)[r] * (dh - mean_dh - h[r * width + j] * mean_dh_h);
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// reductions and reshaping

Tensor sum(const Tensor& x) {
  const auto& xd = Access::node(x)->data;
  double total = 0.0;
  for (double v : xd) total += v;
  return Access::result({1}, {total}, {x}, [](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) fail(ErrorKind::kArgument, "concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) fail(ErrorKind::kArgument, "concat_cols: row count mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pd = Access::node(parts[k])->data;
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(pd.data() + i * widths[k], widths[k], out.data() + i * total + offset);
    offset += widths[k];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Access::result({r, total}, std::move(out), std::move(inputs), [r, total, widths](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& p = *self.parents[k];
      if (p.requires_grad) {
        auto& g = grad_of(p);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + offset + j];
      }
      offset += widths[k];
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) fail(ErrorKind::kArgument, "concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.cols() != c) fail(ErrorKind::kArgument, "concat_rows: column count mismatch");
    rows += p.rows();
    const auto& pd = Access::node(p)->data;
    out.insert(out.end(), pd.begin(), pd.end());
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Access::result({rows, c}, std::move(out), std::move(inputs), [](Node& self) {
    std::size_t offset = 0;
    for (auto& parent : self.parents) {
      const std::size_t n = parent->data.size();
      if (parent->requires_grad) {
        auto& g = grad_of(*parent);
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t r = x.rows(), c = x.cols();
  if (count == 0 || start + count > c) fail(ErrorKind::kArgument, "slice_cols: range out of bounds");
  const auto& xd = Access::node(x)->data;
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i) std::copy_n(xd.data() + i * c + start, count, out.data() + i * count);
  return Access::result({r, count}, std::move(out), {x}, [r, c, start, count](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * c + start + j] += self.grad[i * count + j];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t r = x.rows(), c = x.cols();
  if (rows.empty()) fail(ErrorKind::kArgument, "gather_rows: empty index list");
  const auto& xd = Access::node(x)->data;
  std::vector<double> out(rows.size() * c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= r) fail(ErrorKind::kArgument, "gather_rows: row index out of range");
    std::copy_n(xd.data() + rows[i] * c, c, out.data() + i * c);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return Access::result({rows.size(), c}, std::move(out), {x}, [idx, c](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
  });
}

Tensor gather_flat(const Tensor& x, std::span<const std::size_t> flat_indices) {
  if (flat_indices.empty()) fail(ErrorKind::kArgument, "gather_flat: empty index list");
  const auto& xd = Access::node(x)->data;
  std::vector<double> out(flat_indices.size());
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    if (flat_indices[i] >= xd.size()) fail(ErrorKind::kArgument, "gather_flat: index out of range");
    out[i] = xd[flat_indices[i]];
  }
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  return Access::result({idx.size()}, std::move(out), {x}, [idx](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_shape(shape, x.size());
  std::vector<double> out(x.data().begin(), x.data().end());
  return Access::result(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace nga::diff
