#pragma once

// Dense row-major tensors with a reverse-mode gradient tape.
//
// A Tensor is a cheap handle onto an immutable node. Ops executed while
// gradients are enabled record their inputs and a backward closure; calling
// backward() on a scalar walks that graph once and overwrites the gradient
// slot of every reachable node that requires a gradient.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

namespace nga::diff {

using Shape = std::vector<std::size_t>;

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // Rank-2 helpers; a rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  double at(std::size_t flat) const { return data()[flat]; }
  double at(std::size_t row, std::size_t col) const { return data()[row * cols() + col]; }
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Leaf-only mutation, used by optimizers and checkpoint loading.
  std::span<double> mutable_data();
  std::span<double> mutable_grad();

  // Same values, cut from the tape.
  Tensor detach() const;

  const detail::Node* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend struct Access;
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Populates dLoss/dT for every requires_grad tensor reachable from `loss`.
// Gradients are overwritten, never accumulated across calls.
void backward(const Tensor& loss);

// Elementwise; `b` may also be a row vector broadcast over the rows of a rank-2 `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

// Normalizes each row over the last axis, then applies gain and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
// Picks individual elements by flat index into a rank-1 tensor.
Tensor gather_flat(const Tensor& x, std::span<const std::size_t> flat_indices);
Tensor reshape(const Tensor& x, Shape shape);

}  // namespace nga::diff
