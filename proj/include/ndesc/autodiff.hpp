#pragma once

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace ndesc::ad {

using Matrix = Eigen::MatrixXd;
using RowSparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Accumulates g into grad, allocating it on first use.
  void accumulate(Matrix g);
};

/// Handle to a node of the reverse-mode graph. Tensors are rank <= 2
/// (rows x cols); scalars are 1 x 1.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Matrix value);
  static Tensor parameter(Matrix value);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0, 0); }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  std::array<Eigen::Index, 2> shape() const { return {rows(), cols()}; }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

private:
  std::shared_ptr<Node> node_;
};

/// While alive, new ops record no graph (inference mode).
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

bool grad_enabled();

/// Runs the backward pass from a 1 x 1 loss. Gradients accumulate into leaf
/// parameters; intermediate gradients are reset first.
void backward(const Tensor& loss);

// --- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double factor);
/// a (R x C) plus a broadcast row vector (1 x C).
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Per-row normalisation to zero mean / unit variance, then gamma * x + beta
/// with gamma, beta of shape 1 x C.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor mean_rows(const Tensor& a);  // R x C -> 1 x C
/// Column-wise max over rows; ties resolve to the lowest row.
Tensor max_rows(const Tensor& a);
Tensor sum_all(const Tensor& a);     // -> 1 x 1
Tensor mean_all(const Tensor& a);    // -> 1 x 1
Tensor sum_cols(const Tensor& a);    // R x C -> R x 1
/// Each row divided by max(||row||, eps).
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
/// out.row(i) = a.row(indices[i]).
Tensor gather_rows(const Tensor& a, std::vector<int> indices);
/// Identity forward, zero gradient backward.
Tensor stop_gradient(const Tensor& a);
/// Sparse (fixed) operator times a dense tensor.
Tensor sparse_apply(std::shared_ptr<const RowSparse> op, const Tensor& x);

// Stacked tangent fields (2N x C, e1 block over e2 block).
/// Per-point, per-channel magnitude sqrt(a^2 + b^2 + eps): 2N x C -> N x C.
Tensor vec_norm(const Tensor& v, double eps = 1e-12);
/// Scales both components of every channel by gate (N x C).
Tensor vec_gate(const Tensor& v, const Tensor& gate);
/// Per-point 90 degree rotation (a, b) -> (-b, a).
Tensor vec_rotate(const Tensor& v);

}  // namespace ndesc::ad
