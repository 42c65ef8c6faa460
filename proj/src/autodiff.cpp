#include "ndesc/autodiff.hpp"

#include <unordered_set>

#include "ndesc/errors.hpp"

namespace ndesc::ad {

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(const Matrix& m, const char* op, const char* what) {
  // x * 0 is NaN exactly for non-finite x; the sum vectorizes, allFinite() does not.
  if (!((m.array() * 0.0).sum() == 0.0))
    throw NumericalError(std::string("non-finite ") + what + " in op '" + op + "'");
}

void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string("op '") + op + "': incompatible shapes " + std::to_string(a.rows()) +
                   "x" + std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                   std::to_string(b.cols()));
}

Tensor make(const char* op, Matrix value, std::initializer_list<Tensor> inputs,
            std::function<void(Node&)> backward) {
  check_finite(value, op, "value");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs) node->requires_grad = node->requires_grad || t.requires_grad();
    if (node->requires_grad) {
      for (const Tensor& t : inputs) node->inputs.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_many(const char* op, Matrix value, std::span<const Tensor> inputs,
                 std::function<void(Node&)> backward) {
  check_finite(value, op, "value");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs) node->requires_grad = node->requires_grad || t.requires_grad();
    if (node->requires_grad) {
      for (const Tensor& t : inputs) node->inputs.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

// Input i of `self`, if it wants a gradient.
Node* wants(Node& self, std::size_t i) {
  Node* in = self.inputs[i].get();
  return in->requires_grad ? in : nullptr;
}

}  // namespace

void Node::accumulate(Matrix g) {
  if (grad.size() == 0)
    grad = std::move(g);
  else
    grad += g;
}

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "parameter";
  node->requires_grad = true;
  return Tensor(std::move(node));
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() on a non-scalar tensor");
  return value()(0, 0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward needs a 1x1 loss");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (!n->is_leaf) n->grad.resize(0, 0);

  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf || n->grad.size() == 0 || !n->backward) continue;
    check_finite(n->grad, n->op, "gradient");
    n->backward(*n);
  }
}

// --- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  return make("matmul", a.value() * b.value(), {a, b}, [](Node& self) {
    const Matrix& av = self.inputs[0]->value;
    const Matrix& bv = self.inputs[1]->value;
    if (Node* a = wants(self, 0)) a->accumulate(self.grad * bv.transpose());
    if (Node* b = wants(self, 1)) b->accumulate(av.transpose() * self.grad);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a, b);
  return make("add", a.value() + b.value(), {a, b}, [](Node& self) {
    if (Node* a = wants(self, 0)) a->accumulate(self.grad);
    if (Node* b = wants(self, 1)) b->accumulate(self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a, b);
  return make("sub", a.value() - b.value(), {a, b}, [](Node& self) {
    if (Node* a = wants(self, 0)) a->accumulate(self.grad);
    if (Node* b = wants(self, 1)) b->accumulate(-self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a, b);
  return make("mul", a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    const Matrix& av = self.inputs[0]->value;
    const Matrix& bv = self.inputs[1]->value;
    if (Node* a = wants(self, 0)) a->accumulate(self.grad.cwiseProduct(bv));
    if (Node* b = wants(self, 1)) b->accumulate(self.grad.cwiseProduct(av));
  });
}

Tensor scale(const Tensor& a, double factor) {
  return make("scale", a.value() * factor, {a}, [factor](Node& self) {
    if (Node* a = wants(self, 0)) a->accumulate(self.grad * factor);
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a, row);
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make("add_row", std::move(out), {a, row}, [](Node& self) {
    if (Node* a = wants(self, 0)) a->accumulate(self.grad);
    if (Node* r = wants(self, 1)) r->accumulate(self.grad.colwise().sum());
  });
}

Tensor relu(const Tensor& a) {
  return make("relu", a.value().cwiseMax(0.0), {a}, [](Node& self) {
    if (Node* a = wants(self, 0))
      a->accumulate((a->value.array() > 0.0).select(self.grad, 0.0));
  });
}

Tensor sigmoid(const Tensor& a) {
  Matrix out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return make("sigmoid", std::move(out), {a}, [](Node& self) {
    if (Node* a = wants(self, 0))
      a->accumulate((self.grad.array() * self.value.array() * (1.0 - self.value.array())).matrix());
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Eigen::Index c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c) shape_error("layer_norm", x, gamma);
  if (beta.rows() != 1 || beta.cols() != c) shape_error("layer_norm", x, beta);
  const Eigen::VectorXd mean = x.value().rowwise().mean();
  Matrix centered = x.value().colwise() - mean;
  const Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(c)) + eps).rsqrt().matrix();
  Matrix normalized = inv_std.asDiagonal() * centered;
  Matrix out = (normalized.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return make("layer_norm", std::move(out), {x, gamma, beta},
              [normalized = std::move(normalized), inv_std, c](Node& self) {
                const Matrix& g = self.grad;
                const Matrix& gamma_v = self.inputs[1]->value;
                if (Node* x = wants(self, 0)) {
                  // dx = inv_std * (gy - mean(gy) - xhat * mean(gy * xhat)), gy = g * gamma
                  const Matrix gy = (g.array().rowwise() * gamma_v.row(0).array()).matrix();
                  const Eigen::VectorXd m1 = gy.rowwise().mean();
                  const Eigen::VectorXd m2 =
                      (gy.array() * normalized.array()).rowwise().sum().matrix() / static_cast<double>(c);
                  Matrix dx = gy.colwise() - m1;
                  dx -= m2.asDiagonal() * normalized;
                  x->accumulate(inv_std.asDiagonal() * dx);
                }
                if (Node* ga = wants(self, 1))
                  ga->accumulate((g.array() * normalized.array()).colwise().sum().matrix());
                if (Node* be = wants(self, 2)) be->accumulate(g.colwise().sum());
              });
}

Tensor mean_rows(const Tensor& a) {
  const auto r = static_cast<double>(a.rows());
  return make("mean_rows", a.value().colwise().mean(), {a}, [r](Node& self) {
    if (Node* a = wants(self, 0))
      a->accumulate(Matrix::Ones(a->value.rows(), 1) * (self.grad / r));
  });
}

Tensor max_rows(const Tensor& a) {
  if (a.rows() == 0) throw ShapeError("max_rows of an empty tensor");
  const Matrix& v = a.value();
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(v.cols()), 0);
  Matrix out(1, v.cols());
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < v.rows(); ++r)
      if (v(r, c) > v(best, c)) best = r;
    arg[static_cast<std::size_t>(c)] = best;
    out(0, c) = v(best, c);
  }
  return make("max_rows", std::move(out), {a}, [arg = std::move(arg)](Node& self) {
    if (Node* a = wants(self, 0)) {
      Matrix g = Matrix::Zero(a->value.rows(), a->value.cols());
      for (std::size_t c = 0; c < arg.size(); ++c)
        g(arg[c], static_cast<Eigen::Index>(c)) = self.grad(0, static_cast<Eigen::Index>(c));
      a->accumulate(g);
    }
  });
}

Tensor sum_all(const Tensor& a) {
  return make("sum_all", Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& self) {
    if (Node* a = wants(self, 0))
      a->accumulate(Matrix::Constant(a->value.rows(), a->value.cols(), self.grad(0, 0)));
  });
}

Tensor mean_all(const Tensor& a) {
  const auto n = static_cast<double>(a.value().size());
  return make("mean_all", Matrix::Constant(1, 1, a.value().mean()), {a}, [n](Node& self) {
    if (Node* a = wants(self, 0))
      a->accumulate(Matrix::Constant(a->value.rows(), a->value.cols(), self.grad(0, 0) / n));
  });
}

Tensor sum_cols(const Tensor& a) {
  return make("sum_cols", a.value().rowwise().sum(), {a}, [](Node& self) {
    if (Node* a = wants(self, 0)) a->accumulate(self.grad * Matrix::Ones(1, a->value.cols()));
  });
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  const Eigen::VectorXd norms = a.value().rowwise().norm();
  if ((norms.array() <= eps).any())
    throw NumericalError("l2_normalize_rows: zero-norm row");
  const Eigen::VectorXd inv = norms.cwiseInverse();
  Matrix out = inv.asDiagonal() * a.value();
  return make("l2_normalize_rows", out, {a}, [out, inv](Node& self) {
    if (Node* a = wants(self, 0)) {
      // d(x/|x|) = (g - y (y . g)) / |x|
      const Eigen::VectorXd dots = (self.grad.array() * out.array()).rowwise().sum().matrix();
      Matrix g = self.grad - dots.asDiagonal() * out;
      a->accumulate(inv.asDiagonal() * g);
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Tensor& t : parts) {
    if (t.rows() != rows) shape_error("concat_cols", parts[0], t);
    cols += t.cols();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const Tensor& t : parts) {
    out.middleCols(at, t.cols()) = t.value();
    offsets.push_back(at);
    at += t.cols();
  }
  return make_many("concat_cols", std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i)
      if (Node* in = wants(self, i))
        in->accumulate(self.grad.middleCols(offsets[i], in->value.cols()));
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Tensor& t : parts) {
    if (t.cols() != cols) shape_error("concat_rows", parts[0], t);
    rows += t.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const Tensor& t : parts) {
    out.middleRows(at, t.rows()) = t.value();
    offsets.push_back(at);
    at += t.rows();
  }
  return make_many("concat_rows", std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i)
      if (Node* in = wants(self, i))
        in->accumulate(self.grad.middleRows(offsets[i], in->value.rows()));
  });
}

Tensor gather_rows(const Tensor& a, std::vector<int> indices) {
  Matrix out(static_cast<Eigen::Index>(indices.size()), a.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= a.rows())
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(indices[i]);
  }
  return make("gather_rows", std::move(out), {a}, [indices = std::move(indices)](Node& self) {
    if (Node* a = wants(self, 0)) {
      Matrix g = Matrix::Zero(a->value.rows(), a->value.cols());
      for (std::size_t i = 0; i < indices.size(); ++i)
        g.row(indices[i]) += self.grad.row(static_cast<Eigen::Index>(i));
      a->accumulate(g);
    }
  });
}

Tensor stop_gradient(const Tensor& a) {
  auto node = std::make_shared<Node>();
  node->value = a.value();
  node->op = "stop_gradient";
  node->is_leaf = false;
  return Tensor(std::move(node));
}

Tensor sparse_apply(std::shared_ptr<const RowSparse> op, const Tensor& x) {
  if (op->cols() != x.rows())
    throw ShapeError("op 'sparse_apply': operator has " + std::to_string(op->cols()) +
                     " columns, input has " + std::to_string(x.rows()) + " rows");
  // Row-major operands turn each output row into a vectorized sum of input rows.
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMatrix xr = x.value();
  const RowMatrix out = (*op) * xr;
  return make("sparse_apply", Matrix(out), {x}, [op = std::move(op)](Node& self) {
    if (Node* x = wants(self, 0)) {
      const RowSparse t = op->transpose();
      const RowMatrix g = self.grad;
      const RowMatrix back = t * g;
      x->accumulate(Matrix(back));
    }
  });
}

Tensor vec_norm(const Tensor& v, double eps) {
  if (v.rows() % 2 != 0) throw ShapeError("op 'vec_norm': tangent field needs 2N rows");
  const Eigen::Index n = v.rows() / 2;
  Matrix out = (v.value().topRows(n).array().square() + v.value().bottomRows(n).array().square() + eps)
                   .sqrt()
                   .matrix();
  return make("vec_norm", out, {v}, [out, n](Node& self) {
    if (Node* v = wants(self, 0)) {
      const Matrix ratio = (self.grad.array() / out.array()).matrix();
      Matrix g(2 * n, v->value.cols());
      g.topRows(n) = ratio.cwiseProduct(v->value.topRows(n));
      g.bottomRows(n) = ratio.cwiseProduct(v->value.bottomRows(n));
      v->accumulate(g);
    }
  });
}

Tensor vec_gate(const Tensor& v, const Tensor& gate) {
  const Eigen::Index n = gate.rows();
  if (v.rows() != 2 * n || v.cols() != gate.cols()) shape_error("vec_gate", v, gate);
  Matrix out(2 * n, v.cols());
  out.topRows(n) = v.value().topRows(n).cwiseProduct(gate.value());
  out.bottomRows(n) = v.value().bottomRows(n).cwiseProduct(gate.value());
  return make("vec_gate", std::move(out), {v, gate}, [n](Node& self) {
    const Matrix& vv = self.inputs[0]->value;
    const Matrix& gv = self.inputs[1]->value;
    if (Node* v = wants(self, 0)) {
      Matrix g(2 * n, vv.cols());
      g.topRows(n) = self.grad.topRows(n).cwiseProduct(gv);
      g.bottomRows(n) = self.grad.bottomRows(n).cwiseProduct(gv);
      v->accumulate(g);
    }
    if (Node* ga = wants(self, 1))
      ga->accumulate(self.grad.topRows(n).cwiseProduct(vv.topRows(n)) +
                     self.grad.bottomRows(n).cwiseProduct(vv.bottomRows(n)));
  });
}

Tensor vec_rotate(const Tensor& v) {
  if (v.rows() % 2 != 0) throw ShapeError("op 'vec_rotate': tangent field needs 2N rows");
  const Eigen::Index n = v.rows() / 2;
  Matrix out(v.rows(), v.cols());
  out.topRows(n) = -v.value().bottomRows(n);
  out.bottomRows(n) = v.value().topRows(n);
  return make("vec_rotate", std::move(out), {v}, [n](Node& self) {
    if (Node* v = wants(self, 0)) {
      // Transpose of the rotation: (a, b) -> (b, -a).
      Matrix g(2 * n, self.grad.cols());
      g.topRows(n) = self.grad.bottomRows(n);
      g.bottomRows(n) = -self.grad.topRows(n);
      v->accumulate(g);
    }
  });
}

}  // namespace ndesc::ad
