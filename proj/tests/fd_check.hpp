#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "ndesc/autodiff.hpp"
#include "ndesc/network.hpp"
#include "ndesc/rng.hpp"

namespace ndesc::test {

// Central finite-difference check of reverse-mode gradients. `loss` builds a
// 1 x 1 tensor from the given parameters; every parameter entry is perturbed.
struct FdResult {
  double max_rel_error = 0.0;  // over parameters: |g - g_fd| / max(|g_fd|, floor)
  bool all_zero_analytic = true;
};

inline ad::Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  ad::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline FdResult fd_check(std::vector<ad::Tensor> params, const std::function<ad::Tensor()>& loss,
                         double h = 1e-6) {
  for (auto& p : params) p.zero_grad();
  ad::backward(loss());
  FdResult result;
  for (auto& p : params) {
    const ad::Matrix analytic = p.grad().size() ? p.grad() : ad::Matrix::Zero(p.rows(), p.cols());
    ad::Matrix numeric(p.rows(), p.cols());
    {
      ad::NoGradGuard guard;
      for (Eigen::Index i = 0; i < p.value().size(); ++i) {
        const double saved = p.value().data()[i];
        p.mutable_value().data()[i] = saved + h;
        const double up = loss().item();
        p.mutable_value().data()[i] = saved - h;
        const double down = loss().item();
        p.mutable_value().data()[i] = saved;
        numeric.data()[i] = (up - down) / (2.0 * h);
      }
    }
    if (analytic.cwiseAbs().maxCoeff() != 0.0) result.all_zero_analytic = false;
    const double floor = std::max(1e-6, numeric.norm());
    result.max_rel_error = std::max(result.max_rel_error, (analytic - numeric).norm() / floor);
  }
  return result;
}

// Contracts any tensor into a scalar with fixed random weights so that every
// output entry contributes a distinct sensitivity.
inline ad::Tensor contract(const ad::Tensor& t, const ad::Matrix& weights) {
  return ad::sum_all(ad::mul(t, ad::Tensor::constant(weights)));
}

struct OpCase {
  std::string name;
  std::vector<ad::Tensor> params;
  std::function<ad::Tensor()> output;
};

// One case per differentiable op on small random shapes.
inline std::vector<OpCase> op_cases(Rng& rng) {
  using ad::Tensor;
  auto P = [&](Eigen::Index r, Eigen::Index c, double s = 1.0) { return Tensor::parameter(random_matrix(r, c, rng, s)); };
  std::vector<OpCase> cases;
  {
    auto a = P(4, 3), b = P(3, 5);
    cases.push_back({"matmul", {a, b}, [=] { return ad::matmul(a, b); }});
  }
  {
    auto a = P(3, 4), b = P(3, 4);
    cases.push_back({"add", {a, b}, [=] { return ad::add(a, b); }});
    cases.push_back({"sub", {a, b}, [=] { return ad::sub(a, b); }});
    cases.push_back({"mul", {a, b}, [=] { return ad::mul(a, b); }});
    cases.push_back({"scale", {a}, [=] { return ad::scale(a, -1.7); }});
  }
  {
    auto a = P(5, 3), row = P(1, 3);
    cases.push_back({"add_row", {a, row}, [=] { return ad::add_row(a, row); }});
  }
  {
    auto a = P(6, 4);
    cases.push_back({"relu", {a}, [=] { return ad::relu(a); }});
    cases.push_back({"sigmoid", {a}, [=] { return ad::sigmoid(a); }});
    cases.push_back({"mean_rows", {a}, [=] { return ad::mean_rows(a); }});
    cases.push_back({"max_rows", {a}, [=] { return ad::max_rows(a); }});
    cases.push_back({"sum_all", {a}, [=] { return ad::sum_all(a); }});
    cases.push_back({"mean_all", {a}, [=] { return ad::mean_all(a); }});
    cases.push_back({"sum_cols", {a}, [=] { return ad::sum_cols(a); }});
    cases.push_back({"l2_normalize_rows", {a}, [=] { return ad::l2_normalize_rows(a); }});
    cases.push_back({"gather_rows", {a}, [=] { return ad::gather_rows(a, {5, 0, 0, 3, 2}); }});
    cases.push_back({"vec_rotate", {a}, [=] { return ad::vec_rotate(a); }});
    cases.push_back({"vec_norm", {a}, [=] { return ad::vec_norm(a); }});
  }
  {
    auto x = P(5, 7), g = P(1, 7), b = P(1, 7);
    cases.push_back({"layer_norm", {x, g, b}, [=] { return ad::layer_norm(x, g, b); }});
  }
  {
    auto a = P(4, 2), b = P(4, 3), c = P(2, 2);
    cases.push_back({"concat_cols", {a, b}, [=] {
                       const std::array<Tensor, 2> parts{a, b};
                       return ad::concat_cols(parts);
                     }});
    cases.push_back({"concat_rows", {a, c}, [=] {
                       const std::array<Tensor, 2> parts{a, c};
                       return ad::concat_rows(parts);
                     }});
  }
  {
    auto v = P(8, 3), gate = P(4, 3);
    cases.push_back({"vec_gate", {v, gate}, [=] { return ad::vec_gate(v, gate); }});
  }
  {
    std::vector<Eigen::Triplet<double>> t;
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 5; ++j)
        if ((i + 2 * j) % 3 != 0) t.emplace_back(i, j, rng.normal());
    auto op = std::make_shared<ad::RowSparse>(6, 5);
    op->setFromTriplets(t.begin(), t.end());
    std::shared_ptr<const ad::RowSparse> cop = op;
    auto x = P(5, 3);
    cases.push_back({"sparse_apply", {x}, [=] { return ad::sparse_apply(cop, x); }});
  }
  return cases;
}

}  // namespace ndesc::test
