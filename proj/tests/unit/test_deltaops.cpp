#include <cmath>

#include "ndesc/deltaops.hpp"
#include "ndesc/errors.hpp"
#include "test_util.hpp"

using namespace ndesc;

namespace {

// Regular grid in [-1, 1]^2 with a small deterministic jitter, lifted by f.
template <class F>
Points jittered_grid(int n, double jitter, Rng& rng, F&& f) {
  Points p(n * n, 3);
  const double h = 2.0 / (n - 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = -1.0 + h * i + jitter * h * rng.uniform(-0.5, 0.5);
      const double y = -1.0 + h * j + jitter * h * rng.uniform(-0.5, 0.5);
      p.row(i * n + j) << x, y, f(x, y);
    }
  return p;
}

Points flat_points(int n, Rng& rng) {
  return jittered_grid(n, 0.3, rng, [](double, double) { return 0.0; });
}

bool interior(const Points& p, Eigen::Index i, double margin) {
  return std::abs(p(i, 0)) < 1.0 - margin && std::abs(p(i, 1)) < 1.0 - margin;
}

}  // namespace

TEST(TangentFrames, OrthonormalRightHandedTowardPlusZ) {
  Rng rng(21);
  const Points p = jittered_grid(15, 0.3, rng, [](double x, double y) { return 0.3 * x * x - 0.2 * y * y; });
  const TangentFrames f = build_tangent_frames(p, 12);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const Eigen::Vector3d e1 = f.e1.row(i), e2 = f.e2.row(i), n = f.normal.row(i);
    EXPECT_NEAR(e1.norm(), 1.0, 1e-12);
    EXPECT_NEAR(e2.norm(), 1.0, 1e-12);
    EXPECT_NEAR(e1.dot(e2), 0.0, 1e-12);
    EXPECT_NEAR(e1.dot(n), 0.0, 1e-12);
    EXPECT_NEAR(e1.cross(e2).dot(n), 1.0, 1e-12);
    EXPECT_GT(n.z(), 0.0);
  }
}

TEST(Operators, GradientOfConstantIsZero) {
  Rng rng(22);
  const Points p = jittered_grid(20, 0.3, rng, [](double x, double y) { return 0.5 * x * y + 0.2 * x * x; });
  const OperatorSet ops = build_operators(p, 20);
  const Eigen::MatrixXd g = apply_gradient(ops, Eigen::VectorXd::Ones(p.rows()));
  EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Operators, FlatLinearGradientExactInInterior) {
  Rng rng(23);
  const Points p = flat_points(25, rng);
  const OperatorSet ops = build_operators(p, 20);
  const double a = 0.7, b = -1.3;
  const Eigen::VectorXd f = a * p.col(0) + b * p.col(1) + Eigen::VectorXd::Constant(p.rows(), 0.4);
  const Eigen::MatrixXd g = apply_gradient(ops, f);
  const Eigen::Index n = p.rows();
  int checked = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!interior(p, i, 0.2)) continue;
    EXPECT_NEAR(g(i, 0), a, 1e-6);
    EXPECT_NEAR(g(n + i, 0), b, 1e-6);
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(Operators, DivergenceIsNegativeAdjointAndCurlComposesJ) {
  Rng rng(24);
  const Points p = jittered_grid(12, 0.3, rng, [](double x, double y) { return 0.2 * x * x + 0.1 * y; });
  const OperatorSet ops = build_operators(p, 16);
  const Eigen::MatrixXd g(ops.gradient), d(ops.divergence), c(ops.curl);
  EXPECT_LT((d + g.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  Eigen::MatrixXd field(2 * p.rows(), 3);
  for (Eigen::Index i = 0; i < field.size(); ++i) field.data()[i] = rng.normal();
  EXPECT_LT((apply_curl(ops, field) - apply_divergence(ops, rotate_j(field))).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((c * field - d * rotate_j(field)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Operators, RotateJIsQuarterTurn) {
  Eigen::MatrixXd v(4, 1);
  v << 1, 2, 3, 4;  // two points: (1, 3) and (2, 4)
  const Eigen::MatrixXd j = rotate_j(v);
  EXPECT_EQ(j(0, 0), -3);
  EXPECT_EQ(j(1, 0), -4);
  EXPECT_EQ(j(2, 0), 1);
  EXPECT_EQ(j(3, 0), 2);
  EXPECT_TRUE(rotate_j(rotate_j(v)) == -v);
}

TEST(Operators, LaplacianAnnihilatesConstantsAndIsNegativeSemidefinite) {
  Rng rng(25);
  const Points p = jittered_grid(14, 0.3, rng, [](double x, double y) { return 0.3 * std::sin(x + y); });
  const OperatorSet ops = build_operators(p, 20);
  EXPECT_LT(apply_laplacian(ops, Eigen::VectorXd::Ones(p.rows())).cwiseAbs().maxCoeff(), 1e-6);
  const Eigen::MatrixXd l(ops.laplacian);
  EXPECT_LT((l - l.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  for (int t = 0; t < 10; ++t) {
    Eigen::VectorXd f(p.rows());
    for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = rng.normal();
    EXPECT_LE(f.dot(l * f), 1e-10 * f.squaredNorm());
  }
}

namespace {

// (x, y) expressed in each point's tangent frame.
Eigen::MatrixXd position_field(const Points& p, const TangentFrames& frames) {
  const Eigen::Index n = p.rows();
  Eigen::MatrixXd field(2 * n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d x(p(i, 0), p(i, 1), 0.0);
    field(i, 0) = x.dot(frames.e1.row(i).transpose());
    field(n + i, 0) = x.dot(frames.e2.row(i).transpose());
  }
  return field;
}

}  // namespace

TEST(Operators, DivergenceOfPositionFieldIsTwoOnDenseGrid) {
  Rng rng(26);
  const Points p = jittered_grid(41, 0.0, rng, [](double, double) { return 0.0; });
  const OperatorSet ops = build_operators(p, 20);
  const Eigen::MatrixXd div = apply_divergence(ops, position_field(p, build_tangent_frames(p, 20)));
  int checked = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    if (!interior(p, i, 0.25)) continue;
    EXPECT_NEAR(div(i, 0), 2.0, 0.2) << "point " << i;
    ++checked;
  }
  EXPECT_GT(checked, 500);
}

TEST(Operators, DivergenceIsTwoOnAverageUnderIrregularSampling) {
  // The adjoint divergence is a weak-form operator: on irregular samples the
  // pointwise values scatter, but their interior average stays at 2.
  Rng rng(29);
  const Points p = flat_points(41, rng);
  const OperatorSet ops = build_operators(p, 20);
  const Eigen::MatrixXd div = apply_divergence(ops, position_field(p, build_tangent_frames(p, 20)));
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    if (interior(p, i, 0.25)) {
      sum += div(i, 0);
      ++count;
    }
  EXPECT_NEAR(sum / count, 2.0, 0.1);
}

TEST(Operators, ConstantFieldHasNoDivergenceOrCurlOnGrid) {
  Rng rng(30);
  const Points p = jittered_grid(41, 0.0, rng, [](double, double) { return 0.0; });
  const OperatorSet ops = build_operators(p, 20);
  Eigen::MatrixXd v(2 * p.rows(), 1);
  v.topRows(p.rows()).setConstant(0.6);
  v.bottomRows(p.rows()).setConstant(-0.8);
  const Eigen::MatrixXd div = apply_divergence(ops, v), curl = apply_curl(ops, v);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    if (!interior(p, i, 0.25)) continue;
    EXPECT_NEAR(div(i, 0), 0.0, 1e-3);
    EXPECT_NEAR(curl(i, 0), 0.0, 1e-3);
  }
}

TEST(Operators, QuadraticGradientOnDenseSampling) {
  Rng rng(31);
  const Points p = flat_points(41, rng);
  const OperatorSet ops = build_operators(p, 20);
  const Eigen::VectorXd u = p.col(0).array().square();
  const Eigen::MatrixXd g = apply_gradient(ops, u);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    if (!interior(p, i, 0.25) || std::abs(p(i, 0)) < 0.2) continue;
    EXPECT_NEAR(g(i, 0), 2.0 * p(i, 0), 0.05 * std::abs(2.0 * p(i, 0)));
  }
}

TEST(Operators, SparseProductsMatchDenseOracleAndAreLinear) {
  Rng rng(32);
  const Points p = jittered_grid(12, 0.3, rng, [](double x, double y) { return 0.2 * x * y; });
  const OperatorSet ops = build_operators(p, 12);
  const Eigen::MatrixXd g(ops.gradient);
  Eigen::VectorXd u(p.rows()), w(p.rows());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    u[i] = rng.normal();
    w[i] = rng.normal();
  }
  EXPECT_LT((apply_gradient(ops, u) - g * u).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((apply_gradient(ops, 2.0 * u - 3.0 * w) - (2.0 * apply_gradient(ops, u) - 3.0 * apply_gradient(ops, w)))
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
  const Eigen::SparseMatrix<double, Eigen::RowMajor> rows(ops.gradient);
  for (Eigen::Index r = 0; r < rows.rows(); ++r) EXPECT_LE(rows.row(r).nonZeros(), 13);
  EXPECT_THROW(apply_gradient(ops, Eigen::VectorXd::Ones(3)), ShapeError);
}

TEST(Operators, GradientMagnitudeInvariantUnderRotation) {
  Rng rng(33);
  const Points p = jittered_grid(15, 0.3, rng, [](double x, double y) { return 0.3 * x * x - 0.1 * y * y; });
  const Eigen::Matrix3d r = test::random_rotation(rng);
  const Points q = p * r.transpose();
  const Eigen::VectorXd u = (p.col(0).array() * 2.0 + p.col(1).array().sin()).matrix();
  const Eigen::MatrixXd gp = apply_gradient(build_operators(p, 16), u);
  const Eigen::MatrixXd gq = apply_gradient(build_operators(q, 16), u);
  const Eigen::Index n = p.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = std::hypot(gp(i, 0), gp(n + i, 0)), b = std::hypot(gq(i, 0), gq(n + i, 0));
    EXPECT_NEAR(a, b, 1e-5 * std::max(1.0, a));
  }
}

TEST(Operators, VectorLaplacianOfRotatedGradientConsistent) {
  Rng rng(27);
  const Points p = jittered_grid(10, 0.3, rng, [](double, double) { return 0.0; });
  const OperatorSet ops = build_operators(p, 16);
  Eigen::MatrixXd field(2 * p.rows(), 2);
  for (Eigen::Index i = 0; i < field.size(); ++i) field.data()[i] = rng.normal();
  const Eigen::MatrixXd expected = apply_gradient(ops, apply_divergence(ops, field)) -
                                   rotate_j(apply_gradient(ops, apply_curl(ops, field)));
  EXPECT_LT((apply_vector_laplacian(ops, field) - expected).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Operators, RejectsTinyNeighbourhoods) {
  Rng rng(28);
  const Points p = flat_points(5, rng);
  EXPECT_THROW(build_operators(p, 2), ConfigError);
}
