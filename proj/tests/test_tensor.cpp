#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "rtd/random.hpp"
#include "rtd/tensor.hpp"

namespace rtd {
namespace {

RowVector<double> filled(Eigen::Index n, double v) { return RowVector<double>::Constant(n, v); }

Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_NO_THROW(Tensor<float>({2, 3}, std::vector<float>(6)));
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_EQ(shape_size({}), 1u);
  EXPECT_EQ(shape_size({4, 0}), 0u);
  EXPECT_EQ(shape_string({2, 3}), "[2,3]");
}

TEST(Tensor, MatrixViewIsRowMajor) {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  auto m = t.matrix();
  EXPECT_EQ(m(0, 2), 3);
  EXPECT_EQ(m(1, 0), 4);
  Tensor<double> v({3}, {7, 8, 9});
  EXPECT_EQ(v.matrix().rows(), 1);
  EXPECT_EQ(v.matrix()(0, 1), 8);
  EXPECT_THROW(Tensor<double>({1, 1, 1}).matrix(), ShapeError);
}

TEST(Matmul, IdentityLeavesMatrix) {
  Matrix<double> eye = Matrix<double>::Identity(2, 2);
  Matrix<double> b(2, 2);
  b << 1, 2, 3, 4;
  EXPECT_EQ(matmul(eye, b), b);
}

TEST(Matmul, HandComputedProduct) {
  Matrix<double> a(2, 2), b(2, 2), expected(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  expected << 1 * 5 + 2 * 7, 1 * 6 + 2 * 8, 3 * 5 + 4 * 7, 3 * 6 + 4 * 8;
  EXPECT_EQ(matmul(a, b), expected);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Matrix<double> a(2, 3), b(2, 3);
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,3]"), msg.rfind("[2,3]")) << "both operands should be named: " << msg;
  }
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix<double> a = random_matrix(5, 7, rng), b = random_matrix(7, 3, rng);
    const Matrix<double> c = matmul(a, b);
    ASSERT_EQ(c.rows(), 5);
    ASSERT_EQ(c.cols(), 3);
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 7; ++k) s += a(i, k) * b(k, j);
        EXPECT_NEAR(c(i, j), s, 1e-6);
      }
    }
  }
}

TEST(Softmax, UniformOnEqualInputs) {
  Matrix<double> x = Matrix<double>::Zero(1, 3);
  const auto y = row_softmax(x);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(y(0, j), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Matrix<float> x(1, 2);
  x << 1000.0f, 0.0f;
  const auto y = row_softmax(x);
  EXPECT_TRUE(all_finite(y));
  EXPECT_NEAR(y(0, 0), 1.0f, 1e-6f);
  EXPECT_NEAR(y(0, 1), 0.0f, 1e-6f);
}

TEST(Softmax, MatchesScalarFormula) {
  Matrix<double> x(1, 3);
  x << 1, 2, 3;
  const auto y = row_softmax(x);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(y(0, 0), std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(y(0, 1), std::exp(2.0) / z, 1e-15);
  EXPECT_NEAR(y(0, 2), std::exp(3.0) / z, 1e-15);
}

TEST(Softmax, EmptyLastDimensionThrows) {
  Matrix<double> x(2, 0);
  EXPECT_THROW(row_softmax(x), ShapeError);
}

TEST(Softmax, RandomRowsSumToOne) {
  Rng rng(5);
  const Matrix<float> x = random_matrix(1000, 9, rng, 10.0).cast<float>();
  const auto y = row_softmax(x);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    EXPECT_NEAR(y.row(r).sum(), 1.0f, 1e-6f);
    EXPECT_GE(y.row(r).minCoeff(), 0.0f);
  }
}

TEST(Elementwise, SigmoidSymmetry) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const double x = 8.0 * rng.normal();
    EXPECT_NEAR(sigmoid(-x), 1.0 - sigmoid(x), 1e-15);
  }
}

TEST(Elementwise, SigmoidStaysInOpenInterval) {
  for (double x : {-700.0, -40.0, -1.0, 0.0, 1.0, 15.0}) {
    const double s = sigmoid(x);
    EXPECT_GT(s, 0.0) << x;
    EXPECT_LT(s, 1.0) << x;
  }
  for (float x : {-80.0f, -10.0f, 0.0f, 10.0f}) {
    EXPECT_GT(sigmoid(x), 0.0f);
    EXPECT_LT(sigmoid(x), 1.0f);
  }
}

TEST(Elementwise, GeluTanhFormula) {
  const double x = 1.0;
  const double expected = 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
  EXPECT_NEAR(gelu(1.0), expected, 1e-15);
  EXPECT_NEAR(gelu(1.0), 0.8411919906082768, 1e-12);
}

TEST(Elementwise, ParsesKindsAndRejectsUnknown) {
  EXPECT_EQ(parse_activation("sigmoid"), Activation::sigmoid);
  EXPECT_EQ(parse_activation("gelu"), Activation::gelu);
  EXPECT_EQ(parse_activation("tanh"), Activation::tanh);
  EXPECT_THROW(parse_activation("relu6"), std::invalid_argument);
  Matrix<double> x(1, 2);
  x << -1.0, 2.0;
  const auto y = elementwise(Activation::tanh, x);
  EXPECT_EQ(y(0, 0), std::tanh(-1.0));
  EXPECT_EQ(y(0, 1), std::tanh(2.0));
}

TEST(Elementwise, DerivativesMatchFiniteDifferences) {
  for (Activation kind : {Activation::sigmoid, Activation::gelu, Activation::tanh}) {
    for (double x : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
      const double h = 1e-6;
      const double numeric = (activate(kind, x + h) - activate(kind, x - h)) / (2 * h);
      EXPECT_NEAR(activate_derivative(kind, x), numeric, 1e-8) << activation_name(kind) << " at " << x;
    }
  }
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  Matrix<double> x = Matrix<double>::Constant(1, 4, 3.5);
  const RowVector<double> g = filled(4, 1.0), b = filled(4, 0.0);
  const auto y = layer_norm(x, g, b, 1e-12);
  for (int j = 0; j < 4; ++j) EXPECT_EQ(y(0, j), 0.0);
}

TEST(LayerNorm, NormalizesMeanAndVariance) {
  Matrix<double> x(1, 3);
  x << 1, 2, 3;
  const auto y = layer_norm(x, filled(3, 1.0), filled(3, 0.0), 1e-12);
  EXPECT_NEAR(y.mean(), 0.0, 1e-6);
  EXPECT_NEAR(y.array().square().mean(), 1.0, 1e-6);
}

TEST(LayerNorm, AffineAppliedAfterNormalization) {
  Rng rng(9);
  const Matrix<double> x = random_matrix(3, 5, rng);
  const auto base = layer_norm(x, filled(5, 1.0), filled(5, 0.0), 1e-12);
  const auto scaled = layer_norm(x, filled(5, 2.0), filled(5, 1.0), 1e-12);
  EXPECT_TRUE(scaled.isApprox((2.0 * base.array() + 1.0).matrix(), 1e-14));
}

TEST(LayerNorm, RejectsBadShapesAndEps) {
  Matrix<double> x(2, 3);
  x.setRandom();
  EXPECT_THROW(layer_norm(x, filled(2, 1.0), filled(3, 0.0), 1e-5), ShapeError);
  EXPECT_THROW(layer_norm(x, filled(3, 1.0), filled(4, 0.0), 1e-5), ShapeError);
  EXPECT_THROW(layer_norm(x, filled(3, 1.0), filled(3, 0.0), 0.0), std::invalid_argument);
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
  Rng rng(21);
  const Matrix<double> x = random_matrix(3, 4, rng);
  const RowVector<double> g = random_matrix(1, 4, rng), b = random_matrix(1, 4, rng);
  const Matrix<double> w = random_matrix(3, 4, rng);  // loss = sum(w .* y)
  LayerNormCache<double> cache;
  layer_norm(x, g, b, 1e-5, &cache);
  RowVector<double> dg = filled(4, 0.0), db = filled(4, 0.0);
  const Matrix<double> dx = layer_norm_backward(w, cache, g, dg, db);

  Vector<double> theta(12);
  for (int i = 0; i < 12; ++i) theta(i) = x.data()[i];
  Vector<double> analytic(12);
  for (int i = 0; i < 12; ++i) analytic(i) = dx.data()[i];
  auto loss = [&](const Vector<double>& t) {
    Matrix<double> xx = Eigen::Map<const Matrix<double>>(t.data(), 3, 4);
    return layer_norm(xx, g, b, 1e-5).cwiseProduct(w).sum();
  };
  EXPECT_LT(grad_check(loss, theta, analytic), 1e-8);
  EXPECT_TRUE(db.isApprox(w.colwise().sum(), 1e-14));
}

TEST(Linear, ForwardAndBackward) {
  Rng rng(4);
  const Matrix<double> x = random_matrix(3, 4, rng), W = random_matrix(2, 4, rng);
  const RowVector<double> b = random_matrix(1, 2, rng);
  const Matrix<double> y = linear(x, W, b);
  for (int i = 0; i < 3; ++i) {
    for (int o = 0; o < 2; ++o) EXPECT_NEAR(y(i, o), x.row(i).dot(W.row(o)) + b(o), 1e-14);
  }
  Matrix<double> dW = Matrix<double>::Zero(2, 4);
  RowVector<double> db = filled(2, 0.0);
  const Matrix<double> dy = Matrix<double>::Ones(3, 2);
  const Matrix<double> dx = linear_backward(x, W, dy, dW, db);
  EXPECT_TRUE(dx.isApprox(Matrix<double>::Ones(3, 2) * W));
  EXPECT_TRUE(dW.isApprox(dy.transpose() * x));
  EXPECT_EQ(db, RowVector<double>::Constant(2, 3.0));
  EXPECT_THROW(linear(x, Matrix<double>(W.transpose()), b), ShapeError);
}

TEST(GradCheck, QuadraticIsExact) {
  Vector<double> theta(1);
  theta << 3.0;
  Vector<double> analytic(1);
  analytic << 6.0;
  const double err = grad_check([](const Vector<double>& t) { return t(0) * t(0); }, theta, analytic);
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, DetectsWrongGradient) {
  Vector<double> theta(2);
  theta << 1.0, -2.0;
  Vector<double> analytic(2);
  analytic << 2.0, 0.0;  // second coordinate should be -4
  const double err = grad_check([](const Vector<double>& t) { return t.squaredNorm(); }, theta, analytic);
  EXPECT_NEAR(err, 4.0, 1e-6);  // |0 - (-4)| / max(1, |0|)
}

TEST(GradCheck, RejectsZeroStepAndNonFiniteLoss) {
  Vector<double> theta = Vector<double>::Ones(1), analytic = Vector<double>::Ones(1);
  auto f = [](const Vector<double>& t) { return t(0); };
  EXPECT_THROW(grad_check(f, theta, analytic, 0.0), std::invalid_argument);
  auto bad = [](const Vector<double>& t) { return t(0) > 1.0 ? std::numeric_limits<double>::infinity() : t(0); };
  EXPECT_THROW(grad_check(bad, theta, analytic), std::runtime_error);
}

}  // namespace
}  // namespace rtd
