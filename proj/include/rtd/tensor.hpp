#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace rtd {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor of arbitrary rank. Model code works on Eigen
/// matrices directly; this type exists for named storage and I/O.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_size(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_string(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
  }
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_size(shape), T(0)) {}

  std::size_t size() const { return data.size(); }

  /// View as a matrix: rank 2 as-is, rank 1 as a single row, rank 0 as 1x1.
  Eigen::Map<const Matrix<T>> matrix() const {
    auto [r, c] = matrix_dims();
    return {data.data(), r, c};
  }
  Eigen::Map<Matrix<T>> matrix() {
    auto [r, c] = matrix_dims();
    return {data.data(), r, c};
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::pair<Eigen::Index, Eigen::Index> matrix_dims() const {
    if (shape.size() > 2) throw ShapeError("tensor: rank " + std::to_string(shape.size()) + " has no matrix view");
    if (shape.empty()) return {1, 1};
    if (shape.size() == 1) return {1, static_cast<Eigen::Index>(shape[0])};
    return {static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1])};
  }
};

template <typename Derived>
Shape shape_of(const Eigen::DenseBase<Derived>& m) {
  return {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

// ---------------------------------------------------------------------------
// Forward kernels

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_string(shape_of(a)) + " x " +
                     shape_string(shape_of(b)));
  }
  return a * b;
}

/// Softmax over each row, max-subtracted.
template <typename T>
Matrix<T> row_softmax(const Matrix<T>& x) {
  if (x.cols() == 0) throw ShapeError("row_softmax: empty last dimension");
  Matrix<T> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T peak = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - peak).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename T>
T sigmoid(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

// tanh approximation of gelu
template <typename T>
T gelu(T v) {
  constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
  const T inner = T(kAlpha) * (v + T(0.044715) * v * v * v);
  return T(0.5) * v * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_derivative(T v) {
  constexpr double kAlpha = 0.7978845608028654;
  const T inner = T(kAlpha) * (v + T(0.044715) * v * v * v);
  const T th = std::tanh(inner);
  const T dinner = T(kAlpha) * (T(1) + T(3 * 0.044715) * v * v);
  return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * dinner;
}

enum class Activation { sigmoid, gelu, tanh };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation kind);

template <typename T>
T activate(Activation kind, T v) {
  switch (kind) {
    case Activation::sigmoid: return sigmoid(v);
    case Activation::gelu: return gelu(v);
    case Activation::tanh: return std::tanh(v);
  }
  throw std::invalid_argument("activation: unknown kind");
}

template <typename T>
T activate_derivative(Activation kind, T v) {
  switch (kind) {
    case Activation::sigmoid: {
      const T s = sigmoid(v);
      return s * (T(1) - s);
    }
    case Activation::gelu: return gelu_derivative(v);
    case Activation::tanh: {
      const T t = std::tanh(v);
      return T(1) - t * t;
    }
  }
  throw std::invalid_argument("activation: unknown kind");
}

template <typename T>
Matrix<T> elementwise(Activation kind, const Matrix<T>& x) {
  return x.unaryExpr([kind](T v) { return activate(kind, v); });
}

/// Backward of elementwise: dy scaled by f'(x).
template <typename T>
Matrix<T> elementwise_backward(Activation kind, const Matrix<T>& x, const Matrix<T>& dy) {
  return dy.cwiseProduct(x.unaryExpr([kind](T v) { return activate_derivative(kind, v); }));
}

/// Per-row statistics kept for the layer-norm backward pass.
template <typename T>
struct LayerNormCache {
  Matrix<T> normalized;  // (x - mean) * inv_std
  Vector<T> inv_std;
};

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const RowVector<T>& gain, const RowVector<T>& bias, T eps,
                     LayerNormCache<T>* cache = nullptr) {
  if (x.cols() == 0) throw ShapeError("layer_norm: empty hidden dimension");
  if (gain.size() != x.cols() || bias.size() != x.cols()) {
    throw ShapeError("layer_norm: gain " + shape_string(shape_of(gain)) + " / bias " +
                     shape_string(shape_of(bias)) + " do not match input " + shape_string(shape_of(x)));
  }
  if (!(eps > T(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  const auto h = static_cast<T>(x.cols());
  Matrix<T> normalized(x.rows(), x.cols());
  Vector<T> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mean = x.row(r).sum() / h;
    auto centered = (x.row(r).array() - mean).matrix();
    const T var = centered.squaredNorm() / h;
    inv_std(r) = T(1) / std::sqrt(var + eps);
    normalized.row(r) = centered * inv_std(r);
  }
  Matrix<T> out = (normalized.array().rowwise() * gain.array()).rowwise() + bias.array();
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

/// Accumulates into dgain/dbias, returns the input gradient.
template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const LayerNormCache<T>& cache, const RowVector<T>& gain,
                              RowVector<T>& dgain, RowVector<T>& dbias) {
  dgain += dy.cwiseProduct(cache.normalized).colwise().sum();
  dbias += dy.colwise().sum();
  const Matrix<T> dxhat = dy.array().rowwise() * gain.array();
  const auto h = static_cast<T>(dy.cols());
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const T mean_d = dxhat.row(r).sum() / h;
    const T mean_dx = dxhat.row(r).dot(cache.normalized.row(r)) / h;
    dx.row(r) = cache.inv_std(r) *
                (dxhat.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

/// y = x W^T + b with W stored [out, in].
template <typename T>
Matrix<T> linear(const Matrix<T>& x, const Matrix<T>& weight, const RowVector<T>& bias) {
  if (x.cols() != weight.cols() || bias.size() != weight.rows()) {
    throw ShapeError("linear: input " + shape_string(shape_of(x)) + " against weight " +
                     shape_string(shape_of(weight)) + " and bias " + shape_string(shape_of(bias)));
  }
  Matrix<T> y = x * weight.transpose();
  y.rowwise() += bias;
  return y;
}

template <typename T>
Matrix<T> linear_backward(const Matrix<T>& x, const Matrix<T>& weight, const Matrix<T>& dy, Matrix<T>& dweight,
                          RowVector<T>& dbias) {
  dweight.noalias() += dy.transpose() * x;
  dbias += dy.colwise().sum();
  return dy * weight;
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// `loss` is evaluated at theta +/- step along each coordinate.
double grad_check(const std::function<double(const Vector<double>&)>& loss, const Vector<double>& theta,
                  const Vector<double>& analytic, double step = 1e-5);

}  // namespace rtd
