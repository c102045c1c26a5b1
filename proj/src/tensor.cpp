#include "rtd/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace rtd {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Activation parse_activation(std::string_view name) {
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "gelu") return Activation::gelu;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::gelu: return "gelu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

double grad_check(const std::function<double(const Vector<double>&)>& loss, const Vector<double>& theta,
                  const Vector<double>& analytic, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) throw std::invalid_argument("grad_check: step must be positive");
  if (analytic.size() != theta.size()) {
    throw ShapeError("grad_check: analytic gradient has " + std::to_string(analytic.size()) +
                     " entries for " + std::to_string(theta.size()) + " parameters");
  }
  Vector<double> probe = theta;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    probe(i) = theta(i) + step;
    const double up = loss(probe);
    probe(i) = theta(i) - step;
    const double down = loss(probe);
    probe(i) = theta(i);
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("grad_check: non-finite loss at parameter " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic(i) - numeric) / std::max(1.0, std::abs(analytic(i))));
  }
  return worst;
}

}  // namespace rtd
