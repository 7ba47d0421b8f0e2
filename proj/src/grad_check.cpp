#include "attriqe/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace attriqe::ad {
namespace {

template <typename T>
double evaluate(const ScalarFunction<T>& f, const Tensor<T>& x) {
  Graph<T> g;
  auto out = f(g, g.constant(x));
  if (out.value().size() != 1) throw ContractError("grad_check: function is not scalar-valued");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

}  // namespace

template <typename T>
GradCheckResult grad_check(const ScalarFunction<T>& f, const Tensor<T>& point, double step,
                           double floor, const std::vector<std::size_t>& coordinates) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");
  if (!(floor > 0.0)) throw ContractError("grad_check: floor must be positive");
  for (T v : point.values()) {
    if (!std::isfinite(v)) throw NumericError("grad_check: point has non-finite coordinates");
  }

  Graph<T> g;
  auto x = g.variable(point);
  auto out = f(g, x);
  if (out.value().size() != 1) throw ContractError("grad_check: function is not scalar-valued");
  g.backward(out);
  const Tensor<T> analytic = g.grad(x);

  std::vector<std::size_t> coords = coordinates;
  if (coords.empty()) {
    coords.resize(point.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  }

  GradCheckResult result;
  Tensor<T> probe = point;
  for (std::size_t i : coords) {
    if (i >= point.size()) throw ContractError("grad_check: coordinate out of range");
    const T original = probe[i];
    auto at = [&](int k) {
      probe[i] = original + T(k * step);
      return evaluate(f, probe);
    };
    // Five-point central stencil: O(step^4) truncation, which matters at the
    // large steps that single precision needs.
    const double d1 = at(1) - at(-1), d2 = at(2) - at(-2);
    probe[i] = original;
    // the half-width actually applied after rounding to T
    const double h = (static_cast<double>(T(original + T(step))) -
                      static_cast<double>(T(original - T(step)))) / 2.0;
    const double numeric = (8.0 * d1 - d2) / (12.0 * h);
    const double a = analytic[i];
    if (!std::isfinite(a) || !std::isfinite(numeric)) {
      throw NumericError("grad_check: non-finite derivative at coordinate " + std::to_string(i));
    }
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    const double err = std::abs(a - numeric) / denom;
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = i;
    }
    ++result.checked;
  }
  return result;
}

template GradCheckResult grad_check<float>(const ScalarFunction<float>&, const Tensor<float>&, double,
                                          double, const std::vector<std::size_t>&);
template GradCheckResult grad_check<double>(const ScalarFunction<double>&, const Tensor<double>&,
                                           double, double, const std::vector<std::size_t>&);

}  // namespace attriqe::ad
