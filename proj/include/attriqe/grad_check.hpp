#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "attriqe/graph.hpp"

namespace attriqe::ad {

template <typename T>
using ScalarFunction = std::function<Var<T>(Graph<T>&, Var<T>)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Compares the reverse-mode gradient of f at `point` with five-point central differences
// of the given step, coordinate by coordinate. The per-coordinate error is
// |analytic - numeric| / max(|analytic|, |numeric|, floor); the floor keeps
// near-zero coordinates from reporting pure rounding noise as relative error.
// An empty `coordinates` list checks every coordinate.
template <typename T>
GradCheckResult grad_check(const ScalarFunction<T>& f, const Tensor<T>& point, double step,
                           double floor = 1.0, const std::vector<std::size_t>& coordinates = {});

}  // namespace attriqe::ad
