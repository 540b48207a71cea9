#pragma once

#include <functional>

#include "elm/tensor.hpp"

namespace elm {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Compares reverse-mode gradients of a random projection of op's output
// against central finite differences in the input. The per-component error is
// |ad - fd| / max(1, |ad|, |fd|) and max_rel_error is its maximum. step is
// the finite-difference half step.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& op, const Tensor& input,
                           double tol, uint64_t seed = 7, double step = 1e-5);

}  // namespace elm
