#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "loopformer/tensor.hpp"

namespace loopformer {

struct GradCheckEntry {
  std::string param;
  int64_t index = 0;
  double analytic = 0.0;
  double fd = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t entries = 0;
  std::vector<GradCheckEntry> failures;
  bool ok() const { return failures.empty(); }
};

// Compares the taped gradient of f() against central finite differences
// (f(p+h) - f(p-h)) / 2h entry by entry. f must rebuild its forward pass on
// every call and close over the given parameter tensors.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double h = 1e-5, double tol = 1e-4);

}  // namespace loopformer
