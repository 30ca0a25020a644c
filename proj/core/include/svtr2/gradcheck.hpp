#pragma once

#include <functional>
#include <string>
#include <vector>

#include "svtr2/tensor.hpp"

namespace svtr2 {

// Central-difference gradient verification, always in f64.
//
// Relative error uses denom = max(|analytic|, |numeric|, kDenomFloor); the
// floor keeps elements whose true gradient is ~0 from amplifying the ~1e-11
// noise floor of central differences on O(1) losses into spurious failures,
// while leaving real gradient bugs (which show up orders of magnitude above
// any tolerance used here) clearly visible.

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string worst;  // "input#i[j]: analytic=..., numeric=..."
  int checked = 0;    // elements compared
};

inline constexpr double kGradCheckEps = 1e-5;
inline constexpr double kDenomFloor = 1e-3;

// Evaluates `f` (a pure scalar function of the listed input tensors, built
// from tape ops) once under a tape for analytic grads, then perturbs input
// elements one at a time. `sample_cap` = 0 checks every element; otherwise a
// deterministic subset per input: first, last, the |grad|-max element, and an
// even stride over the rest.
GradCheckReport check_gradients(const std::string& name,
                                const std::function<Tensor<double>()>& f,
                                const std::vector<Tensor<double>>& inputs, double tolerance,
                                int sample_cap = 0, double eps = kGradCheckEps);

// Full verification suite: every differentiable primitive, the composed
// blocks, the sequence losses, and the whole model objective on a small
// input. Defined alongside the model so it can build real configurations.
std::vector<GradCheckReport> run_gradcheck_suite();

}  // namespace svtr2
