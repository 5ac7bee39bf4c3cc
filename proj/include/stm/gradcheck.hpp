#pragma once

#include <functional>
#include <vector>

#include "stm/graph.hpp"

namespace stm {

// Central-difference gradient verification, always in 64-bit mode; 32-bit
// differences are too noisy to certify anything.
//
// `build` must assemble a scalar-valued subgraph over the supplied leaves
// (one per input tensor, same order) and return its root. It is invoked many
// times on perturbed copies of the inputs and must be pure.
using GradCheckFn =
    std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)>;

// Returns the max over all input scalars of
//   |analytic - central_difference| / max(|analytic|, |central|, 1e-8).
// Throws if any analytic gradient is non-finite.
double grad_check(const GradCheckFn& build,
                  const std::vector<Tensor<double>>& inputs,
                  double eps = 1e-5);

}  // namespace stm
