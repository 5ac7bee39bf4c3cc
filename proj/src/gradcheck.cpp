#include "stm/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace stm {

namespace {

double eval(const GradCheckFn& build, const std::vector<Tensor<double>>& in) {
  Graph<double> g;
  std::vector<NodeId> leaves;
  leaves.reserve(in.size());
  for (const auto& t : in) {
    Tensor<double> copy = t;
    copy.requires_grad = false;
    leaves.push_back(g.input(std::move(copy)));
  }
  const NodeId root = build(g, leaves);
  if (g.value(root).numel() != 1)
    throw std::invalid_argument("grad_check: closure must be scalar-valued");
  return g.value(root)[0];
}

}  // namespace

double grad_check(const GradCheckFn& build,
                  const std::vector<Tensor<double>>& inputs, double eps) {
  // Analytic gradients from one taped pass.
  Graph<double> g;
  std::vector<NodeId> leaves;
  for (const auto& t : inputs) {
    Tensor<double> copy = t;
    copy.requires_grad = true;
    leaves.push_back(g.input(std::move(copy)));
  }
  const NodeId root = build(g, leaves);
  g.backward(root);

  double worst = 0.0;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    const Tensor<double>& analytic = g.grad(leaves[ti]);
    for (std::int64_t i = 0; i < inputs[ti].numel(); ++i) {
      const double a = analytic[i];
      if (!std::isfinite(a))
        throw std::runtime_error("grad_check: non-finite analytic gradient");
      const double keep = probe[ti][i];
      probe[ti][i] = keep + eps;
      const double fp = eval(build, probe);
      probe[ti][i] = keep - eps;
      const double fm = eval(build, probe);
      probe[ti][i] = keep;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace stm
